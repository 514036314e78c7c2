#ifndef XNAS_CLI_HPP
#define XNAS_CLI_HPP

#include <string>

#include "xnas/config.hpp"

namespace xnas {

// Command implementations shared by the binary and the tests. Each writes its
// artifacts under out_dir and returns 0 on success; failures throw.

// Two-phase supernet search. Emits checkpoint.bin, subnet.txt, search_log.csv
// and one hardware_report_n<size>.txt per configured crossbar size.
int cmd_search(const RunConfig& cfg, const std::string& out_dir);

// Crossbar-aware adversarial fine-tuning of the checkpoint's derived subnet.
// Emits checkpoint_finetuned.bin.
int cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_dir);

// Clean and PGD-n test accuracy per configured crossbar size.
// Emits eval_report.txt.
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& out_dir);

// Fixed-weight device-variation sweep over the configured sigma grid.
// Emits sweep.csv.
int cmd_sweep(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir);

}  // namespace xnas

#endif
