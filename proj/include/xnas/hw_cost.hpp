#ifndef XNAS_HW_COST_HPP
#define XNAS_HW_COST_HPP

#include <array>
#include <map>
#include <string>
#include <vector>

#include "xnas/crossbar.hpp"
#include "xnas/supernet.hpp"

namespace xnas {

// Analytical per-tile cost constants. These are documented placeholders for a
// full circuit-level evaluation; results are meaningful as ratios, not as
// absolute silicon numbers.
struct CostModelConfig {
    std::map<int, double> xbar_area_mm2;    // A_xbar(n), per n x n array
    std::map<int, double> tile_energy_mj;   // read energy per tile activation
    std::map<int, double> tile_latency_ms;  // latency of one tile read
    double area_overhead = 1.2;    // ADC/DAC and peripheral multipliers
    double energy_overhead = 1.5;
    double delay_overhead = 1.0;
    double avgpool_area_mm2 = 0.0;  // peripheral-only constant for AvgPool

    static CostModelConfig defaults();
    void validate() const;
    double area(int n) const;
    double energy(int n) const;
    double latency(int n) const;
};

// phi_j lookup: slot x constituent -> area estimate in mm^2.
// phi(skip) = 0, phi(AvgPool) = avgpool_area_mm2, phi(conv) = tiles * A_xbar.
struct AreaTable {
    std::array<std::vector<double>, kSlotCount> phi;
    int crossbar_size = 0;
};

AreaTable build_area_table(const SupernetConfig& net_cfg, const CrossbarSpec& spec,
                           const CostModelConfig& cost);

// E[phi]_total = sum over slots of sum_j p_j * phi_j, differentiable in alpha.
Tensor expected_cost(const ArchParams& arch, const AreaTable& table);

// L = ce_loss + lambda * cost. lambda must be >= 0.
Tensor regularized_loss(const Tensor& ce_loss, const Tensor& cost, double lambda);

struct HardwareReport {
    struct LayerRow {
        std::string name;
        std::string block;  // stem, R-I..R-IV, classifier
        int rows = 0, cols = 0, tiles = 0;
        double area_mm2 = 0.0, energy_mj = 0.0;
        double underutil_pct = 0.0;
        bool padded = false;
    };
    struct BlockRow {
        std::string name;
        double area_mm2 = 0.0, energy_mj = 0.0, delay_ms = 0.0, edap = 0.0;
    };

    std::string arch;
    int crossbar_size = 0;
    std::vector<LayerRow> layers;
    std::vector<BlockRow> blocks;
    double area_mm2 = 0.0;
    double energy_mj = 0.0;
    double delay_ms = 0.0;
    double edap = 0.0;  // mJ * ms * mm^2
    double avg_underutilization_pct = 0.0;
};

// Cost of one derived subnet: retained convs per slot, the fixed downsampling
// convs and the classifier. Tiles of a stage run in parallel, stages run
// serially, so delay counts one tile latency per crossbar-mapped stage.
HardwareReport edap_report(const GateSet& gates, const SupernetConfig& net_cfg,
                           const CrossbarSpec& spec, const CostModelConfig& cost);

// Line-oriented key=value header plus a per-layer table.
std::string format_report(const HardwareReport& report);

}  // namespace xnas

#endif
