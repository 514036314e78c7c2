#include "xnas/hw_cost.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace xnas {

CostModelConfig CostModelConfig::defaults() {
    CostModelConfig c;
    for (int n : {32, 64, 128}) {
        const double cells = static_cast<double>(n) * n;
        c.xbar_area_mm2[n] = cells * 1.5e-6;
        c.tile_energy_mj[n] = cells * 2.0e-9;
        c.tile_latency_ms[n] = 1.0e-4 + n * 1.0e-6;  // readout grows with column count
    }
    return c;
}

void CostModelConfig::validate() const {
    auto check = [](const std::map<int, double>& m, const char* what) {
        for (const auto& [n, v] : m)
            if (!(v > 0.0))
                throw std::invalid_argument(std::string("CostModelConfig: ") + what +
                                            " must be positive");
    };
    check(xbar_area_mm2, "xbar_area_mm2");
    check(tile_energy_mj, "tile_energy_mj");
    check(tile_latency_ms, "tile_latency_ms");
    if (!(area_overhead > 0.0) || !(energy_overhead > 0.0) || !(delay_overhead > 0.0))
        throw std::invalid_argument("CostModelConfig: overhead multipliers must be positive");
    if (avgpool_area_mm2 < 0.0)
        throw std::invalid_argument("CostModelConfig: avgpool area must be >= 0");
}

namespace {
double lookup(const std::map<int, double>& m, int n, const char* what) {
    auto it = m.find(n);
    if (it == m.end())
        throw std::invalid_argument(std::string("CostModelConfig: no ") + what +
                                    " entry for crossbar size " + std::to_string(n));
    return it->second;
}
}  // namespace

double CostModelConfig::area(int n) const { return lookup(xbar_area_mm2, n, "area"); }
double CostModelConfig::energy(int n) const { return lookup(tile_energy_mj, n, "energy"); }
double CostModelConfig::latency(int n) const { return lookup(tile_latency_ms, n, "latency"); }

AreaTable build_area_table(const SupernetConfig& net_cfg, const CrossbarSpec& spec,
                           const CostModelConfig& cost) {
    net_cfg.validate();
    spec.validate();
    cost.validate();
    AreaTable table;
    table.crossbar_size = spec.size;
    const double a_tile = cost.area(spec.size) * cost.area_overhead;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        const auto& kinds = slot_constituents(slot);
        table.phi[slot].reserve(kinds.size());
        for (OpKind kind : kinds) {
            switch (kind) {
                case OpKind::skip:
                    table.phi[slot].push_back(0.0);
                    break;
                case OpKind::avgpool:
                    table.phi[slot].push_back(cost.avgpool_area_mm2);
                    break;
                default: {
                    const auto mapping =
                        reshape_and_tile("slot" + std::to_string(slot),
                                         net_cfg.slot_conv_shape(slot, kind), spec);
                    table.phi[slot].push_back(mapping.tile_count() * a_tile);
                }
            }
        }
    }
    return table;
}

Tensor expected_cost(const ArchParams& arch, const AreaTable& table) {
    Tensor total;
    for (int slot = 0; slot < kSlotCount; ++slot) {
        if (static_cast<int>(table.phi[slot].size()) != slot_constituent_count(slot))
            throw std::invalid_argument("expected_cost: table does not cover slot " +
                                        std::to_string(slot));
        Tensor p = softmax(arch.alpha[slot]);
        Tensor phi = Tensor::from_data({slot_constituent_count(slot)}, table.phi[slot]);
        Tensor contrib = sum(mul(p, phi));
        total = total.defined() ? add(total, contrib) : contrib;
    }
    return total;
}

Tensor regularized_loss(const Tensor& ce_loss, const Tensor& cost, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("regularized_loss: lambda must be >= 0");
    return add(ce_loss, mul_scalar(cost, lambda));
}

namespace {

struct Accum {
    double area = 0.0, energy = 0.0, delay = 0.0;
};

const char* kBlockNames[6] = {"stem", "R-I", "R-II", "R-III", "R-IV", "classifier"};

}  // namespace

HardwareReport edap_report(const GateSet& gates, const SupernetConfig& net_cfg,
                           const CrossbarSpec& spec, const CostModelConfig& cost) {
    net_cfg.validate();
    spec.validate();
    cost.validate();

    HardwareReport report;
    report.arch = serialize_arch(gates);
    report.crossbar_size = spec.size;

    const double a_tile = cost.area(spec.size) * cost.area_overhead;
    const double e_tile = cost.energy(spec.size) * cost.energy_overhead;
    const double l_stage = cost.latency(spec.size) * cost.delay_overhead;

    std::map<std::string, Accum> per_block;
    std::vector<LayerMapping> padded_mappings;

    // one serial stage per group of parallel tiles (a slot's retained convs,
    // a downsampling conv, or the classifier)
    auto add_stage = [&](const std::string& block,
                         const std::vector<std::pair<std::string, std::vector<int>>>& convs) {
        bool any = false;
        for (const auto& [name, shape] : convs) {
            const LayerMapping m = reshape_and_tile(name, shape, spec);
            HardwareReport::LayerRow row;
            row.name = name;
            row.block = block;
            row.rows = m.rows;
            row.cols = m.cols;
            row.tiles = m.tile_count();
            row.area_mm2 = m.tile_count() * a_tile;
            row.energy_mj = m.tile_count() * e_tile;
            row.underutil_pct = underutilization(m);
            row.padded = m.needs_padding();
            report.layers.push_back(row);
            padded_mappings.push_back(m);
            per_block[block].area += row.area_mm2;
            per_block[block].energy += row.energy_mj;
            any = true;
        }
        if (any) per_block[block].delay += l_stage;
    };

    auto slot_convs = [&](int slot) {
        std::vector<std::pair<std::string, std::vector<int>>> convs;
        const auto& kinds = slot_constituents(slot);
        for (std::size_t j = 0; j < kinds.size(); ++j) {
            if (!gates[slot][j]) continue;
            if (kinds[j] != OpKind::conv3x3 && kinds[j] != OpKind::conv5x5) continue;
            convs.emplace_back("slot" + std::to_string(slot) + "." + op_kind_name(kinds[j]),
                               net_cfg.slot_conv_shape(slot, kinds[j]));
        }
        return convs;
    };

    add_stage("stem", slot_convs(0));
    for (int b = 0; b < 4; ++b) {
        const std::string block = kBlockNames[b + 1];
        add_stage(block, slot_convs(2 * b + 1));
        add_stage(block, slot_convs(2 * b + 2));
        if (b < 3)
            add_stage(block, {{"down" + std::to_string(b + 1),
                               {net_cfg.block_width(b + 1), net_cfg.block_width(b), 3, 3}}});
    }
    add_stage("classifier", {{"fc", {net_cfg.classes, net_cfg.fc_in_features()}}});

    for (const char* name : kBlockNames) {
        const Accum& acc = per_block[name];
        HardwareReport::BlockRow row;
        row.name = name;
        row.area_mm2 = acc.area;
        row.energy_mj = acc.energy;
        row.delay_ms = acc.delay;
        row.edap = acc.area * acc.energy * acc.delay;
        report.blocks.push_back(row);
        report.area_mm2 += acc.area;
        report.energy_mj += acc.energy;
        report.delay_ms += acc.delay;
    }
    report.edap = report.energy_mj * report.delay_ms * report.area_mm2;
    report.avg_underutilization_pct = average_underutilization(padded_mappings);
    return report;
}

std::string format_report(const HardwareReport& r) {
    std::ostringstream os;
    os.precision(12);
    os << "arch=" << r.arch << "\n";
    os << "crossbar_size=" << r.crossbar_size << "\n";
    os << "area_mm2=" << r.area_mm2 << "\n";
    os << "energy_mj=" << r.energy_mj << "\n";
    os << "delay_ms=" << r.delay_ms << "\n";
    os << "edap_mj_ms_mm2=" << r.edap << "\n";
    os << "avg_underutilization_pct=" << r.avg_underutilization_pct << "\n";
    for (const auto& b : r.blocks)
        os << "block." << b.name << ".edap=" << b.edap << "\n";
    os << "layer_table=name,block,rows,cols,tiles,area_mm2,energy_mj,underutil_pct\n";
    for (const auto& l : r.layers)
        os << l.name << "," << l.block << "," << l.rows << "," << l.cols << "," << l.tiles << ","
           << l.area_mm2 << "," << l.energy_mj << "," << l.underutil_pct << "\n";
    return os.str();
}

}  // namespace xnas
