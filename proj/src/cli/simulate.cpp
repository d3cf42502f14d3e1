#include <spdlog/spdlog.h>

#include <fstream>

#include "commands.hpp"
#include "mscq/activation.hpp"
#include "mscq/error.hpp"
#include "mscq/tensor_io.hpp"

namespace mscq::cli {

using namespace simsa;

void add_simulate(CLI::App& app, SimOptions& o) {
    app.add_option("-q,--layer", o.layer, "packed layer")->required();
    app.add_option("-a,--acts", o.acts, "activation tensor (d_in x tokens)")->required();
    app.add_option("-o,--output", o.output, "output tensor (d_out x tokens)");
    app.add_option("--stats", o.stats, "also write stats JSON here");
    app.add_option("--trace", o.trace, "per-event trace CSV");
    app.add_option("--mode", o.mode, "PE precision mode")->check(CLI::IsMember({"2b", "4b"}));
    app.add_option("--rows", o.rows, "PE array rows");
    app.add_option("--cols", o.cols, "PE array columns");
    app.add_option("--num-recon", o.num_recon, "ReCoN units");
    app.add_option("--frac-bits", o.frac_bits, "accumulator fractional bits");
    app.add_option("--act-bits", o.act_bits, "activation width")->check(CLI::IsMember({4, 8}));
    app.add_option("--out-bits", o.out_bits, "requantize outputs (0 keeps raw sums)")
        ->check(CLI::IsMember({0, 4, 8}));
}

Json stats_json(const SimStats& s) {
    Json j;
    j["total_cycles"] = s.total_cycles;
    j["recon_accesses"] = s.recon_accesses;
    j["recon_conflicts"] = s.recon_conflicts;
    j["conflict_pct"] = s.conflict_pct;
    j["pe_mac_count"] = s.pe_mac_count;
    j["utilization"] = s.utilization;
    j["saturations"] = s.saturations;
    j["tiles"] = s.tiles;
    j["recon_passes"] = s.recon_passes;
    j["switches_per_unit"] = s.switches_per_unit;
    return j;
}

int cmd_simulate(const SimOptions& o, std::ostream& out) {
    SimConfig cfg;
    cfg.rows = o.rows;
    cfg.cols = o.cols;
    cfg.mode = o.mode == "2b" ? Mode::Mode2b : Mode::Mode4b;
    cfg.num_recon = o.num_recon;
    cfg.frac_bits = o.frac_bits;
    cfg.validate();

    const QuantizedLayer q = unpack(read_bytes(o.layer));
    const ActQuant a = quantize_activations(to_matrix(load_tensor(o.acts)), o.act_bits);
    const bool tracing = !o.trace.empty();
    const SimResult r = simulate_gemm(q, a, cfg, tracing);
    spdlog::info("{} cycles, {} ReCoN accesses", r.stats.total_cycles, r.stats.recon_accesses);

    Eigen::MatrixXd values = r.values();
    if (o.out_bits != 0) values = dequantize(post_process(r, q, a, o.out_bits).out);
    if (!o.output.empty()) store_tensor(o.output, to_tensor(values));
    if (tracing) {
        std::ofstream f(o.trace);
        if (!f) throw IoError("cannot write " + o.trace);
        f << "cycle,tile,row,token,event\n";
        for (const auto& e : r.trace) f << e.cycle << ',' << e.tile << ',' << e.row << ',' << e.token << ',' << e.event << '\n';
    }

    Json j;
    j["stats"] = stats_json(r.stats);
    j["accumulator_exp"] = r.e0;
    j["d_out"] = values.rows();
    j["tokens"] = values.cols();
    // Small results are echoed so a run can be checked without a tensor reader.
    if (values.size() <= 256) {
        Json rows = Json::array();
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
            Json row = Json::array();
            for (Eigen::Index t = 0; t < values.cols(); ++t) row.push_back(values(i, t));
            rows.push_back(row);
        }
        j["outputs"] = rows;
    }
    const std::string text = j.dump(2);
    out << text << '\n';
    if (!o.stats.empty()) write_bytes(o.stats, std::vector<std::uint8_t>(text.begin(), text.end()));
    return 0;
}

int cmd_inspect(const std::string& layer, std::ostream& out) {
    const QuantizedLayer q = unpack(read_bytes(layer));
    const auto off = section_offsets(q);
    long outliers = 0;
    for (const auto& b : q.blocks) outliers += b.outlier_count;
    Json j;
    j["d_out"] = q.d_out;
    j["d_in"] = q.d_in;
    j["d_in_padded"] = q.d_in_padded;
    j["config"] = config_json(q.cfg);
    j["mubs"] = q.blocks.size();
    j["flagged_mubs"] = std::count(q.identifiers.begin(), q.identifiers.end(), 1);
    j["outliers"] = outliers;
    j["ebw"] = ebw_json(compute_ebw(q));
    j["sections"] = {{"payload", off.payload},         {"identifiers", off.identifiers}, {"i_sf", off.i_sf},
                     {"mx_scale", off.mx_scale},       {"perm", off.perm},               {"end", off.end}};
    out << j.dump(2) << '\n';
    return 0;
}

}  // namespace mscq::cli
