#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "mscq/activation.hpp"
#include "mscq/cli.hpp"
#include "mscq/error.hpp"
#include "mscq/fixtures.hpp"
#include "mscq/reference.hpp"
#include "mscq/synth.hpp"
#include "mscq/tensor_io.hpp"

namespace mscq::cli {

void add_verify(CLI::App& app, VerifyOptions& o) {
    app.add_option("-q,--layer", o.layer, "packed layer")->required();
    app.add_option("-w,--weights", o.weights, "original weight tensor")->required();
    app.add_option("-x,--calib", o.calib, "calibration activations")->required();
}

namespace {

struct Checks {
    Json list = Json::array();
    bool ok = true;

    void add(const std::string& name, bool passed, const std::string& detail = {}) {
        Json c;
        c["name"] = name;
        c["passed"] = passed;
        if (!detail.empty()) c["detail"] = detail;
        list.push_back(c);
        ok = ok && passed;
        if (!passed) spdlog::warn("check {} failed {}", name, detail);
    }
};

bool prune_counts_hold(const QuantizedLayer& q, std::string& detail) {
    for (std::size_t i = 0; i < q.blocks.size(); ++i) {
        const auto& b = q.blocks[i];
        int lower = 0;
        int upper = 0;
        for (int s = 0; s < q.cfg.mub; ++s) {
            lower += b.role(s) == SlotRole::Lower;
            upper += b.role(s) == SlotRole::Upper;
        }
        const bool flagged = q.identifiers[i] != 0;
        const bool good = flagged ? (b.outlier_count >= 1 && b.outlier_count <= q.cfg.mub / 2 &&
                                     lower == b.outlier_count && upper == b.outlier_count)
                                  : (lower == 0 && upper == 0);
        if (!good) {
            detail = "micro-block " + std::to_string(i);
            return false;
        }
    }
    return true;
}

}  // namespace

int cmd_verify(const VerifyOptions& o, std::ostream& out) {
    Checks checks;
    Json j;
    const auto bytes = read_bytes(o.layer);
    QuantizedLayer q;
    try {
        q = unpack(bytes);
        checks.add("format", true);
    } catch (const FormatError& e) {
        checks.add(e.check(), false, e.what());
        j["checks"] = checks.list;
        j["passed"] = false;
        out << j.dump(2) << '\n';
        return kExitVerifyFailed;
    }
    checks.add("round-trip", pack(q) == bytes);
    std::string detail;
    checks.add("prune-count", prune_counts_hold(q, detail), detail);

    Eigen::MatrixXd W = to_matrix(load_tensor(o.weights));
    Eigen::MatrixXd X = to_matrix(load_tensor(o.calib));
    if (W.rows() != q.d_out || W.cols() != q.d_in || X.rows() != W.cols()) {
        throw ShapeError("weights or calibration do not match the packed layer");
    }
    if (q.cfg.alpha > 0.0) {
        const auto m = smooth_migrate<double>(W, X, q.cfg.alpha);
        W = m.weights;
        X = unmigrate_activations<double>(X, m.factors);
    }
    const QuantizedLayer ref = quantize_layer(W, X, q.cfg);
    checks.add("identifier-consistency", ref.identifiers == q.identifiers);
    bool perms = true;
    bool scales = ref.i_sf == q.i_sf;
    bool codes = true;
    for (std::size_t i = 0; i < q.blocks.size(); ++i) {
        perms = perms && ref.blocks[i].perm == q.blocks[i].perm;
        scales = scales && ref.blocks[i].mx_scale == q.blocks[i].mx_scale;
        codes = codes && ref.blocks[i].codes == q.blocks[i].codes;
    }
    checks.add("perm-integrity", perms);
    checks.add("scale-match", scales);
    checks.add("payload-match", codes);

    try {
        const double err = layer_sq_error<double>(W, dequantize_layer(q), X).sum();
        const double ref_err = layer_sq_error<double>(W, dequantize_layer(ref), X).sum();
        j["sq_error"] = err;
        j["sq_error_requantized"] = ref_err;
        checks.add("error-match", err == ref_err);
    } catch (const FormatError& e) {
        checks.add(e.check(), false, e.what());
    }
    j["checks"] = checks.list;
    j["passed"] = checks.ok;
    out << j.dump(2) << '\n';
    return checks.ok ? kExitOk : kExitVerifyFailed;
}

void add_synth(CLI::App& app, SynthOptions& o) {
    app.add_option("--kind", o.kind, "workload")->check(CLI::IsMember({"gaussian", "planted", "zeros", "walkthrough"}));
    app.add_option("-o,--prefix", o.prefix, "output path prefix")->required();
    app.add_option("--rows", o.rows, "output channels");
    app.add_option("--cols", o.cols, "input channels");
    app.add_option("--tokens", o.tokens, "calibration tokens");
    app.add_option("--bmu", o.mub, "micro-block size for planted outliers");
    app.add_option("--outlier-mubs", o.outlier_mubs, "percent of micro-blocks given an outlier");
    app.add_option("--seed", o.seed, "RNG seed");
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
    if (o.rows < 1 || o.cols < 1 || o.tokens < 1) throw ShapeError("synthetic dimensions must be positive");
    Json j;
    j["kind"] = o.kind;
    j["seed"] = o.seed;
    if (o.kind == "walkthrough") {
        const std::string layer = o.prefix + ".mscq";
        const std::string acts = o.prefix + "_a.bin";
        write_bytes(layer, pack(walkthrough_layer()));
        store_tensor(acts, to_tensor(dequantize(walkthrough_acts())));
        j["layer"] = layer;
        j["acts"] = acts;
    } else {
        Eigen::MatrixXd W;
        if (o.kind == "gaussian") {
            W = synth_gaussian(o.rows, o.cols, o.seed);
        } else if (o.kind == "planted") {
            W = synth_planted_mubs(o.rows, o.cols, o.mub, o.outlier_mubs, o.seed);
        } else {
            W = Eigen::MatrixXd::Zero(o.rows, o.cols);
        }
        const std::string wpath = o.prefix + "_w.bin";
        const std::string xpath = o.prefix + "_x.bin";
        store_tensor(wpath, to_tensor(W));
        store_tensor(xpath, to_tensor(synth_gaussian(o.cols, o.tokens, o.seed + 1)));
        j["weights"] = wpath;
        j["calib"] = xpath;
    }
    out << j.dump(2) << '\n';
    return 0;
}

}  // namespace mscq::cli
