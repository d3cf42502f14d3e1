#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "commands.hpp"
#include "mscq/activation.hpp"
#include "mscq/error.hpp"
#include "mscq/reference.hpp"
#include "mscq/tensor_io.hpp"

namespace mscq::cli {

void add_quantize(CLI::App& app, QuantOptions& o) {
    app.add_option("-w,--weights", o.weights, "weight tensor (d_out x d_in), repeatable")->required();
    app.add_option("-x,--calib", o.calib, "calibration activations (d_in x N), one per -w")->required();
    app.add_option("-o,--output", o.outputs, "packed layer path, one per -w")->required();
    app.add_option("--report", o.report, "also write the JSON report here");
    app.add_option("--bb", o.bb, "bit budget")->check(CLI::IsMember({2, 4}));
    app.add_option("--bm", o.mab, "macro-block size");
    app.add_option("--bmu", o.mub, "micro-block size");
    app.add_option("--rb", o.row_block, "compensation block size");
    app.add_option("--sigma", o.sigma, "outlier threshold in RMS multiples");
    app.add_option("--alpha", o.alpha, "activation migration strength")->check(CLI::Range(0.0, 1.0));
    app.add_option("--lambda", o.lambda_frac, "Hessian dampening, fraction of mean diagonal");
    app.add_option("--overflow", o.overflow, "more than B_mu/2 outliers in a micro-block")
        ->check(CLI::IsMember({"demote", "error"}));
    app.add_flag("--no-compensate", o.no_compensate, "skip Hessian error compensation");
    app.add_option("--jobs", o.jobs, "layers quantized in parallel")->check(CLI::PositiveNumber);
}

QuantConfig to_quant_config(const QuantOptions& o) {
    QuantConfig c;
    c.bb = o.bb;
    c.mab = o.mab;
    c.mub = o.mub;
    c.row_block = o.row_block;
    c.sigma_mult = o.sigma;
    c.alpha = o.alpha;
    c.lambda_frac = o.lambda_frac;
    c.overflow = o.overflow == "error" ? OverflowPolicy::Error : OverflowPolicy::Demote;
    c.compensate = !o.no_compensate;
    c.validate();
    return c;
}

namespace {

struct LayerResult {
    QuantizedLayer q;
    QuantReport report;
    double sq_error = 0.0;
};

LayerResult quantize_one(const std::string& wpath, const std::string& xpath, const std::string& opath,
                         const QuantConfig& cfg) {
    Eigen::MatrixXd W = to_matrix(load_tensor(wpath));
    Eigen::MatrixXd X = to_matrix(load_tensor(xpath));
    if (X.rows() != W.cols()) throw ShapeError("calibration rows must equal weight columns: " + xpath);
    if (cfg.alpha > 0.0) {
        const auto m = smooth_migrate<double>(W, X, cfg.alpha);
        W = m.weights;
        X = unmigrate_activations<double>(X, m.factors);
        store_tensor(opath + ".smooth", to_tensor(m.factors.transpose()));
    }
    LayerResult r;
    r.q = quantize_layer(W, X, cfg, &r.report);
    write_bytes(opath, pack(r.q));
    const Eigen::MatrixXd Q = dequantize_layer(r.q);
    r.sq_error = layer_sq_error<double>(W, Q, X).sum();
    spdlog::info("{}: {} outliers, {} demoted, error {:.6g}", opath, r.report.outliers_detected,
                 r.report.outliers_demoted, r.sq_error);
    return r;
}

}  // namespace

int cmd_quantize(const QuantOptions& o, std::ostream& out) {
    if (o.weights.size() != o.calib.size() || o.weights.size() != o.outputs.size()) {
        throw ConfigError("-w, -x and -o must be given the same number of times");
    }
    const QuantConfig cfg = to_quant_config(o);
    const std::size_t n = o.weights.size();
    std::vector<LayerResult> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i] = quantize_one(o.weights[i], o.calib[i], o.outputs[i], cfg);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int jobs = std::min<int>(o.jobs, static_cast<int>(n));
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    Json report;
    report["config"] = config_json(cfg);
    report["layers"] = Json::array();
    std::vector<QuantizedLayer> layers;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = results[i];
        const auto& qr = r.report;
        Json l;
        l["output"] = o.outputs[i];
        l["d_out"] = r.q.d_out;
        l["d_in"] = r.q.d_in;
        l["ebw"] = ebw_json(compute_ebw(r.q));
        l["outlier_pct"] = qr.total_weights ? 100.0 * qr.outliers_detected / qr.total_weights : 0.0;
        l["adjacent_outlier_pct"] = qr.outliers_detected ? 100.0 * qr.adjacent_outliers / qr.outliers_detected : 0.0;
        l["outliers_detected"] = qr.outliers_detected;
        l["outliers_kept"] = qr.outliers_kept;
        l["outliers_demoted"] = qr.outliers_demoted;
        l["outlier_mubs"] = qr.outlier_mubs;
        l["mubs"] = qr.mubs;
        l["sq_error"] = r.sq_error;
        report["layers"].push_back(l);
        layers.push_back(r.q);
    }
    report["ebw_model"] = compute_ebw(layers).ebw_model;
    const std::string text = report.dump(2);
    out << text << '\n';
    if (!o.report.empty()) {
        const std::vector<std::uint8_t> bytes(text.begin(), text.end());
        write_bytes(o.report, bytes);
    }
    return 0;
}

Json config_json(const QuantConfig& c) {
    Json j;
    j["bb"] = c.bb;
    j["mab"] = c.mab;
    j["mub"] = c.mub;
    j["row_block"] = c.row_block;
    j["sigma"] = c.sigma_mult;
    j["alpha"] = c.alpha;
    j["lambda_frac"] = c.lambda_frac;
    j["overflow"] = c.overflow == OverflowPolicy::Error ? "error" : "demote";
    j["compensate"] = c.compensate;
    return j;
}

Json ebw_json(const EbwReport& r) {
    Json j;
    j["ebw_inlier"] = r.ebw_inlier;
    j["ebw_outlier"] = r.ebw_outlier;
    j["ebw_layer"] = r.ebw_layer;
    j["ebw_strict"] = r.ebw_strict;
    j["outlier_mub_pct"] = r.outlier_mub_fraction;
    return j;
}

}  // namespace mscq::cli
