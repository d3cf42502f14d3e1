#pragma once

// Independent slow implementations used as test oracles.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mscq/mxfmt.hpp"
#include "mscq/quantizer.hpp"

namespace oracle {

/// Smallest integer e with max|v| / 2^e <= max_repr, by linear search.
inline int pot_exp(const std::vector<double>& v, double max_repr) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    if (m == 0.0) return 0;
    for (int e = -200; e < 200; ++e) {
        if (m / std::pow(2.0, e) <= max_repr) return e;
    }
    return 200;
}

/// Every positive value of an FP layout (all exponent fields, all mantissas).
struct FpPoint {
    int exp_field;
    int mantissa;
    double value;
};

inline std::vector<FpPoint> fp_points(mscq::FpLayout layout) {
    const auto info = mscq::layout_info(layout);
    std::vector<FpPoint> pts;
    for (int e = 0; e < (1 << info.exp_bits); ++e) {
        for (int m = 0; m < (1 << info.man_bits); ++m) {
            pts.push_back({e, m, (1.0 + m / std::pow(2.0, info.man_bits)) * std::pow(2.0, e - info.bias)});
        }
    }
    return pts;
}

/// Nearest point by exhaustive search; ties go to the larger value with an even mantissa.
inline FpPoint nearest_point(double mag, const std::vector<FpPoint>& pts) {
    FpPoint best = pts.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
        const double d = std::abs(p.value - mag);
        if (d < best_d || (d == best_d && p.mantissa % 2 == 0)) {
            best = p;
            best_d = d;
        }
    }
    return best;
}

struct FpResult {
    int level1 = 0;  ///< before bias folding
    int mu_x = 0;
    std::vector<int> signs;
    std::vector<int> mantissas;
    std::vector<double> decoded;  ///< in the units of the input values
};

/// Brute-force MX-FP block quantizer: per-element nearest code picks the shared
/// exponent, then every element takes its nearest mantissa on that exponent.
inline FpResult fp_block(const std::vector<double>& v, mscq::FpLayout layout) {
    const auto info = mscq::layout_info(layout);
    const auto pts = fp_points(layout);
    double maxv = 0.0;
    for (const auto& p : pts) maxv = std::max(maxv, p.value);
    FpResult r;
    r.level1 = pot_exp(v, maxv);
    const double s = std::pow(2.0, r.level1);
    for (double x : v) r.mu_x = std::max(r.mu_x, nearest_point(std::abs(x) / s, pts).exp_field);
    std::vector<FpPoint> grid;
    for (const auto& p : pts) {
        if (p.exp_field == r.mu_x) grid.push_back(p);
    }
    for (double x : v) {
        const auto p = nearest_point(std::abs(x) / s, grid);
        r.signs.push_back(x < 0 ? 1 : 0);
        r.mantissas.push_back(p.mantissa);
        r.decoded.push_back((x < 0 ? -1.0 : 1.0) * p.value * s);
    }
    (void)info;
    return r;
}

/// Unblocked reference of the layer quantizer. Compensation uses the explicit
/// inverse-Hessian downdate after every column instead of a Cholesky factor,
/// and every quantity is recomputed from scratch. Returns the dequantized
/// d_out x d_in_padded matrix.
inline Eigen::MatrixXd quantize_layer(const Eigen::MatrixXd& W_in, const Eigen::MatrixXd& h_inv_in,
                                      const mscq::QuantConfig& cfg) {
    const int d_out = static_cast<int>(W_in.rows());
    const int d_in = static_cast<int>(W_in.cols());
    const int padded = (d_in + cfg.mab - 1) / cfg.mab * cfg.mab;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d_out, padded);
    W.leftCols(d_in) = W_in;
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(padded, padded);
    Hinv.topLeftCorner(d_in, d_in) = h_inv_in;
    const Eigen::VectorXd diag0 = Hinv.diagonal();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(d_out, padded);

    const int qmax = (1 << (cfg.bb - 1)) - 1;
    const auto layout = cfg.bb == 2 ? mscq::FpLayout::E1M2 : mscq::FpLayout::E3M4;
    std::vector<int> isf(d_out);
    std::vector<std::vector<int>> is_out(d_out, std::vector<int>(padded, 0));
    std::vector<std::vector<int>> fixed(d_out, std::vector<int>(padded, 0));  // slot value fixed at micro-block start

    for (int j = 0; j < padded; ++j) {
        for (int r = 0; r < d_out; ++r) {
            if (j % cfg.mab == 0) {
                const int real = std::clamp(d_in - j, 0, cfg.mab);
                double sq = 0.0;
                for (int i = 0; i < real; ++i) sq += W(r, j + i) * W(r, j + i);
                const double thr = cfg.sigma_mult * std::sqrt(sq / real);
                std::vector<double> inl;
                for (int i = 0; i < real; ++i) {
                    const bool o = std::abs(W(r, j + i)) > thr;
                    is_out[r][j + i] = o;
                    if (!o) inl.push_back(W(r, j + i));
                }
                isf[r] = pot_exp(inl, qmax);
            }
            if (j % cfg.mub == 0) {
                std::vector<int> outl;
                for (int i = 0; i < cfg.mub; ++i) {
                    if (is_out[r][j + i]) outl.push_back(i);
                }
                if (static_cast<int>(outl.size()) > cfg.mub / 2) {
                    std::stable_sort(outl.begin(), outl.end(),
                                     [&](int a, int b) { return std::abs(W(r, j + a)) > std::abs(W(r, j + b)); });
                    for (std::size_t i = cfg.mub / 2; i < outl.size(); ++i) is_out[r][j + outl[i]] = 0;
                    outl.resize(cfg.mub / 2);
                    std::sort(outl.begin(), outl.end());
                }
                const int n = static_cast<int>(outl.size());
                if (n > 0) {
                    std::vector<std::pair<double, int>> sal;
                    for (int i = 0; i < cfg.mub; ++i) {
                        if (!is_out[r][j + i]) sal.emplace_back(W(r, j + i) * W(r, j + i) / diag0(j + i), i);
                    }
                    std::sort(sal.begin(), sal.end());
                    std::vector<double> vals;
                    for (int i : outl) vals.push_back(W(r, j + i) * std::pow(2.0, isf[r]));
                    const auto fp = fp_block(vals, layout);
                    for (int k = 0; k < n; ++k) {
                        Q(r, j + outl[k]) = fp.decoded[k] / std::pow(2.0, isf[r]);
                        fixed[r][j + outl[k]] = 1;
                        Q(r, j + sal[k].second) = 0.0;
                        fixed[r][j + sal[k].second] = 1;
                    }
                }
            }
            if (!fixed[r][j]) {
                const double x = j < d_in ? W(r, j) / std::pow(2.0, isf[r]) : 0.0;
                const double c = std::clamp(std::nearbyint(x), -double(qmax), double(qmax));
                Q(r, j) = c * std::pow(2.0, isf[r]);
            }
        }
        if (cfg.compensate) {
            const double d = Hinv(j, j);
            const Eigen::VectorXd err = (W.col(j) - Q.col(j)) / d;
            W -= err * Hinv.row(j);
            Hinv -= Hinv.col(j) * Hinv.row(j) / d;
        }
    }
    return Q;
}

inline Eigen::MatrixXd gaussian(int rows, int cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = nd(rng);
    }
    return m;
}

/// Gaussian weights with a fraction of entries scaled up into clear outliers.
inline Eigen::MatrixXd planted(int rows, int cols, std::mt19937_64& rng, double frac = 0.01, double scale = 8.0,
                               double sd = 1.0) {
    Eigen::MatrixXd m = gaussian(rows, cols, rng, sd);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (u(rng) < frac) m(r, c) = (u(rng) < 0.5 ? -1.0 : 1.0) * (scale + u(rng) * scale) * sd;
        }
    }
    return m;
}

}  // namespace oracle
