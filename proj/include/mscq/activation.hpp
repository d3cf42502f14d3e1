#pragma once

// Activation-side helpers: per-channel difficulty migration between weights
// and activations, and MX-INT activation quantization in groups along the
// channel dimension.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace mscq {

template <typename Scalar>
struct Migration {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weights;  ///< W * diag(s)
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> factors;               ///< s, one per input channel
};

/// s_j = max|X_j|^alpha / max|W_:,j|^(1-alpha), clamped to >= 1e-5.
/// W is d_out x d_in, X is d_in x n. Channels with an all-zero weight column keep s_j = 1.
template <typename Scalar>
Migration<Scalar> smooth_migrate(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& W,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& X, double alpha) {
    Migration<Scalar> m;
    const auto d_in = W.cols();
    m.factors.resize(d_in);
    for (Eigen::Index j = 0; j < d_in; ++j) {
        const double wmax = static_cast<double>(W.col(j).cwiseAbs().maxCoeff());
        const double xmax = X.cols() > 0 ? static_cast<double>(X.row(j).cwiseAbs().maxCoeff()) : 0.0;
        double s = 1.0;
        if (wmax > 0.0 && (xmax > 0.0 || alpha == 0.0)) {
            s = std::pow(xmax, alpha) / std::pow(wmax, 1.0 - alpha);
        }
        m.factors(j) = static_cast<Scalar>(std::max(s, 1e-5));
    }
    m.weights = W * m.factors.asDiagonal();
    return m;
}

/// Divides activation channel j by s_j, the downstream half of smooth_migrate.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> unmigrate_activations(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& X, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& s) {
    return s.cwiseInverse().asDiagonal() * X;
}

inline constexpr int kActGroup = 128;

/// MX-INT activations: A is d_in x n_tokens; one exponent per group of kActGroup channels per token.
struct ActQuant {
    int bits = 8;
    int group = kActGroup;
    Eigen::MatrixXi codes;  ///< d_in x n_tokens
    Eigen::MatrixXi exps;   ///< n_groups x n_tokens

    int exp_at(Eigen::Index channel, Eigen::Index token) const {
        return exps(channel / group, token);
    }
};

/// Throws ConfigError unless bits is 4 or 8.
ActQuant quantize_activations(const Eigen::Ref<const Eigen::MatrixXd>& A, int bits, int group = kActGroup);
Eigen::MatrixXd dequantize(const ActQuant& a);

}  // namespace mscq
