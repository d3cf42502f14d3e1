#include "mscq/activation.hpp"

#include <cmath>
#include <vector>

#include "mscq/error.hpp"
#include "mscq/mxfmt.hpp"

namespace mscq {

ActQuant quantize_activations(const Eigen::Ref<const Eigen::MatrixXd>& A, int bits, int group) {
    if (bits != 4 && bits != 8) throw ConfigError("activation width must be 4 or 8 bits");
    if (group < 1) throw ConfigError("activation group size must be positive");
    ActQuant q;
    q.bits = bits;
    q.group = group;
    const auto d = A.rows();
    const auto n = A.cols();
    const auto groups = (d + group - 1) / group;
    q.codes = Eigen::MatrixXi::Zero(d, n);
    q.exps = Eigen::MatrixXi::Zero(groups, n);
    std::vector<double> vals;
    for (Eigen::Index t = 0; t < n; ++t) {
        for (Eigen::Index g = 0; g < groups; ++g) {
            const auto begin = g * group;
            const auto len = std::min<Eigen::Index>(group, d - begin);
            vals.assign(len, 0.0);
            for (Eigen::Index i = 0; i < len; ++i) vals[i] = A(begin + i, t);
            const auto e = compute_pot_scale(vals, int_max_code(bits));
            q.exps(g, t) = e.value();
            for (Eigen::Index i = 0; i < len; ++i) q.codes(begin + i, t) = quantize_int(vals[i], e, bits);
        }
    }
    return q;
}

Eigen::MatrixXd dequantize(const ActQuant& a) {
    Eigen::MatrixXd out(a.codes.rows(), a.codes.cols());
    for (Eigen::Index t = 0; t < a.codes.cols(); ++t) {
        for (Eigen::Index c = 0; c < a.codes.rows(); ++c) {
            out(c, t) = std::ldexp(static_cast<double>(a.codes(c, t)), a.exp_at(c, t));
        }
    }
    return out;
}

}  // namespace mscq
