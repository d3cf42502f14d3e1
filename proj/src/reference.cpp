#include "mscq/reference.hpp"

#include <cmath>

namespace mscq {

Eigen::MatrixXd dequantize_layer_padded(const QuantizedLayer& q) {
    const int bb = q.cfg.bb;
    const int mub = q.cfg.mub;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q.d_out, q.d_in_padded);
    for (int r = 0; r < q.d_out; ++r) {
        for (int b = 0; b < q.mubs_per_row(); ++b) {
            const auto& blk = q.block(r, b);
            const int k0 = b * mub;
            const PotExponent isf = q.inlier_exp(r, k0);
            if (static_cast<bool>(q.identifiers[static_cast<std::size_t>(r) * q.mubs_per_row() + b]) !=
                blk.perm.has_value()) {
                throw FormatError("identifier-consistency", "identifier bit disagrees with outlier metadata");
            }
            if (blk.perm) {
                check_perm(*blk.perm, mub);
                if (!blk.mx_scale) throw FormatError("perm-integrity", "outlier micro-block without a scale");
            }
            for (int p = 0; p < mub; ++p) {
                if (blk.role(p) == SlotRole::Inlier) {
                    out(r, k0 + p) = std::ldexp(static_cast<double>(decode_inlier_field(blk.codes[p], bb)), isf.value());
                }
            }
            if (!blk.perm) continue;
            for (const auto& e : blk.perm->entries) {
                if (!e.live()) break;
                const auto elem = join_outlier(blk.codes[e.upper_loc], blk.codes[e.lower_loc], bb);
                out(r, k0 + e.upper_loc) = decode_fp_elem(elem, *blk.mx_scale, isf);
                out(r, k0 + e.lower_loc) = 0.0;
            }
        }
    }
    return out;
}

Eigen::MatrixXd dequantize_layer(const QuantizedLayer& q) {
    return dequantize_layer_padded(q).leftCols(q.d_in);
}

}  // namespace mscq
