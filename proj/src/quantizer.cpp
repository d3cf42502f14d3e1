#include "mscq/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mscq/error.hpp"

namespace mscq {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void QuantConfig::validate() const {
    if (bb != 2 && bb != 4) throw ConfigError("bit budget must be 2 or 4");
    if (!is_pow2(mub) || mub < 2 || mub > 128) throw ConfigError("micro-block size must be a power of two in [2, 128]");
    if (mab < mub || mab % mub != 0) throw ConfigError("micro-block size must divide the macro-block size");
    if (row_block < mub || row_block % mub != 0) throw ConfigError("row block must be a multiple of the micro-block size");
    if (row_block % mab != 0 && mab % row_block != 0) {
        throw ConfigError("row block and macro-block sizes must divide one another");
    }
    if (!(sigma_mult > 0.0)) throw ConfigError("sigma multiplier must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("migration strength must lie in [0, 1]");
    if (!(lambda_frac >= 0.0)) throw ConfigError("dampening fraction must be non-negative");
}

int QuantConfig::loc_bits() const noexcept { return std::countr_zero(static_cast<unsigned>(mub)); }

bool operator==(const QuantConfig& a, const QuantConfig& b) {
    return a.bb == b.bb && a.mab == b.mab && a.mub == b.mub && a.row_block == b.row_block &&
           a.sigma_mult == b.sigma_mult && a.alpha == b.alpha && a.overflow == b.overflow &&
           a.lambda_frac == b.lambda_frac && a.compensate == b.compensate;
}

bool operator==(const QuantizedLayer& a, const QuantizedLayer& b) {
    return a.d_out == b.d_out && a.d_in == b.d_in && a.d_in_padded == b.d_in_padded && a.cfg == b.cfg &&
           a.blocks == b.blocks && a.i_sf == b.i_sf && a.identifiers == b.identifiers;
}

int QuantizedLayer::outlier_exp(int row, int b) const {
    const auto& blk = block(row, b);
    if (!blk.mx_scale) throw std::logic_error("micro-block has no outlier scale");
    const int isf = inlier_exp(row, b * cfg.mub).value();
    return blk.mx_scale->level1.value() + blk.mx_scale->mu_x - isf;
}

HessianState compute_hessian_inverse(const Eigen::Ref<const Eigen::MatrixXd>& X, double lambda_frac) {
    if (X.cols() < 1) throw ShapeError("calibration data needs at least one sample");
    const Eigen::Index d = X.rows();
    Eigen::MatrixXd H = 2.0 * X * X.transpose();
    HessianState st;
    st.lambda = d > 0 ? lambda_frac * H.diagonal().mean() : 0.0;
    H.diagonal().array() += st.lambda;

    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw NumericError("Hessian is singular after dampening");
    st.h_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    st.h_inv = 0.5 * (st.h_inv + st.h_inv.transpose());

    Eigen::LLT<Eigen::MatrixXd> inv_llt(st.h_inv);
    if (inv_llt.info() != Eigen::Success) throw NumericError("inverse Hessian is not positive definite");
    st.chol_upper = inv_llt.matrixU();
    return st;
}

HessianState pad_hessian(const HessianState& h, int padded) {
    const auto d = h.h_inv.rows();
    if (padded == d) return h;
    HessianState out;
    out.lambda = h.lambda;
    out.h_inv = Eigen::MatrixXd::Identity(padded, padded);
    out.h_inv.topLeftCorner(d, d) = h.h_inv;
    out.chol_upper = Eigen::MatrixXd::Identity(padded, padded);
    out.chol_upper.topLeftCorner(d, d) = h.chol_upper;
    return out;
}

// ---------------------------------------------------------------------------

int PermList::live_count() const noexcept {
    return static_cast<int>(std::count_if(entries.begin(), entries.end(), [](const PermEntry& e) { return e.live(); }));
}

SlotRole MicroBlockQ::role(int pos) const noexcept {
    if (!perm) return SlotRole::Inlier;
    for (const auto& e : perm->entries) {
        if (!e.live()) break;
        if (e.upper_loc == pos) return SlotRole::Upper;
        if (e.lower_loc == pos) return SlotRole::Lower;
    }
    return SlotRole::Inlier;
}

std::uint8_t encode_inlier_field(int code, int bb) {
    return static_cast<std::uint8_t>(code & ((1 << bb) - 1));
}

int decode_inlier_field(std::uint8_t field, int bb) {
    int v = field & ((1 << bb) - 1);
    if (v & (1 << (bb - 1))) v -= 1 << bb;
    return v;
}

OutlierHalves split_outlier(const FpOutlierElem& e, int bb) {
    OutlierHalves h;
    if (bb == 2) {
        h.upper = static_cast<std::uint8_t>((e.sign << 1) | ((e.mantissa >> 1) & 1));
        h.lower = static_cast<std::uint8_t>((e.sign << 1) | (e.mantissa & 1));
    } else {
        h.upper = static_cast<std::uint8_t>((e.sign << 3) | (((e.mantissa >> 2) & 3) << 1));
        h.lower = static_cast<std::uint8_t>((e.sign << 3) | ((e.mantissa & 3) << 1));
    }
    return h;
}

FpOutlierElem join_outlier(std::uint8_t upper, std::uint8_t lower, int bb) {
    const int s_up = (upper >> (bb - 1)) & 1;
    const int s_lo = (lower >> (bb - 1)) & 1;
    if (s_up != s_lo) throw FormatError("perm-integrity", "outlier halves carry different signs");
    FpOutlierElem e;
    e.sign = static_cast<std::uint8_t>(s_up);
    if (bb == 2) {
        e.mantissa = static_cast<std::uint8_t>(((upper & 1) << 1) | (lower & 1));
    } else {
        if ((upper & 1) || (lower & 1)) throw FormatError("perm-integrity", "padding bit of an outlier half is set");
        e.mantissa = static_cast<std::uint8_t>((((upper >> 1) & 3) << 2) | ((lower >> 1) & 3));
    }
    return e;
}

int half_value(std::uint8_t field, int bb) noexcept {
    const int mag = field & ((1 << (bb - 1)) - 1);
    return ((field >> (bb - 1)) & 1) ? -mag : mag;
}

std::uint32_t pack_perm_entry(const PermEntry& e, int loc_bits) noexcept {
    return (static_cast<std::uint32_t>(e.upper_loc) << loc_bits) | e.lower_loc;
}

PermEntry unpack_perm_entry(std::uint32_t v, int loc_bits) noexcept {
    const std::uint32_t mask = (1u << loc_bits) - 1;
    return {static_cast<std::uint8_t>((v >> loc_bits) & mask), static_cast<std::uint8_t>(v & mask)};
}

void check_perm(const PermList& perm, int mub) {
    if (static_cast<int>(perm.entries.size()) != mub / 2) {
        throw FormatError("perm-integrity", "permutation list must hold B_mu/2 entries");
    }
    std::vector<bool> used(static_cast<std::size_t>(mub), false);
    bool in_sentinels = false;
    for (const auto& e : perm.entries) {
        if (!e.live()) {
            if (e.upper_loc != 0) throw FormatError("perm-integrity", "non-zero sentinel entry");
            in_sentinels = true;
            continue;
        }
        if (in_sentinels) throw FormatError("perm-integrity", "live entry after a sentinel");
        if (e.upper_loc >= mub || e.lower_loc >= mub) throw FormatError("perm-integrity", "location out of range");
        if (used[e.upper_loc] || used[e.lower_loc]) throw FormatError("perm-integrity", "location used twice");
        used[e.upper_loc] = used[e.lower_loc] = true;
    }
    if (perm.live_count() == 0) throw FormatError("perm-integrity", "permutation list without live entries");
}

// ---------------------------------------------------------------------------

Separation separate_inliers_outliers(std::span<const double> mab, double sigma_mult) {
    Separation sep;
    if (mab.empty()) return sep;
    double sq = 0.0;
    for (double w : mab) sq += w * w;
    const double threshold = sigma_mult * std::sqrt(sq / static_cast<double>(mab.size()));
    for (int i = 0; i < static_cast<int>(mab.size()); ++i) {
        (std::abs(mab[i]) > threshold ? sep.outliers : sep.inliers).push_back(i);
    }
    return sep;
}

InlierQuant quantize_inliers(std::span<const double> mab, std::span<const int> inlier_idx, int bb) {
    std::vector<double> vals;
    vals.reserve(inlier_idx.size());
    for (int i : inlier_idx) vals.push_back(mab[i]);
    InlierQuant q;
    q.i_sf = compute_pot_scale(vals, int_max_code(bb));
    q.codes.assign(mab.size(), 0);
    for (int i : inlier_idx) q.codes[i] = quantize_int(mab[i], q.i_sf, bb);
    return q;
}

FpBlock quantize_outliers_microblock(std::span<const double> mub, std::span<const int> outlier_idx,
                                     PotExponent i_sf, const MxSpec& spec) {
    std::vector<double> vals;
    vals.reserve(outlier_idx.size());
    for (int i : outlier_idx) vals.push_back(std::ldexp(mub[i], i_sf.value()));
    return quantize_fp_block(vals, spec);
}

int prune_count(int outliers, int mub, OverflowPolicy policy) {
    if (outliers > mub / 2 && policy == OverflowPolicy::Error) {
        throw CapacityError(std::to_string(outliers) + " outliers in a micro-block of " + std::to_string(mub) +
                            "; at most B_mu/2 fit, choose a larger micro-block");
    }
    return std::min(mub / 2, outliers);
}

std::vector<int> select_prune_positions(std::span<const double> weights, std::span<const double> hinv_diag,
                                        std::span<const int> candidates, int n) {
    if (n < 0 || n > static_cast<int>(candidates.size())) {
        throw CapacityError("not enough inlier positions to prune");
    }
    std::vector<std::pair<double, int>> scored;
    scored.reserve(candidates.size());
    for (int p : candidates) scored.emplace_back(weights[p] * weights[p] / hinv_diag[p], p);
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(scored[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

Redistribution redistribute_outlier_bits(std::span<const FpOutlierElem> elems, std::span<const int> outlier_pos,
                                         std::span<const int> pruned_pos, int bb, int mub) {
    const std::size_t n = elems.size();
    if (outlier_pos.size() != n || pruned_pos.size() != n) {
        throw std::logic_error("outlier, element and pruned-slot counts differ");
    }
    if (static_cast<int>(n) > mub / 2) throw std::logic_error("more outliers than permutation entries");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return outlier_pos[a] < outlier_pos[b]; });
    std::vector<int> pruned(pruned_pos.begin(), pruned_pos.end());
    std::sort(pruned.begin(), pruned.end());

    std::vector<bool> used(static_cast<std::size_t>(mub), false);
    auto claim = [&](int p) {
        if (p < 0 || p >= mub || used[p]) throw std::logic_error("slot collision during outlier redistribution");
        used[p] = true;
    };

    Redistribution r;
    r.perm.entries.assign(static_cast<std::size_t>(mub / 2), PermEntry{});
    for (std::size_t k = 0; k < n; ++k) {
        const int up = outlier_pos[order[k]];
        const int lo = pruned[k];
        claim(up);
        claim(lo);
        const auto halves = split_outlier(elems[order[k]], bb);
        r.slot_codes.emplace_back(up, halves.upper);
        r.slot_codes.emplace_back(lo, halves.lower);
        r.perm.entries[k] = {static_cast<std::uint8_t>(up), static_cast<std::uint8_t>(lo)};
    }
    return r;
}

Eigen::VectorXd compensate_step(Eigen::Ref<Eigen::MatrixXd> W, int j, const Eigen::Ref<const Eigen::VectorXd>& q,
                                const Eigen::Ref<const Eigen::MatrixXd>& U, int block_end) {
    const double d = U(j, j);
    if (!(d > 0.0)) throw NumericError("non-positive inverse-Hessian diagonal at column " + std::to_string(j));
    Eigen::VectorXd err = (W.col(j) - q) / d;
    const int width = block_end - j;
    W.middleCols(j, width).noalias() -= err * U.row(j).segment(j, width);
    return err;
}

void propagate_block(Eigen::Ref<Eigen::MatrixXd> W, const Eigen::Ref<const Eigen::MatrixXd>& E_block,
                     const Eigen::Ref<const Eigen::MatrixXd>& U, int begin, int end) {
    const auto trailing = W.cols() - end;
    if (trailing <= 0) return;
    W.rightCols(trailing).noalias() -= E_block * U.block(begin, end, end - begin, trailing);
}

// ---------------------------------------------------------------------------

namespace {

struct LayerState {
    const QuantConfig& cfg;
    int d_out;
    int d_in;
    int padded;
    std::vector<std::uint8_t> outlier;  // row-major flags over padded width
    QuantizedLayer layer;
    QuantReport report;
};

void start_macro_block(LayerState& st, const Eigen::MatrixXd& W, int row, int k0) {
    const auto& cfg = st.cfg;
    const int real = std::clamp(st.d_in - k0, 0, cfg.mab);
    std::vector<double> vals(static_cast<std::size_t>(real));
    for (int i = 0; i < real; ++i) vals[i] = W(row, k0 + i);
    const auto sep = separate_inliers_outliers(vals, cfg.sigma_mult);

    auto* flags = &st.outlier[static_cast<std::size_t>(row) * st.padded + k0];
    std::fill(flags, flags + cfg.mab, 0);
    for (int i : sep.outliers) flags[i] = 1;

    std::vector<double> inl;
    inl.reserve(sep.inliers.size());
    for (int i : sep.inliers) inl.push_back(vals[i]);
    const auto isf = compute_pot_scale(inl, int_max_code(cfg.bb));
    st.layer.i_sf[static_cast<std::size_t>(row) * st.layer.mabs_per_row() + k0 / cfg.mab] =
        static_cast<std::int8_t>(isf.value());

    st.report.outliers_detected += static_cast<long>(sep.outliers.size());
    for (int i : sep.outliers) {
        const bool left = i > 0 && flags[i - 1];
        const bool right = i + 1 < real && flags[i + 1];
        if (left || right) ++st.report.adjacent_outliers;
    }
}

void start_micro_block(LayerState& st, Eigen::MatrixXd& W, const Eigen::VectorXd& hinv_diag, Eigen::MatrixXd& Q,
                       int row, int k0) {
    const auto& cfg = st.cfg;
    const int mub = cfg.mub;
    auto* flags = &st.outlier[static_cast<std::size_t>(row) * st.padded + k0];
    auto& blk = st.layer.block(row, k0 / mub);
    blk.codes.assign(static_cast<std::size_t>(mub), 0);
    blk.perm.reset();
    blk.mx_scale.reset();
    blk.outlier_count = 0;

    std::vector<double> w(static_cast<std::size_t>(mub));
    std::vector<double> hd(static_cast<std::size_t>(mub));
    for (int i = 0; i < mub; ++i) {
        w[i] = W(row, k0 + i);
        hd[i] = hinv_diag(k0 + i);
    }

    std::vector<int> outl;
    for (int i = 0; i < mub; ++i) {
        if (flags[i]) outl.push_back(i);
    }
    const int n = prune_count(static_cast<int>(outl.size()), mub, cfg.overflow);
    if (static_cast<int>(outl.size()) > n) {
        // Demote the smallest-magnitude outliers back to inliers.
        std::stable_sort(outl.begin(), outl.end(), [&](int a, int b) { return std::abs(w[a]) > std::abs(w[b]); });
        for (std::size_t i = static_cast<std::size_t>(n); i < outl.size(); ++i) flags[outl[i]] = 0;
        st.report.outliers_demoted += static_cast<long>(outl.size()) - n;
        outl.resize(static_cast<std::size_t>(n));
        std::sort(outl.begin(), outl.end());
    }
    ++st.report.mubs;
    if (n == 0) return;

    std::vector<int> cand;
    for (int i = 0; i < mub; ++i) {
        if (!flags[i]) cand.push_back(i);
    }
    const auto pruned = select_prune_positions(w, hd, cand, n);

    const PotExponent isf = st.layer.inlier_exp(row, k0);
    const auto fp = quantize_outliers_microblock(w, outl, isf, cfg.outlier_spec());
    const auto red = redistribute_outlier_bits(fp.elems, outl, pruned, cfg.bb, mub);

    for (const auto& [pos, field] : red.slot_codes) blk.codes[pos] = field;
    for (std::size_t i = 0; i < outl.size(); ++i) {
        Q(row, k0 + outl[i]) = decode_fp_elem(fp.elems[i], fp.scale, isf);
    }
    for (int p : pruned) Q(row, k0 + p) = 0.0;
    blk.perm = red.perm;
    blk.mx_scale = fp.scale;
    blk.outlier_count = n;
    st.layer.identifiers[static_cast<std::size_t>(row) * st.layer.mubs_per_row() + k0 / mub] = 1;
    st.report.outliers_kept += n;
    ++st.report.outlier_mubs;
}

}  // namespace

QuantizedLayer quantize_layer(const Eigen::Ref<const Eigen::MatrixXd>& W_in, const HessianState& hessian,
                              const QuantConfig& cfg, QuantReport* report) {
    cfg.validate();
    const int d_out = static_cast<int>(W_in.rows());
    const int d_in = static_cast<int>(W_in.cols());
    if (hessian.h_inv.rows() != d_in || hessian.chol_upper.rows() != d_in) {
        throw ShapeError("Hessian is " + std::to_string(hessian.h_inv.rows()) + "-dimensional but the layer has d_in=" +
                         std::to_string(d_in));
    }
    const int padded = (d_in + cfg.mab - 1) / cfg.mab * cfg.mab;
    const HessianState h = pad_hessian(hessian, padded);
    const Eigen::VectorXd hinv_diag = h.h_inv.diagonal();
    const Eigen::MatrixXd& U = h.chol_upper;

    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d_out, padded);
    W.leftCols(d_in) = W_in;
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(d_out, padded);

    LayerState st{cfg, d_out, d_in, padded, {}, {}, {}};
    st.outlier.assign(static_cast<std::size_t>(d_out) * padded, 0);
    auto& L = st.layer;
    L.d_out = d_out;
    L.d_in = d_in;
    L.d_in_padded = padded;
    L.cfg = cfg;
    L.blocks.assign(static_cast<std::size_t>(d_out) * L.mubs_per_row(), MicroBlockQ{});
    L.i_sf.assign(static_cast<std::size_t>(d_out) * L.mabs_per_row(), 0);
    L.identifiers.assign(L.blocks.size(), 0);
    st.report.total_weights = static_cast<long>(d_out) * d_in;

    for (int begin = 0; begin < padded; begin += cfg.row_block) {
        const int end = std::min(begin + cfg.row_block, padded);
        Eigen::MatrixXd E_block = Eigen::MatrixXd::Zero(d_out, end - begin);
        for (int j = begin; j < end; ++j) {
            if (j % cfg.mab == 0) {
                for (int r = 0; r < d_out; ++r) start_macro_block(st, W, r, j);
            }
            if (j % cfg.mub == 0) {
                for (int r = 0; r < d_out; ++r) start_micro_block(st, W, hinv_diag, Q, r, j);
            }
            const int b = j / cfg.mub;
            const int pos = j % cfg.mub;
            for (int r = 0; r < d_out; ++r) {
                auto& blk = L.block(r, b);
                if (blk.role(pos) != SlotRole::Inlier) continue;
                const PotExponent isf = L.inlier_exp(r, j);
                const int code = j < d_in ? quantize_int(W(r, j), isf, cfg.bb) : 0;
                blk.codes[pos] = encode_inlier_field(code, cfg.bb);
                Q(r, j) = std::ldexp(static_cast<double>(code), isf.value());
            }
            if (cfg.compensate) E_block.col(j - begin) = compensate_step(W, j, Q.col(j), U, end);
        }
        if (cfg.compensate) propagate_block(W, E_block, U, begin, end);
    }

    if (report) *report = st.report;
    return std::move(st.layer);
}

QuantizedLayer quantize_layer(const Eigen::Ref<const Eigen::MatrixXd>& W, const Eigen::Ref<const Eigen::MatrixXd>& X,
                              const QuantConfig& cfg, QuantReport* report) {
    if (X.rows() != W.cols()) {
        throw ShapeError("calibration data has " + std::to_string(X.rows()) + " channels, weights have " +
                         std::to_string(W.cols()));
    }
    cfg.validate();
    return quantize_layer(W, compute_hessian_inverse(X, cfg.lambda_frac), cfg, report);
}

}  // namespace mscq
