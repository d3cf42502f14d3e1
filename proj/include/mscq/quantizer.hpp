#pragma once

// Outlier-aware layer quantization: 3-sigma inlier/outlier separation per
// macro-block, MX-INT inliers, MX-FP outliers per micro-block, Hessian-guided
// pruning of the least salient inliers to host the outliers' low halves, and
// second-order error compensation along the dot-product dimension.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mscq/mxfmt.hpp"

namespace mscq {

enum class OverflowPolicy : std::uint8_t { Error, Demote };

struct QuantConfig {
    int bb = 2;            ///< per-element bit budget (2 or 4); outliers use 2*bb bits
    int mab = 128;         ///< macro-block size B_M
    int mub = 8;           ///< micro-block size B_mu
    int row_block = 128;   ///< lazy-update block along d_in
    double sigma_mult = 3.0;
    double alpha = 0.0;    ///< activation migration strength, consumed by smooth_migrate
    OverflowPolicy overflow = OverflowPolicy::Error;
    double lambda_frac = 0.01;
    bool compensate = true;

    void validate() const;
    int outlier_bits() const noexcept { return 2 * bb; }
    FpLayout outlier_layout() const { return outlier_layout_for(bb); }
    MxSpec outlier_spec() const { return MxSpec::mx_fp(outlier_bits(), mub, mub); }
    /// Bits of one location inside a micro-block, log2(B_mu).
    int loc_bits() const noexcept;
};

struct HessianState {
    Eigen::MatrixXd h_inv;       ///< (2XX^T + lambda I)^-1
    Eigen::MatrixXd chol_upper;  ///< upper U with h_inv = U^T U; row j drives step j of compensation
    double lambda = 0.0;
};

/// X is d_in x n_samples. lambda = lambda_frac * mean(diag(2XX^T)).
HessianState compute_hessian_inverse(const Eigen::Ref<const Eigen::MatrixXd>& X, double lambda_frac);

// ---------------------------------------------------------------------------
// Micro-block metadata

struct PermEntry {
    std::uint8_t upper_loc = 0;
    std::uint8_t lower_loc = 0;

    bool live() const noexcept { return upper_loc != lower_loc; }
    friend bool operator==(const PermEntry&, const PermEntry&) = default;
};

/// Exactly B_mu/2 entries; live entries first, then all-zero sentinels.
struct PermList {
    std::vector<PermEntry> entries;

    int live_count() const noexcept;
    friend bool operator==(const PermList&, const PermList&) = default;
};

enum class SlotRole : std::uint8_t { Inlier, Upper, Lower };

struct MicroBlockQ {
    std::vector<std::uint8_t> codes;  ///< B_mu raw bb-bit fields
    std::optional<PermList> perm;
    std::optional<MxScale> mx_scale;
    int outlier_count = 0;

    SlotRole role(int pos) const noexcept;
    friend bool operator==(const MicroBlockQ&, const MicroBlockQ&) = default;
};

struct QuantizedLayer {
    int d_out = 0;
    int d_in = 0;         ///< logical width
    int d_in_padded = 0;  ///< multiple of B_M
    QuantConfig cfg;
    std::vector<MicroBlockQ> blocks;       ///< row-major: row * mubs_per_row() + block
    std::vector<std::int8_t> i_sf;         ///< row-major: row * mabs_per_row() + mab
    std::vector<std::uint8_t> identifiers; ///< one per micro-block, 1 iff outlier metadata present

    int mabs_per_row() const noexcept { return cfg.mab ? d_in_padded / cfg.mab : 0; }
    int mubs_per_row() const noexcept { return cfg.mub ? d_in_padded / cfg.mub : 0; }
    const MicroBlockQ& block(int row, int b) const { return blocks[static_cast<std::size_t>(row) * mubs_per_row() + b]; }
    MicroBlockQ& block(int row, int b) { return blocks[static_cast<std::size_t>(row) * mubs_per_row() + b]; }
    PotExponent inlier_exp(int row, int k) const {
        return PotExponent(i_sf[static_cast<std::size_t>(row) * mabs_per_row() + k / cfg.mab]);
    }
    /// Exponent of the outlier significand grid, O_sf = level1 + mu_x - I_sf.
    int outlier_exp(int row, int b) const;
};

bool operator==(const QuantConfig& a, const QuantConfig& b);
bool operator==(const QuantizedLayer& a, const QuantizedLayer& b);

// ---------------------------------------------------------------------------
// Bit-field conventions

/// Two's-complement inlier code in bb bits.
std::uint8_t encode_inlier_field(int code, int bb);
int decode_inlier_field(std::uint8_t field, int bb);

/// Upper/Lower halves of an outlier. Each half is sign-magnitude: the sign is
/// duplicated into both, the mantissa bits are split MSB-half / LSB-half and,
/// for bb=4, left-aligned with a zero LSB.
struct OutlierHalves {
    std::uint8_t upper = 0;
    std::uint8_t lower = 0;
};
OutlierHalves split_outlier(const FpOutlierElem& e, int bb);
/// Throws FormatError("perm-integrity") if the two duplicated signs disagree.
FpOutlierElem join_outlier(std::uint8_t upper, std::uint8_t lower, int bb);
/// Signed value (-1)^s * magnitude of a sign-magnitude half.
int half_value(std::uint8_t field, int bb) noexcept;

/// Packed {Upper_loc, Lower_loc} entry, Upper in the high bits.
std::uint32_t pack_perm_entry(const PermEntry& e, int loc_bits) noexcept;
PermEntry unpack_perm_entry(std::uint32_t v, int loc_bits) noexcept;

/// Throws FormatError("perm-integrity") when a list is malformed for B_mu.
void check_perm(const PermList& perm, int mub);

// ---------------------------------------------------------------------------
// Quantization steps

struct Separation {
    std::vector<int> inliers;
    std::vector<int> outliers;
};

/// i is an outlier iff |w_i| > sigma_mult * sqrt(mean(w^2)).
Separation separate_inliers_outliers(std::span<const double> mab, double sigma_mult);

struct InlierQuant {
    std::vector<int> codes;  ///< one per MaB slot; 0 for non-inliers
    PotExponent i_sf;
};
InlierQuant quantize_inliers(std::span<const double> mab, std::span<const int> inlier_idx, int bb);

/// Prescales the selected values by 2^I_sf and quantizes them as one MX-FP block.
FpBlock quantize_outliers_microblock(std::span<const double> mub, std::span<const int> outlier_idx,
                                     PotExponent i_sf, const MxSpec& spec);

/// Number of inliers to prune for `outliers` outliers: min(B_mu/2, outliers).
/// Throws CapacityError for outliers > B_mu/2 under OverflowPolicy::Error.
int prune_count(int outliers, int mub, OverflowPolicy policy);

/// n candidate positions with the smallest w^2 / hinv_diag, ties to the lower
/// index, returned in ascending order. weights/hinv_diag are indexed by position.
std::vector<int> select_prune_positions(std::span<const double> weights, std::span<const double> hinv_diag,
                                        std::span<const int> candidates, int n);

struct Redistribution {
    std::vector<std::pair<int, std::uint8_t>> slot_codes;  ///< (position, half field)
    PermList perm;
};

/// k-th outlier (ascending position) pairs with the k-th pruned slot (ascending).
Redistribution redistribute_outlier_bits(std::span<const FpOutlierElem> elems, std::span<const int> outlier_pos,
                                         std::span<const int> pruned_pos, int bb, int mub);

/// One compensation step at column j of W: E = (W_j - q) / U_jj, then
/// W[:, j:block_end] -= E * U[j, j:block_end]. Returns E.
Eigen::VectorXd compensate_step(Eigen::Ref<Eigen::MatrixXd> W, int j, const Eigen::Ref<const Eigen::VectorXd>& q,
                                const Eigen::Ref<const Eigen::MatrixXd>& U, int block_end);

/// W[:, end:] -= E_block * U[begin:end, end:] once a row block is finished.
void propagate_block(Eigen::Ref<Eigen::MatrixXd> W, const Eigen::Ref<const Eigen::MatrixXd>& E_block,
                     const Eigen::Ref<const Eigen::MatrixXd>& U, int begin, int end);

struct QuantReport {
    long total_weights = 0;
    long outliers_detected = 0;
    long outliers_kept = 0;
    long outliers_demoted = 0;
    long adjacent_outliers = 0;  ///< detected outliers with an outlier neighbour along d_in
    long outlier_mubs = 0;
    long mubs = 0;
};

QuantizedLayer quantize_layer(const Eigen::Ref<const Eigen::MatrixXd>& W, const HessianState& hessian,
                              const QuantConfig& cfg, QuantReport* report = nullptr);
QuantizedLayer quantize_layer(const Eigen::Ref<const Eigen::MatrixXd>& W, const Eigen::Ref<const Eigen::MatrixXd>& X,
                              const QuantConfig& cfg, QuantReport* report = nullptr);

/// Pads a d_in-sized Hessian state with an identity block up to `padded` columns.
HessianState pad_hessian(const HessianState& h, int padded);

}  // namespace mscq
