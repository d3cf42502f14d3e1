#pragma once

// Microscaling (MX) block formats: power-of-two level-1 scales, MX-INT
// element codes and MX-FP outlier elements sharing a level-2 microexponent.

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

namespace mscq {

inline constexpr int kMinPotExp = -127;
inline constexpr int kMaxPotExp = 127;

/// A power-of-two scale 2^exp, storable in 8 bits.
class PotExponent {
public:
    constexpr PotExponent() = default;
    /// Throws RangeError outside [-127, 127].
    explicit PotExponent(int exp);

    constexpr int value() const noexcept { return exp_; }
    double scale() const noexcept;

    friend constexpr auto operator<=>(PotExponent, PotExponent) = default;

private:
    int exp_ = 0;
};

enum class ElementType : std::uint8_t { Int, Fp };
enum class FpLayout : std::uint8_t { E1M2, E3M4 };

struct FpLayoutInfo {
    int exp_bits;
    int man_bits;
    int bias;
};

constexpr FpLayoutInfo layout_info(FpLayout layout) noexcept {
    // Biases keep every code normal; e1m2 tops out at 3.5, e3m4 at 31.
    return layout == FpLayout::E1M2 ? FpLayoutInfo{1, 2, 0} : FpLayoutInfo{3, 4, 3};
}

/// Largest finite magnitude of an FP element layout.
double fp_max(FpLayout layout) noexcept;

/// Outlier layout paired with an inlier bit budget: bb=2 -> e1m2, bb=4 -> e3m4.
FpLayout outlier_layout_for(int bit_budget);

struct MxSpec {
    ElementType type = ElementType::Int;
    int bits = 4;
    int k1 = 128;
    int k2 = 0;  // FP only
    FpLayout layout = FpLayout::E1M2;  // FP only

    static MxSpec mx_int(int bits, int k1);
    static MxSpec mx_fp(int bits, int k1, int k2);

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;
};

/// Width in bits of the microexponent field for a layout (1 or 3).
constexpr int mu_x_width(FpLayout layout) noexcept { return layout_info(layout).exp_bits; }

/// 8-bit MXScale: level-1 exponent in the MSBs (two's complement), microexponent in the LSBs.
struct MxScale {
    PotExponent level1;
    std::uint8_t mu_x = 0;
    FpLayout layout = FpLayout::E1M2;

    /// Throws RangeError if level1 does not fit its 7/5-bit field.
    std::uint8_t packed() const;
    static MxScale unpack(std::uint8_t packed, FpLayout layout) noexcept;

    friend bool operator==(const MxScale&, const MxScale&) = default;
};

/// Sign and explicit mantissa of an FP outlier; the hidden bit is always 1.
struct FpOutlierElem {
    std::uint8_t sign = 0;
    std::uint8_t mantissa = 0;

    friend bool operator==(const FpOutlierElem&, const FpOutlierElem&) = default;
};

struct FpBlock {
    MxScale scale;
    std::vector<FpOutlierElem> elems;
};

/// Smallest exp such that max|values| / 2^exp <= max_repr; 0 for an all-zero input.
PotExponent compute_pot_scale(std::span<const double> values, double max_repr);

/// Largest symmetric code for a signed b-bit integer, 2^(b-1) - 1.
constexpr int int_max_code(int bits) noexcept { return (1 << (bits - 1)) - 1; }

/// clip(round_half_even(x / 2^exp), -(2^(b-1)-1), 2^(b-1)-1).
int quantize_int(double x, PotExponent exp, int bits);

/// Quantizes a nonempty block of nonzero values to MX-FP with one shared MXScale.
FpBlock quantize_fp_block(std::span<const double> values, const MxSpec& spec);

/// (-1)^s * (1 + m / 2^man_bits) * 2^(level1 + mu_x - i_sf).
double decode_fp_elem(const FpOutlierElem& e, const MxScale& scale, PotExponent i_sf);

/// Nearest element on the grid fixed by `scale` (inverse of decode_fp_elem on that grid).
FpOutlierElem encode_fp_elem(double value, const MxScale& scale, PotExponent i_sf);

/// Round a positive scaled magnitude to the nearest normal code of `layout`.
/// Returns {exponent field, mantissa field}.
struct FpCode {
    int exp_field;
    int mantissa;
};
FpCode round_to_fp_code(double magnitude, FpLayout layout);

}  // namespace mscq
