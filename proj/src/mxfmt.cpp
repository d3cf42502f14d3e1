#include "mscq/mxfmt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mscq/error.hpp"

namespace mscq {

PotExponent::PotExponent(int exp) : exp_(exp) {
    if (exp < kMinPotExp || exp > kMaxPotExp) {
        throw RangeError("power-of-two exponent " + std::to_string(exp) + " outside [-127, 127]");
    }
}

double PotExponent::scale() const noexcept { return std::ldexp(1.0, exp_); }

double fp_max(FpLayout layout) noexcept {
    const auto info = layout_info(layout);
    const int max_field = (1 << info.exp_bits) - 1;
    const double significand = 2.0 - std::ldexp(1.0, -info.man_bits);
    return std::ldexp(significand, max_field - info.bias);
}

FpLayout outlier_layout_for(int bit_budget) {
    if (bit_budget == 2) return FpLayout::E1M2;
    if (bit_budget == 4) return FpLayout::E3M4;
    throw ConfigError("bit budget must be 2 or 4, got " + std::to_string(bit_budget));
}

MxSpec MxSpec::mx_int(int bits, int k1) {
    MxSpec s;
    s.type = ElementType::Int;
    s.bits = bits;
    s.k1 = k1;
    s.validate();
    return s;
}

MxSpec MxSpec::mx_fp(int bits, int k1, int k2) {
    MxSpec s;
    s.type = ElementType::Fp;
    s.bits = bits;
    s.k1 = k1;
    s.k2 = k2;
    s.layout = bits == 4 ? FpLayout::E1M2 : FpLayout::E3M4;
    s.validate();
    return s;
}

void MxSpec::validate() const {
    if (bits != 2 && bits != 4 && bits != 8) {
        throw ConfigError("MX element width must be 2, 4 or 8 bits");
    }
    if (k1 < 1) throw ConfigError("MX level-1 group size must be positive");
    if (type == ElementType::Fp) {
        if (k2 < 1 || k2 > k1) throw ConfigError("MX-FP requires 1 <= k2 <= k1");
        const bool ok = (layout == FpLayout::E1M2 && bits == 4) ||
                        (layout == FpLayout::E3M4 && bits == 8);
        if (!ok) throw ConfigError("e1m2 requires 4-bit elements and e3m4 requires 8-bit elements");
    }
}

std::uint8_t MxScale::packed() const {
    const int w = mu_x_width(layout);
    const int lo = -(1 << (7 - w));
    const int hi = (1 << (7 - w)) - 1;
    if (level1.value() < lo || level1.value() > hi) {
        throw RangeError("MXScale level-1 exponent " + std::to_string(level1.value()) +
                         " does not fit " + std::to_string(8 - w) + " bits");
    }
    if (mu_x >= (1u << w)) throw RangeError("microexponent does not fit its field");
    const auto field = static_cast<std::uint8_t>(level1.value() & ((1 << (8 - w)) - 1));
    return static_cast<std::uint8_t>((field << w) | mu_x);
}

MxScale MxScale::unpack(std::uint8_t packed, FpLayout layout) noexcept {
    const int w = mu_x_width(layout);
    const int field_bits = 8 - w;
    int level1 = packed >> w;
    if (level1 & (1 << (field_bits - 1))) level1 -= 1 << field_bits;
    MxScale s;
    s.level1 = PotExponent(level1);
    s.mu_x = static_cast<std::uint8_t>(packed & ((1 << w) - 1));
    s.layout = layout;
    return s;
}

PotExponent compute_pot_scale(std::span<const double> values, double max_repr) {
    if (!(max_repr > 0.0)) throw ConfigError("max_repr must be positive");
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    if (m == 0.0) return PotExponent(0);
    int e = static_cast<int>(std::ceil(std::log2(m / max_repr)));
    // log2 can be off by one ulp near exact powers of two; settle on the minimal exponent.
    while (std::ldexp(m, -e) > max_repr) ++e;
    while (std::ldexp(m, -(e - 1)) <= max_repr) --e;
    return PotExponent(e);
}

int quantize_int(double x, PotExponent exp, int bits) {
    const int qmax = int_max_code(bits);
    const double r = std::nearbyint(std::ldexp(x, -exp.value()));
    return static_cast<int>(std::clamp(r, static_cast<double>(-qmax), static_cast<double>(qmax)));
}

FpCode round_to_fp_code(double magnitude, FpLayout layout) {
    const auto info = layout_info(layout);
    const int max_field = (1 << info.exp_bits) - 1;
    const int man_full = 1 << info.man_bits;
    if (magnitude < std::ldexp(1.0, -info.bias)) {
        // Below the smallest normal: its nearest neighbour is 1.0 * 2^-bias.
        return {0, 0};
    }
    int e_field = std::clamp(static_cast<int>(std::floor(std::log2(magnitude))) + info.bias, 0, max_field);
    double frac = std::ldexp(magnitude, -(e_field - info.bias));
    if (frac >= 2.0 && e_field < max_field) {
        ++e_field;
        frac /= 2.0;
    } else if (frac < 1.0 && e_field > 0) {
        --e_field;
        frac *= 2.0;
    }
    int m = static_cast<int>(std::nearbyint((frac - 1.0) * man_full));
    if (m >= man_full) {
        if (e_field < max_field) {
            ++e_field;
            m = 0;
        } else {
            m = man_full - 1;
        }
    }
    return {e_field, std::max(m, 0)};
}

namespace {

int mantissa_on_grid(double magnitude, int grid_exp, int man_bits) {
    const int man_full = 1 << man_bits;
    const double frac = std::ldexp(magnitude, -grid_exp);
    const double m = std::nearbyint((frac - 1.0) * man_full);
    return static_cast<int>(std::clamp(m, 0.0, static_cast<double>(man_full - 1)));
}

}  // namespace

FpBlock quantize_fp_block(std::span<const double> values, const MxSpec& spec) {
    if (spec.type != ElementType::Fp) throw ConfigError("quantize_fp_block needs an MX-FP spec");
    if (values.empty()) throw ConfigError("cannot quantize an empty FP block");
    if (static_cast<int>(values.size()) > spec.k2) throw ConfigError("FP block larger than k2");
    for (double v : values) {
        if (v == 0.0 || !std::isfinite(v)) throw ConfigError("FP outlier values must be finite and nonzero");
    }
    const auto info = layout_info(spec.layout);
    const PotExponent l1 = compute_pot_scale(values, fp_max(spec.layout));

    std::vector<FpCode> codes;
    codes.reserve(values.size());
    int mu_x = 0;
    for (double v : values) {
        codes.push_back(round_to_fp_code(std::ldexp(std::abs(v), -l1.value()), spec.layout));
        mu_x = std::max(mu_x, codes.back().exp_field);
    }

    FpBlock block;
    // The layout bias is folded into the stored level-1 exponent so decoding needs no bias term.
    block.scale.level1 = PotExponent(l1.value() - info.bias);
    block.scale.mu_x = static_cast<std::uint8_t>(mu_x);
    block.scale.layout = spec.layout;
    (void)block.scale.packed();  // range check

    block.elems.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        FpOutlierElem e;
        e.sign = values[i] < 0.0 ? 1 : 0;
        if (codes[i].exp_field == mu_x) {
            e.mantissa = static_cast<std::uint8_t>(codes[i].mantissa);
        } else {
            const double mag = std::ldexp(std::abs(values[i]), -l1.value());
            e.mantissa = static_cast<std::uint8_t>(mantissa_on_grid(mag, mu_x - info.bias, info.man_bits));
        }
        block.elems.push_back(e);
    }
    return block;
}

double decode_fp_elem(const FpOutlierElem& e, const MxScale& scale, PotExponent i_sf) {
    const auto info = layout_info(scale.layout);
    const double significand = 1.0 + std::ldexp(static_cast<double>(e.mantissa), -info.man_bits);
    const double mag = std::ldexp(significand, scale.level1.value() + scale.mu_x - i_sf.value());
    return e.sign ? -mag : mag;
}

FpOutlierElem encode_fp_elem(double value, const MxScale& scale, PotExponent i_sf) {
    const auto info = layout_info(scale.layout);
    FpOutlierElem e;
    e.sign = value < 0.0 ? 1 : 0;
    const int grid = scale.level1.value() + scale.mu_x - i_sf.value();
    e.mantissa = static_cast<std::uint8_t>(mantissa_on_grid(std::abs(value), grid, info.man_bits));
    return e;
}

}  // namespace mscq
