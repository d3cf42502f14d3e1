#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mscq/error.hpp"
#include "mscq/mxfmt.hpp"
#include "support/oracles.hpp"

using namespace mscq;

TEST_CASE("pot exponent range") {
    CHECK(PotExponent(-127).value() == -127);
    CHECK(PotExponent(127).value() == 127);
    CHECK_THROWS_AS(PotExponent(128), RangeError);
    CHECK_THROWS_AS(PotExponent(-128), RangeError);
    CHECK(PotExponent(-3).scale() == 0.125);
}

TEST_CASE("fp layout maxima") {
    CHECK(fp_max(FpLayout::E1M2) == 3.5);
    CHECK(fp_max(FpLayout::E3M4) == 31.0);
    CHECK(outlier_layout_for(2) == FpLayout::E1M2);
    CHECK(outlier_layout_for(4) == FpLayout::E3M4);
    CHECK_THROWS_AS(outlier_layout_for(3), ConfigError);
}

TEST_CASE("mx spec validation") {
    CHECK_NOTHROW(MxSpec::mx_int(2, 128));
    CHECK_THROWS_AS(MxSpec::mx_int(3, 128), ConfigError);
    CHECK_THROWS_AS(MxSpec::mx_fp(4, 8, 16), ConfigError);
    CHECK(MxSpec::mx_fp(8, 8, 8).layout == FpLayout::E3M4);
}

TEST_CASE("pot scale") {
    const std::vector<double> v{0.5, -0.25, 0.25, 0.0};
    CHECK(compute_pot_scale(v, 1).value() == -1);
    CHECK(compute_pot_scale(std::vector<double>{0.0, 0.0}, 1).value() == 0);
    CHECK(compute_pot_scale(std::vector<double>{}, 1).value() == 0);
    CHECK(compute_pot_scale(std::vector<double>{7.0}, 7).value() == 0);
    CHECK(compute_pot_scale(std::vector<double>{7.5}, 7).value() == 1);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lg(-40.0, 40.0);
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> vals{std::exp2(lg(rng)), -std::exp2(lg(rng))};
        for (double mr : {1.0, 7.0, 3.5, 31.0, 127.0}) {
            CHECK(compute_pot_scale(vals, mr).value() == oracle::pot_exp(vals, mr));
        }
    }
}

TEST_CASE("int quantization rounds half to even and clips symmetrically") {
    const PotExponent e(-1);
    const std::vector<double> v{0.5, -0.25, 0.25, 0.0};
    std::vector<int> codes;
    for (double x : v) codes.push_back(quantize_int(x, e, 2));
    CHECK(codes == std::vector<int>{1, 0, 0, 0});
    CHECK(quantize_int(2.5, PotExponent(0), 4) == 2);
    CHECK(quantize_int(3.5, PotExponent(0), 4) == 4);
    CHECK(quantize_int(100.0, PotExponent(0), 4) == 7);
    CHECK(quantize_int(-100.0, PotExponent(0), 4) == -7);
    CHECK(quantize_int(-100.0, PotExponent(0), 2) == -1);
}

TEST_CASE("mx scale packing") {
    for (auto layout : {FpLayout::E1M2, FpLayout::E3M4}) {
        const int w = mu_x_width(layout);
        for (int l1 = -(1 << (7 - w)); l1 < (1 << (7 - w)); ++l1) {
            for (int mx = 0; mx < (1 << w); ++mx) {
                const MxScale s{PotExponent(l1), static_cast<std::uint8_t>(mx), layout};
                CHECK(MxScale::unpack(s.packed(), layout) == s);
            }
        }
        const MxScale too_big{PotExponent(1 << (7 - w)), 0, layout};
        CHECK_THROWS_AS((void)too_big.packed(), RangeError);
    }
}

TEST_CASE("fp element decode") {
    const MxScale s0{PotExponent(0), 0, FpLayout::E1M2};
    CHECK(decode_fp_elem({0, 0b10}, s0, PotExponent(0)) == 1.5);
    const MxScale s1{PotExponent(2), 1, FpLayout::E1M2};
    CHECK(decode_fp_elem({0, 0b00}, s1, PotExponent(-1)) == 16.0);
    CHECK(decode_fp_elem({1, 0b11}, s0, PotExponent(0)) == -1.75);
}

TEST_CASE("fp block of one outlier 1.5") {
    const std::vector<double> v{1.5};
    const auto b = quantize_fp_block(v, MxSpec::mx_fp(4, 8, 8));
    REQUIRE(b.elems.size() == 1);
    CHECK(b.elems[0].sign == 0);
    CHECK(b.elems[0].mantissa == 0b10);
    CHECK(decode_fp_elem(b.elems[0], b.scale, PotExponent(0)) == 1.5);
}

TEST_CASE("fp block rejects bad input") {
    const auto spec = MxSpec::mx_fp(4, 2, 2);
    CHECK_THROWS_AS(quantize_fp_block(std::vector<double>{}, spec), ConfigError);
    CHECK_THROWS_AS(quantize_fp_block(std::vector<double>{1, 2, 3}, spec), ConfigError);
    CHECK_THROWS_AS(quantize_fp_block(std::vector<double>{0.0}, spec), ConfigError);
}

TEST_CASE("fp block matches brute-force enumeration") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lg(-12.0, 12.0);
    std::uniform_int_distribution<int> cnt(1, 4);
    std::bernoulli_distribution neg(0.5);
    for (auto [bits, layout] : {std::pair{4, FpLayout::E1M2}, std::pair{8, FpLayout::E3M4}}) {
        const auto spec = MxSpec::mx_fp(bits, 8, 8);
        const auto info = layout_info(layout);
        for (int t = 0; t < 3000; ++t) {
            std::vector<double> v(cnt(rng));
            for (auto& x : v) x = (neg(rng) ? -1.0 : 1.0) * std::exp2(lg(rng) * (t % 3 == 0 ? 0.1 : 1.0));
            const auto o = oracle::fp_block(v, layout);
            const int field = 7 - mu_x_width(layout);
            if (o.level1 - info.bias < -(1 << field) || o.level1 - info.bias >= (1 << field)) {
                CHECK_THROWS_AS(quantize_fp_block(v, spec), RangeError);
                continue;
            }
            const auto b = quantize_fp_block(v, spec);
            CHECK(b.scale.level1.value() == o.level1 - info.bias);
            CHECK(b.scale.mu_x == o.mu_x);
            for (std::size_t i = 0; i < v.size(); ++i) {
                CHECK(b.elems[i].sign == o.signs[i]);
                CHECK(b.elems[i].mantissa == o.mantissas[i]);
                CHECK(decode_fp_elem(b.elems[i], b.scale, PotExponent(0)) == o.decoded[i]);
            }
        }
    }
}

TEST_CASE("two e1m2 outliers 2.0 and 3.0") {
    const std::vector<double> v{2.0, 3.0};
    const auto b = quantize_fp_block(v, MxSpec::mx_fp(4, 8, 8));
    const auto o = oracle::fp_block(v, FpLayout::E1M2);
    CHECK(decode_fp_elem(b.elems[0], b.scale, PotExponent(0)) == o.decoded[0]);
    CHECK(decode_fp_elem(b.elems[1], b.scale, PotExponent(0)) == o.decoded[1]);
    CHECK(o.decoded[0] == 2.0);
    CHECK(o.decoded[1] == 3.0);
}

TEST_CASE("encode is the inverse of decode on the block grid") {
    const MxScale s{PotExponent(-2), 1, FpLayout::E3M4};
    for (int sign = 0; sign < 2; ++sign) {
        for (int m = 0; m < 16; ++m) {
            const FpOutlierElem e{static_cast<std::uint8_t>(sign), static_cast<std::uint8_t>(m)};
            const double v = decode_fp_elem(e, s, PotExponent(-3));
            CHECK(encode_fp_elem(v, s, PotExponent(-3)) == e);
        }
    }
}
