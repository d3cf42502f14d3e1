#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "mscq/error.hpp"
#include "mscq/fixtures.hpp"
#include "mscq/reference.hpp"
#include "mscq/simsa/simsa.hpp"
#include "support/oracles.hpp"

using namespace mscq;
using namespace mscq::simsa;

namespace {

PECell inlier_cell(int bb, int code0, int code1 = 0, int slots = 1) {
    PECell pe;
    pe.k = 0;
    pe.bb = bb;
    pe.slots = slots;
    pe.fields = {encode_inlier_field(code0, bb), encode_inlier_field(code1, bb)};
    return pe;
}

QuantizedLayer random_layer(int d_out, int d_in, int bb, std::mt19937_64& rng, double frac = 0.03) {
    QuantConfig cfg;
    cfg.bb = bb;
    cfg.mab = 32;
    cfg.mub = 8;
    cfg.row_block = 32;
    cfg.overflow = OverflowPolicy::Demote;
    const Eigen::MatrixXd W = oracle::planted(d_out, d_in, rng, frac);
    return quantize_layer(W, oracle::gaussian(d_in, 2 * d_in, rng), cfg);
}

ActQuant random_acts(int d_in, int tokens, std::mt19937_64& rng, int bits = 8) {
    return quantize_activations(oracle::gaussian(d_in, tokens, rng), bits);
}

}  // namespace

TEST_CASE("multiplier tree equals the direct product") {
    for (int a = -128; a <= 127; ++a) {
        for (int w = -7; w <= 7; ++w) CHECK(pe_multiply(inlier_cell(4, w), a, Mode::Mode4b)[0] == w * a);
        for (int w0 = -1; w0 <= 1; ++w0) {
            for (int w1 = -1; w1 <= 1; ++w1) {
                const auto p = pe_multiply(inlier_cell(2, w0, w1, 2), a, Mode::Mode2b);
                CHECK(p[0] == w0 * a);
                CHECK(p[1] == w1 * a);
            }
        }
        PECell half = inlier_cell(4, 0);
        half.roles[0] = SlotRole::Upper;
        for (int f = 0; f < 16; f += 2) {
            half.fields[0] = static_cast<std::uint8_t>(f);
            CHECK(pe_multiply(half, a, Mode::Mode4b)[0] == half_value(half.fields[0], 4) * a);
        }
    }
    CHECK(pe_multiply(inlier_cell(4, 5), 3, Mode::Mode4b)[0] == 15);
    const auto p = pe_multiply(inlier_cell(2, 1, -1, 2), 7, Mode::Mode2b);
    CHECK(p[0] == 7);
    CHECK(p[1] == -7);
    CHECK(pe_multiply(inlier_cell(4, 0), 99, Mode::Mode4b)[0] == 0);
}

TEST_CASE("pe accumulate") {
    CHECK(pe_accumulate(SlotRole::Inlier, 48, 8).iacc == 56);
    const auto up = pe_accumulate(SlotRole::Upper, 32, 8);
    CHECK(up.res == 32);
    CHECK(up.iacc == 8);
    CHECK(pe_accumulate(SlotRole::Inlier, 0, 13).iacc == 13);
}

TEST_CASE("route plan for the walkthrough pair") {
    const auto plan = recon_plan({{3, 2, 0}}, 4);
    REQUIRE(plan.pass_count() == 1);
    CHECK(plan.stages == 3);
    const auto& ops = plan.passes[0].ops;
    CHECK(ops[0][3] == SwitchOp::Swap);
    CHECK(ops[1][3] == SwitchOp::Swap);
    CHECK(ops[2][2] == SwitchOp::Merge);
    int non_pass = 0;
    for (const auto& st : ops) {
        for (auto o : st) non_pass += o != SwitchOp::Pass;
    }
    CHECK(non_pass == 3);
}

TEST_CASE("switch counts and empty plans") {
    CHECK(switch_count(16) == 80);
    CHECK(switch_count(8) == 32);
    CHECK(switch_count(64) == 448);
    const auto empty = recon_plan({}, 8);
    CHECK(empty.pass_count() == 0);
    std::vector<Payload> lanes(8);
    for (int c = 0; c < 8; ++c) lanes[c] = {SlotRole::Inlier, 0, c * 10};
    const auto out = recon_apply(empty, lanes, std::vector<FixedAcc>(8, 0), 2);
    for (int c = 0; c < 8; ++c) CHECK(out[c] == c * 10);
    CHECK_THROWS_AS(recon_plan({{9, 1, 0}}, 8), std::logic_error);
}

TEST_CASE("route plans deliver every pair") {
    std::mt19937_64 rng(4);
    for (int cols : {8, 16, 64}) {
        for (int t = 0; t < 300; ++t) {
            std::vector<int> perm(cols);
            for (int i = 0; i < cols; ++i) perm[i] = i;
            std::shuffle(perm.begin(), perm.end(), rng);
            const int n = 1 + static_cast<int>(rng() % (cols / 2));
            std::vector<PairRequest> pairs;
            for (int i = 0; i < n; ++i) pairs.push_back({perm[2 * i], perm[2 * i + 1], 0});
            const auto plan = recon_plan(pairs, cols);
            int delivered = 0;
            for (const auto& pass : plan.passes) {
                std::set<std::pair<int, int>> used;
                for (const auto& tr : pass.transfers) {
                    CHECK(tr.path.back() == tr.upper);
                    CHECK(pass.ops[0][tr.lower] == SwitchOp::Swap);
                    CHECK(pass.ops[plan.stages - 1][tr.upper] == SwitchOp::Merge);
                    for (std::size_t s = 0; s + 1 < tr.path.size(); ++s) CHECK(used.insert({int(s), tr.path[s]}).second);
                    ++delivered;
                }
            }
            CHECK(delivered == n);
        }
    }
}

TEST_CASE("merge arithmetic") {
    const Payload up{SlotRole::Upper, 32, 8};
    const Payload lo{SlotRole::Lower, 0, 0};
    CHECK(recon_merge(up, lo, 32, 0, 2) == 56);
    CHECK(recon_merge({SlotRole::Upper, 0, 5}, {SlotRole::Lower, 0, 0}, 0, 0, 2) == 5);

    // Against decode * iact for every outlier code.
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> act(-127, 127);
    for (int bb : {2, 4}) {
        const int frac = bb == 2 ? 2 : 4;
        const auto layout = outlier_layout_for(bb);
        const int mbits = bb == 2 ? 2 : 4;
        for (int s = 0; s < 2; ++s) {
            for (int m = 0; m < (1 << mbits); ++m) {
                for (int t = 0; t < 20; ++t) {
                    const FpOutlierElem e{static_cast<std::uint8_t>(s), static_cast<std::uint8_t>(m)};
                    const MxScale sc{PotExponent(0), 0, layout};
                    const double v = decode_fp_elem(e, sc, PotExponent(0));
                    const int a = act(rng);
                    const FixedAcc iacc = act(rng);
                    const auto h = split_outlier(e, bb);
                    const FixedAcc unit = FixedAcc{1} << frac;
                    const Payload pu{SlotRole::Upper, half_value(h.upper, bb) * a * unit, iacc};
                    const Payload pl{SlotRole::Lower, half_value(h.lower, bb) * a * unit, 0};
                    const FixedAcc got = recon_merge(pu, pl, a * unit, e.sign, bb);
                    CHECK(static_cast<double>(got) == v * a * unit + iacc);
                }
            }
        }
    }
}

TEST_CASE("walkthrough end to end") {
    const auto q = walkthrough_layer();
    const auto a = walkthrough_acts();
    SimConfig cfg;
    cfg.rows = 4;
    cfg.cols = 4;
    cfg.num_recon = 1;
    const auto m = map_layer(q, cfg);
    REQUIRE(m.tiles.size() == 1);
    CHECK_FALSE(m.tiles[0].rows[0].outlier);
    CHECK(m.tiles[0].rows[1].outlier);
    const auto r = simulate_gemm(q, a, cfg);
    CHECK(r.values()(0, 0) == 56.0);
    CHECK(r.stats.recon_accesses == 1);
    CHECK(r.stats.recon_conflicts == 0);
    const Eigen::MatrixXd ref = reference_gemm<double>(dequantize_layer(q), dequantize(a));
    CHECK(ref(0, 0) == 56.0);
}

TEST_CASE("identity weights pass activations through") {
    QuantConfig qc;
    qc.bb = 2;
    qc.mab = 16;
    qc.mub = 8;
    qc.row_block = 16;
    qc.sigma_mult = 100.0;
    const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(16, 16);
    Eigen::MatrixXd I16 = Eigen::MatrixXd::Identity(16, 16);
    HessianState h{I16, I16, 0.0};
    const auto q = quantize_layer(W, h, qc);
    std::mt19937_64 rng(2);
    const auto a = random_acts(16, 5, rng);
    for (auto mode : {Mode::Mode2b, Mode::Mode4b}) {
        SimConfig cfg;
        cfg.rows = 2;
        cfg.cols = 8;
        cfg.mode = mode;
        const auto r = simulate_gemm(q, a, cfg);
        CHECK(r.values() == dequantize(a));
        CHECK(r.stats.recon_accesses == 0);
    }
}

TEST_CASE("simulator equals the reference exactly") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 12; ++trial) {
        const int bb = trial % 2 ? 4 : 2;
        const auto q = random_layer(16, 64, bb, rng, 0.04);
        const auto a = random_acts(64, 8, rng, trial % 3 ? 8 : 4);
        const Eigen::MatrixXd ref = reference_gemm<double>(dequantize_layer(q), dequantize(a));
        for (auto mode : {Mode::Mode2b, Mode::Mode4b}) {
            if (bb == 4 && mode == Mode::Mode2b) continue;
            for (int nr : {1, 2, 4}) {
                SimConfig cfg;
                cfg.rows = 4;
                cfg.cols = 8;
                cfg.mode = mode;
                cfg.num_recon = nr;
                const auto r = simulate_gemm(q, a, cfg);
                Eigen::MatrixXd scaled = ref * std::ldexp(1.0, -r.e0);
                CHECK((scaled.array() == scaled.array().round()).all());
                CHECK((r.values() - ref).cwiseAbs().maxCoeff() == 0.0);
                if (nr == 4) CHECK(r.stats.recon_conflicts == 0);
            }
        }
    }
}

TEST_CASE("mapping geometry") {
    std::mt19937_64 rng(1);
    const auto q4 = random_layer(2, 64, 4, rng);
    SimConfig cfg;
    cfg.rows = 8;
    cfg.cols = 8;
    cfg.mode = Mode::Mode2b;
    CHECK_THROWS_AS(map_layer(q4, cfg), ConfigError);
    cfg.mode = Mode::Mode4b;
    const auto m4 = map_layer(q4, cfg);
    CHECK(m4.tiles.size() == 2);
    cfg.cols = 4;
    CHECK_THROWS_AS(map_layer(q4, cfg), ShapeError);

    const auto q2 = random_layer(4, 64, 2, rng);
    cfg.cols = 8;
    const auto a = map_layer(q2, cfg);
    cfg.mode = Mode::Mode2b;
    const auto b = map_layer(q2, cfg);
    CHECK(a.tiles.size() == 4);
    CHECK(b.tiles.size() == 2);
}

TEST_CASE("timing properties") {
    std::mt19937_64 rng(30);
    const auto q = random_layer(8, 128, 2, rng, 0.08);
    const auto a = random_acts(128, 16, rng);
    for (auto mode : {Mode::Mode2b, Mode::Mode4b}) {
        long prev = -1;
        for (int nr : {1, 2, 4, 8}) {
            SimConfig cfg;
            cfg.rows = 8;
            cfg.cols = 8;
            cfg.mode = mode;
            cfg.num_recon = nr;
            const auto r = simulate_gemm(q, a, cfg);
            if (prev >= 0) CHECK(r.stats.total_cycles <= prev);
            prev = r.stats.total_cycles;
            if (nr == 8) CHECK(r.stats.recon_conflicts == 0);
            const auto r2 = simulate_gemm(q, a, cfg);
            CHECK(r2.stats.total_cycles == r.stats.total_cycles);
            CHECK(r2.stats.recon_conflicts == r.stats.recon_conflicts);
            CHECK(r.stats.conflict_pct ==
                  doctest::Approx(r.stats.recon_accesses ? 100.0 * r.stats.recon_conflicts / r.stats.recon_accesses : 0.0));
        }
    }
    SimConfig c2, c4;
    c2.rows = c4.rows = 8;
    c2.cols = c4.cols = 8;
    c2.mode = Mode::Mode2b;
    const auto r2 = simulate_gemm(q, a, c2);
    const auto r4 = simulate_gemm(q, a, c4);
    CHECK(r2.stats.total_cycles < r4.stats.total_cycles);
    CHECK(r2.values() == r4.values());
}

TEST_CASE("arbiter contention") {
    ReconArbiter arb(4, 1);
    arb.submit({1, 0, 5, 1});
    arb.submit({2, 1, 5, 1});
    long g1 = -1, g2 = -1;
    for (long c = 0; c < 10; ++c) {
        for (const auto& g : arb.step(c)) (g.id == 1 ? g1 : g2) = g.granted;
    }
    CHECK(g1 == 5);
    CHECK(g2 == 6);
    CHECK(arb.idle());
    // Round-robin resumes after the last winner (row 1), so row 0 precedes row 1.
    arb.submit({3, 0, 20, 1});
    arb.submit({4, 1, 20, 1});
    long h3 = -1, h4 = -1;
    for (long c = 20; c < 25; ++c) {
        for (const auto& g : arb.step(c)) (g.id == 3 ? h3 : h4) = g.granted;
    }
    CHECK(h3 == 20);
    CHECK(h4 == 21);
    CHECK(ReconArbiter(8, 2).unit_of(3) == 0);
    CHECK(ReconArbiter(8, 2).unit_of(4) == 1);
}

TEST_CASE("post processing") {
    CHECK(shift_round_even(5, 1) == 2);
    CHECK(shift_round_even(7, 1) == 4);
    CHECK(shift_round_even(-5, 1) == -2);
    CHECK(shift_round_even(-7, 1) == -4);
    CHECK(shift_round_even(3, -2) == 12);

    std::mt19937_64 rng(40);
    const auto q = random_layer(16, 64, 2, rng, 0.04);
    const auto a = random_acts(64, 4, rng);
    SimConfig cfg;
    cfg.rows = 4;
    cfg.cols = 8;
    const auto r = simulate_gemm(q, a, cfg);
    for (int bits : {4, 8}) {
        const auto p = post_process(r, q, a, bits);
        const Eigen::MatrixXd back = dequantize(p.out);
        const Eigen::MatrixXd ref = r.values();
        for (Eigen::Index t = 0; t < ref.cols(); ++t) {
            for (Eigen::Index n = 0; n < ref.rows(); ++n) {
                CHECK(std::abs(back(n, t) - ref(n, t)) <= std::ldexp(1.0, p.out.exp_at(n, t)));
            }
        }
    }
    SimResult zero = r;
    zero.acc.setZero();
    const auto pz = post_process(zero, q, a, 8);
    CHECK(pz.out.codes.isZero());
}

TEST_CASE("output scale is additive") {
    auto q = walkthrough_layer();
    q.blocks[1].mx_scale->level1 = PotExponent(-3);
    auto a = walkthrough_acts();
    a.exps(0, 0) = -2;
    SimConfig cfg;
    cfg.rows = 4;
    cfg.cols = 4;
    const auto r = simulate_gemm(q, a, cfg);
    const auto p = post_process(r, q, a, 8);
    CHECK(p.oact_sf(0, 0) == -5);
}
