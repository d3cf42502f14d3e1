#include "mscq/simsa/simsa.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "mscq/error.hpp"

namespace mscq::simsa {

namespace {

bool pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int effective_frac(int frac_bits, int bb) { return std::max(frac_bits, bb == 2 ? 2 : 4); }

constexpr int kMaxShift = 40;

}  // namespace

void SimConfig::validate() const {
    if (!pow2(rows) || !pow2(cols) || cols < 2) throw ConfigError("array rows and cols must be powers of two, cols >= 2");
    if (num_recon < 1 || num_recon > rows) throw ConfigError("number of ReCoN units must lie in [1, rows]");
    if (frac_bits < 0 || frac_bits > 16) throw ConfigError("accumulator fraction bits must lie in [0, 16]");
}

Eigen::MatrixXd SimResult::values() const {
    Eigen::MatrixXd v(acc.rows(), acc.cols());
    for (Eigen::Index i = 0; i < acc.size(); ++i) v(i) = std::ldexp(static_cast<double>(acc(i)), e0);
    return v;
}

long delivery_cycle(long grant, int passes, int stages) noexcept { return grant + passes - 1 + stages; }

LayerMap map_layer(const QuantizedLayer& q, const SimConfig& cfg) {
    cfg.validate();
    const int bb = q.cfg.bb;
    const int mub = q.cfg.mub;
    if (bb == 4 && cfg.mode == Mode::Mode2b) throw ConfigError("MODE_2b holds two 2-bit weights per PE; bb=4 needs MODE_4b");
    if (cfg.cols < mub || cfg.cols % mub != 0) {
        throw ShapeError("array width " + std::to_string(cfg.cols) + " is not a multiple of the micro-block size " +
                         std::to_string(mub));
    }
    LayerMap m;
    m.cfg = cfg;
    m.bb = bb;
    const int per_tile = cfg.rows * cfg.cols;
    m.chunks = q.d_in_padded == 0 ? 0 : (q.d_in_padded + per_tile - 1) / per_tile;
    const int group = cfg.mode == Mode::Mode2b ? 2 : 1;

    for (int n0 = 0; n0 < q.d_out; n0 += group) {
        for (int chunk = 0; chunk < m.chunks; ++chunk) {
            Tile t;
            t.chunk = chunk;
            t.channels[0] = n0;
            if (group == 2 && n0 + 1 < q.d_out) t.channels[1] = n0 + 1;
            t.cells.resize(static_cast<std::size_t>(per_tile));
            t.rows.resize(static_cast<std::size_t>(cfg.rows));
            for (int r = 0; r < cfg.rows; ++r) {
                RowInfo& info = t.rows[r];
                std::array<std::vector<PairRequest>, 2> pairs;
                for (int c = 0; c < cfg.cols; ++c) {
                    PECell& pe = t.cells[static_cast<std::size_t>(r) * cfg.cols + c];
                    pe.row = r;
                    pe.col = c;
                    pe.bb = bb;
                    pe.slots = t.slots();
                    const int k = chunk * per_tile + r * cfg.cols + c;
                    if (k >= q.d_in_padded) continue;
                    pe.k = k;
                    for (int s = 0; s < t.slots(); ++s) {
                        const auto& blk = q.block(t.channels[s], k / mub);
                        pe.fields[s] = blk.codes[k % mub];
                        pe.roles[s] = blk.role(k % mub);
                    }
                }
                for (int s = 0; s < t.slots(); ++s) {
                    for (int c0 = 0; c0 < cfg.cols; c0 += mub) {
                        const int k0 = chunk * per_tile + r * cfg.cols + c0;
                        if (k0 >= q.d_in_padded) break;
                        const auto& blk = q.block(t.channels[s], k0 / mub);
                        if (!blk.perm) continue;
                        for (const auto& e : blk.perm->entries) {
                            if (!e.live()) break;
                            const auto sign = static_cast<std::uint8_t>((blk.codes[e.upper_loc] >> (bb - 1)) & 1);
                            pairs[s].push_back({c0 + e.lower_loc, c0 + e.upper_loc, sign});
                        }
                    }
                    info.plans[s] = recon_plan(pairs[s], cfg.cols);
                    info.passes += info.plans[s].pass_count();
                }
                info.outlier = info.passes > 0;
            }
            m.tiles.push_back(std::move(t));
        }
    }
    return m;
}

int accumulator_anchor(const QuantizedLayer& q, const ActQuant& a, int frac_bits) {
    int wmin = std::numeric_limits<int>::max();
    for (auto e : q.i_sf) wmin = std::min(wmin, static_cast<int>(e));
    for (int r = 0; r < q.d_out; ++r) {
        for (int b = 0; b < q.mubs_per_row(); ++b) {
            if (q.block(r, b).mx_scale) wmin = std::min(wmin, q.outlier_exp(r, b));
        }
    }
    if (wmin == std::numeric_limits<int>::max()) wmin = 0;
    const int amin = a.exps.size() ? a.exps.minCoeff() : 0;
    return wmin + amin - effective_frac(frac_bits, q.cfg.bb);
}

namespace {

struct ExpTable {
    std::vector<int> weight;  ///< per (row, micro-block): I_sf of the containing macro-block
    std::vector<int> outlier; ///< per (row, micro-block): O_sf, or 0
};

ExpTable exp_table(const QuantizedLayer& q) {
    ExpTable t;
    const std::size_t n = q.blocks.size();
    t.weight.resize(n);
    t.outlier.assign(n, 0);
    for (int r = 0; r < q.d_out; ++r) {
        for (int b = 0; b < q.mubs_per_row(); ++b) {
            const std::size_t i = static_cast<std::size_t>(r) * q.mubs_per_row() + b;
            t.weight[i] = q.inlier_exp(r, b * q.cfg.mub).value();
            if (q.blocks[i].mx_scale) t.outlier[i] = q.outlier_exp(r, b);
        }
    }
    return t;
}

FixedAcc shifted(long long v, int shift) {
    if (v == 0) return 0;
    if (shift < 0 || shift > kMaxShift) {
        throw NumericError("operand exponent spread exceeds the accumulator range (shift " + std::to_string(shift) + ")");
    }
    return static_cast<FixedAcc>(v) * (FixedAcc{1} << shift);
}

// Functional pass over one tile for one token: adds bottom-lane sums into y.
void run_tile_functional(const Tile& tile, const LayerMap& m, const QuantizedLayer& q, const ActQuant& a,
                         const ExpTable& ex, int e0, int token, SimResult& res, FixedAcc sat_bound) {
    const int R = m.cfg.rows;
    const int C = m.cfg.cols;
    const int mub = q.cfg.mub;
    const int slots = tile.slots();
    std::array<std::vector<FixedAcc>, 2> lanes;
    for (int s = 0; s < slots; ++s) lanes[s].assign(static_cast<std::size_t>(C), 0);

    auto act_code = [&](int k) { return k < q.d_in ? a.codes(k, token) : 0; };
    auto act_exp = [&](int k) { return k < q.d_in ? a.exp_at(k, token) : 0; };

    for (int r = 0; r < R; ++r) {
        const RowInfo& info = tile.rows[r];
        for (int s = 0; s < slots; ++s) {
            std::vector<Payload> payloads(static_cast<std::size_t>(C));
            std::vector<FixedAcc> hidden(static_cast<std::size_t>(C), 0);
            // Upper position feeding each Lower column.
            std::vector<int> steer(static_cast<std::size_t>(C), -1);
            for (const auto& pass : info.plans[s].passes) {
                for (const auto& t : pass.transfers) steer[t.lower] = t.upper;
            }
            for (int c = 0; c < C; ++c) {
                const PECell& pe = tile.cells[static_cast<std::size_t>(r) * C + c];
                if (pe.k < 0) {
                    payloads[c] = {SlotRole::Inlier, 0, lanes[s][c]};
                    continue;
                }
                const int src_col = pe.roles[s] == SlotRole::Lower ? steer[c] : c;
                const int src_k = pe.k - c + src_col;
                const int iact = act_code(src_k);
                const int aexp = act_exp(src_k);
                const auto prod = pe_multiply(pe, iact, m.cfg.mode);
                const std::size_t bi = static_cast<std::size_t>(tile.channels[s]) * q.mubs_per_row() + pe.k / mub;
                const int wexp = pe.roles[s] == SlotRole::Inlier ? ex.weight[bi] : ex.outlier[bi];
                const int sh = wexp + aexp - e0;
                payloads[c] = pe_accumulate(pe.roles[s], shifted(prod[m.cfg.mode == Mode::Mode2b ? s : 0], sh), lanes[s][c]);
                if (pe.roles[s] == SlotRole::Upper) hidden[c] = shifted(iact, sh);
                ++res.stats.pe_mac_count;
            }
            if (info.plans[s].passes.empty()) {
                for (int c = 0; c < C; ++c) lanes[s][c] = payloads[c].iacc;
            } else {
                lanes[s] = recon_apply(info.plans[s], payloads, hidden, m.bb);
            }
            for (int c = 0; c < C; ++c) {
                if (lanes[s][c] > sat_bound || lanes[s][c] < -sat_bound) ++res.stats.saturations;
            }
        }
    }
    for (int s = 0; s < slots; ++s) {
        FixedAcc sum = 0;
        for (int c = 0; c < C; ++c) sum += lanes[s][c];
        res.acc(tile.channels[s], token) += sum;
    }
}

// Cycle loop for one tile; returns the cycles the tile occupies.
long run_tile_timing(const Tile& tile, int tile_idx, const LayerMap& m, int tokens, long base, SimResult& res,
                     bool trace) {
    const int R = m.cfg.rows;
    const int C = m.cfg.cols;
    const int S = recon_stages(C);
    constexpr long kUnknown = -1;
    std::vector<std::vector<long>> w(R, std::vector<long>(tokens, kUnknown));
    auto out = w;
    auto g = w;
    std::vector<int> next(R, 0);
    ReconArbiter arb(R, m.cfg.num_recon);
    auto emit = [&](long cyc, int row, int tok, const char* ev) {
        if (trace) res.trace.push_back({base + cyc, tile_idx, row, tok, ev});
    };

    long last = 0;
    int finished = 0;
    const long limit = 64L * (R + C + S + 4) * (tokens + 1) * (1 + m.cfg.rows);
    for (long c = 0; finished < tokens; ++c) {
        if (c > limit) throw std::logic_error("timing model failed to converge");
        for (int r = 0; r < R; ++r) {
            const int t = next[r];
            if (t >= tokens) continue;
            const long arr = r == 0 ? t : out[r - 1][t];
            if (arr == kUnknown || arr > c) continue;
            if (t > 0 && c < w[r][t - 1] + 1) continue;
            const RowInfo& info = tile.rows[r];
            if (info.outlier && t > 0 && (g[r][t - 1] == kUnknown || c < g[r][t - 1] + info.passes - C)) continue;
            w[r][t] = c;
            ++next[r];
            emit(c, r, t, "start");
            if (!info.outlier) {
                out[r][t] = c + 1;
            } else {
                arb.submit({static_cast<long>(r) * tokens + t, r, c + C, info.passes});
                emit(c + C, r, t, "request");
            }
            if (r == R - 1 && out[r][t] != kUnknown) {
                ++finished;
                last = std::max(last, out[r][t]);
            }
        }
        for (const auto& gr : arb.step(c)) {
            const int r = gr.row;
            const int t = static_cast<int>(gr.id % tokens);
            g[r][t] = gr.granted;
            const int passes = tile.rows[r].passes;
            out[r][t] = delivery_cycle(gr.granted, passes, S);
            ++res.stats.recon_accesses;
            res.stats.recon_passes += passes;
            if (gr.granted > gr.requested) ++res.stats.recon_conflicts;
            emit(gr.granted, r, t, "grant");
            emit(out[r][t], r, t, "deliver");
            if (r == R - 1) {
                ++finished;
                last = std::max(last, out[r][t]);
            }
        }
    }
    return R + last + 1;
}

}  // namespace

SimResult simulate_gemm(const QuantizedLayer& q, const ActQuant& a, const SimConfig& cfg, bool trace) {
    if (a.codes.rows() != q.d_in) {
        throw ShapeError("activations have " + std::to_string(a.codes.rows()) + " channels, layer expects " +
                         std::to_string(q.d_in));
    }
    if (a.codes.size() && a.codes.cwiseAbs().maxCoeff() > 127) throw ConfigError("iActs must fit 8-bit signed");
    const LayerMap m = map_layer(q, cfg);
    const int tokens = static_cast<int>(a.codes.cols());

    SimResult res;
    res.frac_bits = effective_frac(cfg.frac_bits, q.cfg.bb);
    res.e0 = accumulator_anchor(q, a, cfg.frac_bits);
    res.acc = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(q.d_out, tokens);
    res.stats.switches_per_unit = switch_count(cfg.cols);
    res.stats.tiles = static_cast<long>(m.tiles.size());
    const ExpTable ex = exp_table(q);
    const FixedAcc sat_bound = FixedAcc{1} << (31 + res.frac_bits);

    long cycles = 0;
    for (std::size_t i = 0; i < m.tiles.size(); ++i) {
        for (int t = 0; t < tokens; ++t) run_tile_functional(m.tiles[i], m, q, a, ex, res.e0, t, res, sat_bound);
        if (tokens > 0) cycles += run_tile_timing(m.tiles[i], static_cast<int>(i), m, tokens, cycles, res, trace);
    }
    auto& st = res.stats;
    st.total_cycles = cycles;
    st.conflict_pct = st.recon_accesses ? 100.0 * static_cast<double>(st.recon_conflicts) / st.recon_accesses : 0.0;
    const double capacity = static_cast<double>(cfg.rows) * cfg.cols * (cfg.mode == Mode::Mode2b ? 2 : 1) * cycles;
    st.utilization = capacity > 0 ? static_cast<double>(st.pe_mac_count) / capacity : 0.0;
    return res;
}

std::int64_t shift_round_even(std::int64_t x, int s) {
    if (s <= 0) return x * (std::int64_t{1} << -s);
    if (s >= 62) return 0;
    const std::int64_t d = std::int64_t{1} << s;
    std::int64_t q = x >> s;  // floor
    const std::int64_t rem = x - q * d;
    const std::int64_t half = d >> 1;
    if (rem > half || (rem == half && (q & 1))) ++q;
    return q;
}

PostProcessed post_process(const SimResult& r, const QuantizedLayer& q, const ActQuant& a, int out_bits) {
    if (out_bits != 4 && out_bits != 8) throw ConfigError("output width must be 4 or 8 bits");
    const auto d_out = r.acc.rows();
    const auto tokens = r.acc.cols();
    const int group = kActGroup;
    const auto groups = (d_out + group - 1) / group;
    PostProcessed p;
    p.out.bits = out_bits;
    p.out.group = group;
    p.out.codes = Eigen::MatrixXi::Zero(d_out, tokens);
    p.out.exps = Eigen::MatrixXi::Zero(groups, tokens);
    p.oact_sf = Eigen::MatrixXi::Zero(groups, tokens);

    std::vector<int> o_ref(static_cast<std::size_t>(groups));
    for (Eigen::Index gi = 0; gi < groups; ++gi) {
        int omax = std::numeric_limits<int>::min();
        int imax = std::numeric_limits<int>::min();
        for (Eigen::Index n = gi * group; n < std::min<Eigen::Index>(d_out, (gi + 1) * group); ++n) {
            for (int b = 0; b < q.mubs_per_row(); ++b) {
                imax = std::max(imax, q.inlier_exp(static_cast<int>(n), b * q.cfg.mub).value());
                if (q.block(static_cast<int>(n), b).mx_scale) omax = std::max(omax, q.outlier_exp(static_cast<int>(n), b));
            }
        }
        o_ref[gi] = omax != std::numeric_limits<int>::min() ? omax : (imax != std::numeric_limits<int>::min() ? imax : 0);
    }

    const int qmax = int_max_code(out_bits);
    std::vector<double> vals;
    std::vector<std::int64_t> ints;
    for (Eigen::Index t = 0; t < tokens; ++t) {
        const int iact_sf = a.exps.rows() ? a.exps.col(t).maxCoeff() : 0;
        for (Eigen::Index gi = 0; gi < groups; ++gi) {
            const int oact = o_ref[gi] + iact_sf;
            p.oact_sf(gi, t) = oact;
            const auto begin = gi * group;
            const auto len = std::min<Eigen::Index>(group, d_out - begin);
            ints.resize(len);
            vals.resize(len);
            for (Eigen::Index i = 0; i < len; ++i) {
                ints[i] = shift_round_even(r.acc(begin + i, t), oact - r.e0);
                vals[i] = static_cast<double>(ints[i]);
            }
            const int extra = std::max(0, compute_pot_scale(vals, qmax).value());
            const PotExponent e(extra);
            p.out.exps(gi, t) = PotExponent(oact + extra).value();
            for (Eigen::Index i = 0; i < len; ++i) p.out.codes(begin + i, t) = quantize_int(vals[i], e, out_bits);
        }
    }
    return p;
}

}  // namespace mscq::simsa
