#include "mscq/simsa/recon.hpp"

#include <bit>
#include <stdexcept>
#include <string>

namespace mscq::simsa {

namespace {

int log2_exact(int cols) {
    if (cols < 2 || (cols & (cols - 1)) != 0) throw std::logic_error("ReCoN width must be a power of two >= 2");
    return std::countr_zero(static_cast<unsigned>(cols));
}

Transfer route(const PairRequest& p, int bits, bool msb_first) {
    Transfer t{p.lower, p.upper, p.sign, {}};
    int pos = p.lower;
    for (int s = 1; s <= bits; ++s) {
        const int bit = msb_first ? bits - s : s - 1;
        if (((pos ^ p.upper) >> bit) & 1) pos ^= 1 << bit;
        t.path.push_back(pos);
    }
    t.path.push_back(p.upper);
    return t;
}

bool collides(const Transfer& a, const Transfer& b) {
    for (std::size_t s = 0; s + 1 < a.path.size(); ++s) {
        if (a.path[s] == b.path[s]) return true;
    }
    return false;
}

bool fits(const std::vector<Transfer>& pass, const Transfer& t) {
    for (const auto& o : pass) {
        if (collides(o, t)) return false;
    }
    return true;
}

RoutePass finish_pass(std::vector<Transfer> transfers, int cols, int stages) {
    RoutePass p;
    p.ops.assign(static_cast<std::size_t>(stages), std::vector<SwitchOp>(static_cast<std::size_t>(cols), SwitchOp::Pass));
    for (const auto& t : transfers) {
        p.ops[0][t.lower] = SwitchOp::Swap;
        for (int s = 2; s < stages; ++s) {
            if (t.path[s - 1] != t.path[s - 2]) p.ops[s - 1][t.path[s - 2]] = SwitchOp::Swap;
        }
        p.ops[stages - 1][t.upper] = SwitchOp::Merge;
    }
    p.transfers = std::move(transfers);
    return p;
}

}  // namespace

int recon_stages(int cols) { return log2_exact(cols) + 1; }

int switch_count(int cols) { return cols * recon_stages(cols); }

RoutePlan recon_plan(const std::vector<PairRequest>& pairs, int cols) {
    const int bits = log2_exact(cols);
    RoutePlan plan;
    plan.cols = cols;
    plan.stages = bits + 1;
    for (const auto& p : pairs) {
        if (p.lower < 0 || p.lower >= cols || p.upper < 0 || p.upper >= cols || p.lower == p.upper) {
            throw std::logic_error("unroutable pair " + std::to_string(p.lower) + " -> " + std::to_string(p.upper));
        }
    }
    if (pairs.empty()) return plan;

    for (bool msb : {true, false}) {
        std::vector<Transfer> all;
        bool ok = true;
        for (const auto& p : pairs) {
            auto t = route(p, bits, msb);
            ok = ok && fits(all, t);
            all.push_back(std::move(t));
        }
        if (ok) {
            plan.passes.push_back(finish_pass(std::move(all), cols, plan.stages));
            return plan;
        }
    }

    std::vector<std::vector<Transfer>> groups;
    for (const auto& p : pairs) {
        bool placed = false;
        for (auto& g : groups) {
            for (bool msb : {true, false}) {
                auto t = route(p, bits, msb);
                if (fits(g, t)) {
                    g.push_back(std::move(t));
                    placed = true;
                    break;
                }
            }
            if (placed) break;
        }
        if (!placed) groups.push_back({route(p, bits, true)});
    }
    for (auto& g : groups) plan.passes.push_back(finish_pass(std::move(g), cols, plan.stages));
    return plan;
}

FixedAcc recon_merge(const Payload& upper, const Payload& lower, FixedAcc iact_term, std::uint8_t sign, int bb) {
    const int su = bb == 2 ? 1 : 3;
    const int sl = bb == 2 ? 2 : 5;
    const FixedAcc hidden = sign ? -iact_term : iact_term;
    return (upper.res >> su) + (lower.res >> sl) + hidden + upper.iacc;
}

std::vector<FixedAcc> recon_apply(const RoutePlan& plan, const std::vector<Payload>& lanes,
                                  const std::vector<FixedAcc>& iact_terms, int bb) {
    if (static_cast<int>(lanes.size()) != plan.cols) throw std::logic_error("lane count differs from ReCoN width");
    std::vector<FixedAcc> out(lanes.size());
    std::vector<bool> served(lanes.size(), false);
    for (std::size_t c = 0; c < lanes.size(); ++c) out[c] = lanes[c].iacc;
    for (const auto& pass : plan.passes) {
        for (const auto& t : pass.transfers) {
            if (lanes[t.upper].role != SlotRole::Upper || lanes[t.lower].role != SlotRole::Lower) {
                throw std::logic_error("Merge needs an Upper payload and its matching Lower payload");
            }
            if (pass.ops[0][t.lower] != SwitchOp::Swap || pass.ops[plan.stages - 1][t.upper] != SwitchOp::Merge) {
                throw std::logic_error("route plan does not carry the transfer");
            }
            out[t.upper] = recon_merge(lanes[t.upper], lanes[t.lower], iact_terms[t.upper], t.sign, bb);
            served[t.upper] = served[t.lower] = true;
        }
    }
    for (std::size_t c = 0; c < lanes.size(); ++c) {
        if (lanes[c].role != SlotRole::Inlier && !served[c]) throw std::logic_error("outlier half without a route");
    }
    return out;
}

}  // namespace mscq::simsa
