#pragma once

// ReCoN: a multistage butterfly of log2(cols)+1 stages that carries each
// Lower half to its Upper column and merges the two there.

#include <cstdint>
#include <vector>

#include "mscq/simsa/pe.hpp"

namespace mscq::simsa {

enum class SwitchOp : std::uint8_t { Pass = 0b001, Swap = 0b010, Merge = 0b100 };

struct ReCoNSwitch {
    int stage = 0;  ///< 1-based
    int index = 0;
    SwitchOp op = SwitchOp::Pass;
};

/// One Lower -> Upper transfer with the lane it occupies after every stage.
struct Transfer {
    int lower = 0;
    int upper = 0;
    std::uint8_t sign = 0;
    std::vector<int> path;  ///< position after stage s at path[s-1]
};

/// Pass p holds the transfers routed together and the switch settings,
/// ops[s-1][col] for stage s.
struct RoutePass {
    std::vector<Transfer> transfers;
    std::vector<std::vector<SwitchOp>> ops;
};

struct RoutePlan {
    int cols = 0;
    int stages = 0;
    std::vector<RoutePass> passes;

    int pass_count() const noexcept { return static_cast<int>(passes.size()); }
};

int recon_stages(int cols);
/// Switches instantiated in one ReCoN unit, cols * (log2(cols) + 1).
int switch_count(int cols);

struct PairRequest {
    int lower = 0;
    int upper = 0;
    std::uint8_t sign = 0;
};

/// Bit-fixing route for every pair: detach (Swap) at the Lower column in
/// stage 1, fix one address bit per stage MSB-first, Merge at the Upper column
/// in the last stage. On a lane collision the LSB-first order is tried, then
/// the pairs are split across extra passes. Throws std::logic_error if a
/// column is out of range.
RoutePlan recon_plan(const std::vector<PairRequest>& pairs, int cols);

/// Merge: (U.res >> su) + (L.res >> sl) + (-1)^sign * iact_term + U.iacc, with
/// su/sl = 1/2 for bb=2 and 3/5 for bb=4. iact_term is the hidden-bit iAct
/// already shifted into FixedAcc units.
FixedAcc recon_merge(const Payload& upper, const Payload& lower, FixedAcc iact_term, std::uint8_t sign, int bb);

/// Runs PE-row payloads through the plan. iact_terms[c] is the hidden-bit term
/// for an Upper at column c. Returns the value each column hands to the next row.
std::vector<FixedAcc> recon_apply(const RoutePlan& plan, const std::vector<Payload>& lanes,
                                  const std::vector<FixedAcc>& iact_terms, int bb);

}  // namespace mscq::simsa
