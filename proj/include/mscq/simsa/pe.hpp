#pragma once

// Multi-precision processing element. A PE holds one bb=4 code (MODE_4b) or
// two bb=2 codes for two output channels sharing one iAct (MODE_2b).

#include <array>
#include <cstdint>

#include "mscq/quantizer.hpp"

namespace mscq::simsa {

enum class Mode : std::uint8_t { Mode2b, Mode4b };

/// Fixed-point accumulator value in units of 2^E0 for a per-run anchor E0.
using FixedAcc = std::int64_t;

struct PECell {
    int row = 0;
    int col = 0;
    int k = -1;  ///< position along d_in, -1 for an idle PE
    int slots = 1;
    std::array<std::uint8_t, 2> fields{};  ///< raw stored bb-bit fields
    std::array<SlotRole, 2> roles{SlotRole::Inlier, SlotRole::Inlier};
    int bb = 2;

    /// Signed operand of slot i: two's complement for inliers, sign-magnitude for halves.
    int operand(int i) const noexcept;
};

/// 4-bit x 2-bit multiplier, the building block of the multiplier tree.
int mul4x2(int a4, int w2) noexcept;

/// Products of each resident weight with iact, computed through 4b x 2b
/// partial products: a = a_hi * 16 + a_lo, w = w_hi * 4 + w_lo.
std::array<int, 2> pe_multiply(const PECell& pe, int iact, Mode mode);

/// Payload leaving a PE toward the next row or the ReCoN.
struct Payload {
    SlotRole role = SlotRole::Inlier;
    FixedAcc res = 0;   ///< shifted product for Upper/Lower halves
    FixedAcc iacc = 0;  ///< incoming accumulation, or the running sum for inliers
};

/// Upper/Lower halves forward {Res, iAcc} unmodified; inliers add the shifted product.
Payload pe_accumulate(SlotRole role, FixedAcc shifted_product, FixedAcc iacc) noexcept;

}  // namespace mscq::simsa
