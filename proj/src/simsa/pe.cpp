#include "mscq/simsa/pe.hpp"

namespace mscq::simsa {

int PECell::operand(int i) const noexcept {
    if (k < 0) return 0;
    if (roles[i] == SlotRole::Inlier) return decode_inlier_field(fields[i], bb);
    return half_value(fields[i], bb);
}

int mul4x2(int a4, int w2) noexcept { return a4 * w2; }

namespace {

// Signed 4-bit operand times signed 8-bit iact from two 4b x 2b multipliers.
int mul_w2(int w2, int a_hi, int a_lo) noexcept { return (mul4x2(a_hi, w2) << 4) + mul4x2(a_lo, w2); }

}  // namespace

std::array<int, 2> pe_multiply(const PECell& pe, int iact, Mode mode) {
    const int a_lo = iact & 0xF;
    const int a_hi = (iact - a_lo) >> 4;
    std::array<int, 2> out{0, 0};
    if (mode == Mode::Mode2b) {
        for (int i = 0; i < pe.slots; ++i) out[i] = mul_w2(pe.operand(i), a_hi, a_lo);
        return out;
    }
    const int w = pe.operand(0);
    const int w_lo = w & 0x3;
    const int w_hi = (w - w_lo) >> 2;
    out[0] = (mul4x2(a_hi, w_hi) << 6) + (mul4x2(a_hi, w_lo) << 4) + (mul4x2(a_lo, w_hi) << 2) + mul4x2(a_lo, w_lo);
    return out;
}

Payload pe_accumulate(SlotRole role, FixedAcc shifted_product, FixedAcc iacc) noexcept {
    if (role == SlotRole::Inlier) return {role, 0, iacc + shifted_product};
    return {role, shifted_product, iacc};
}

}  // namespace mscq::simsa
