#pragma once

// Packed on-disk layout of a quantized layer and effective-bit-width accounting.
//
// Stream (all integers little-endian, every section byte-aligned):
//   header    "MSCQ1", u16 version, u32 d_out, u32 d_in, u32 d_in_padded,
//             config echo, u32 number of flagged micro-blocks
//   payload   bb-bit fields packed LSB-first, row-major over d_out x d_in_padded
//   metadata  identifier bitmap (1 bit per micro-block, LSB-first),
//             i8 inlier exponent per macro-block,
//             one MXScale byte per flagged micro-block,
//             one permutation record per flagged micro-block

#include <cstdint>
#include <span>
#include <vector>

#include "mscq/quantizer.hpp"

namespace mscq {

inline constexpr std::uint16_t kLayoutVersion = 1;

std::vector<std::uint8_t> pack(const QuantizedLayer& q);

/// Throws FormatError naming the failed check ("magic", "truncated", "identifier-consistency", "perm-integrity", ...).
QuantizedLayer unpack(std::span<const std::uint8_t> bytes);

/// Fixed size of the header in bytes.
std::size_t header_size() noexcept;
/// Bytes of one permutation record: B_mu/2 entries of 2*log2(B_mu) bits, rounded up.
std::size_t perm_record_bytes(int mub) noexcept;
/// Bits of one permutation list, (B_mu/2) * 2 * log2(B_mu).
int perm_bits(int mub) noexcept;

/// Byte offsets of each section in a packed stream for q.
struct SectionOffsets {
    std::size_t payload = 0;
    std::size_t identifiers = 0;
    std::size_t i_sf = 0;
    std::size_t mx_scale = 0;
    std::size_t perm = 0;
    std::size_t end = 0;
};
SectionOffsets section_offsets(const QuantizedLayer& q);

struct EbwReport {
    double ebw_inlier = 0.0;
    double ebw_outlier = 0.0;
    double ebw_layer = 0.0;
    double ebw_strict = 0.0;  ///< ebw_layer plus identifier and inlier-scale bits
    double ebw_model = 0.0;
    double outlier_mub_fraction = 0.0;  ///< percent of micro-blocks carrying outliers
};

/// EBW_O for a bit budget and micro-block size with an 8-bit MXScale.
double ebw_outlier(int bb, int mub) noexcept;
/// (x * EBW_O + (100 - x) * bb) / 100 for x in percent.
double ebw_closed_form(int bb, int mub, double x_percent) noexcept;

EbwReport compute_ebw(const QuantizedLayer& q);
/// Model EBW is the unweighted mean of the per-layer values.
EbwReport compute_ebw(std::span<const QuantizedLayer> layers);

}  // namespace mscq
