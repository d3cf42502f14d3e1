#include "mscq/layout.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <string>

#include "mscq/error.hpp"

namespace mscq {

namespace {

constexpr char kMagic[5] = {'M', 'S', 'C', 'Q', '1'};

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const noexcept { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("truncated", "stream ends inside a section");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

/// LSB-first bit stream over a byte buffer.
class BitWriter {
public:
    explicit BitWriter(std::size_t nbits) : buf_((nbits + 7) / 8, 0) {}
    void put(std::size_t bit, std::uint32_t value, int width) {
        for (int i = 0; i < width; ++i) {
            if ((value >> i) & 1u) buf_[(bit + i) / 8] |= static_cast<std::uint8_t>(1u << ((bit + i) % 8));
        }
    }
    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

std::uint32_t get_bits(std::span<const std::uint8_t> buf, std::size_t bit, int width) {
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) {
        v |= static_cast<std::uint32_t>((buf[(bit + i) / 8] >> ((bit + i) % 8)) & 1u) << i;
    }
    return v;
}

std::uint16_t checked_u16(int v, const char* what) {
    if (v < 0 || v > std::numeric_limits<std::uint16_t>::max()) {
        throw FormatError("field-overflow", std::string(what) + " does not fit 16 bits");
    }
    return static_cast<std::uint16_t>(v);
}

std::uint32_t checked_u32(long long v, const char* what) {
    if (v < 0 || v > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError("field-overflow", std::string(what) + " does not fit 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

std::size_t payload_bytes(const QuantizedLayer& q) {
    return (static_cast<std::size_t>(q.d_out) * q.d_in_padded * q.cfg.bb + 7) / 8;
}

std::size_t flagged_count(const QuantizedLayer& q) {
    return static_cast<std::size_t>(std::count(q.identifiers.begin(), q.identifiers.end(), 1));
}

}  // namespace

std::size_t header_size() noexcept { return 5 + 2 + 4 + 4 + 4 + (1 + 2 + 2 + 2 + 1 + 1 + 8 + 8 + 8) + 4; }

int perm_bits(int mub) noexcept { return (mub / 2) * 2 * std::countr_zero(static_cast<unsigned>(mub)); }

std::size_t perm_record_bytes(int mub) noexcept { return (static_cast<std::size_t>(perm_bits(mub)) + 7) / 8; }

SectionOffsets section_offsets(const QuantizedLayer& q) {
    SectionOffsets o;
    const std::size_t flagged = flagged_count(q);
    o.payload = header_size();
    o.identifiers = o.payload + payload_bytes(q);
    o.i_sf = o.identifiers + (q.blocks.size() + 7) / 8;
    o.mx_scale = o.i_sf + q.i_sf.size();
    o.perm = o.mx_scale + flagged;
    o.end = o.perm + flagged * perm_record_bytes(q.cfg.mub);
    return o;
}

std::vector<std::uint8_t> pack(const QuantizedLayer& q) {
    q.cfg.validate();
    const auto& cfg = q.cfg;
    const int nmub = q.mubs_per_row();
    if (q.blocks.size() != static_cast<std::size_t>(q.d_out) * nmub || q.identifiers.size() != q.blocks.size() ||
        q.i_sf.size() != static_cast<std::size_t>(q.d_out) * q.mabs_per_row()) {
        throw ShapeError("quantized layer sections disagree with its shape");
    }

    Writer w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 5));
    w.u16(kLayoutVersion);
    w.u32(checked_u32(q.d_out, "d_out"));
    w.u32(checked_u32(q.d_in, "d_in"));
    w.u32(checked_u32(q.d_in_padded, "d_in_padded"));
    w.u8(static_cast<std::uint8_t>(cfg.bb));
    w.u16(checked_u16(cfg.mab, "macro-block size"));
    w.u16(checked_u16(cfg.mub, "micro-block size"));
    w.u16(checked_u16(cfg.row_block, "row block"));
    w.u8(static_cast<std::uint8_t>(cfg.overflow));
    w.u8(cfg.compensate ? 1 : 0);
    w.f64(cfg.sigma_mult);
    w.f64(cfg.alpha);
    w.f64(cfg.lambda_frac);
    w.u32(checked_u32(static_cast<long long>(flagged_count(q)), "flagged count"));

    const std::uint32_t field_mask = (1u << cfg.bb) - 1;
    BitWriter payload(static_cast<std::size_t>(q.d_out) * q.d_in_padded * cfg.bb);
    BitWriter ident(q.blocks.size());
    std::vector<std::uint8_t> scales;
    std::vector<std::uint8_t> perms;
    const int lb = cfg.loc_bits();
    for (std::size_t i = 0; i < q.blocks.size(); ++i) {
        const auto& blk = q.blocks[i];
        if (blk.codes.size() != static_cast<std::size_t>(cfg.mub)) throw ShapeError("micro-block with wrong length");
        for (int p = 0; p < cfg.mub; ++p) {
            if (blk.codes[p] & ~field_mask) throw FormatError("field-overflow", "code wider than the bit budget");
            payload.put((i * cfg.mub + p) * cfg.bb, blk.codes[p], cfg.bb);
        }
        const bool flagged = q.identifiers[i] != 0;
        if (q.identifiers[i] > 1 || flagged != (blk.perm.has_value() && blk.mx_scale.has_value()) ||
            blk.perm.has_value() != blk.mx_scale.has_value()) {
            throw FormatError("identifier-consistency", "identifier bit disagrees with outlier metadata");
        }
        if (!flagged) continue;
        ident.put(i, 1, 1);
        check_perm(*blk.perm, cfg.mub);
        scales.push_back(blk.mx_scale->packed());
        BitWriter rec(static_cast<std::size_t>(perm_bits(cfg.mub)));
        for (std::size_t k = 0; k < blk.perm->entries.size(); ++k) {
            rec.put(k * 2 * lb, pack_perm_entry(blk.perm->entries[k], lb), 2 * lb);
        }
        perms.insert(perms.end(), rec.bytes().begin(), rec.bytes().end());
    }
    w.bytes(payload.bytes());
    w.bytes(ident.bytes());
    for (auto e : q.i_sf) w.u8(static_cast<std::uint8_t>(e));
    w.bytes(scales);
    w.bytes(perms);
    return w.take();
}

QuantizedLayer unpack(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.bytes(5);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("magic", "not an MSCQ1 stream");
    if (const auto v = r.u16(); v != kLayoutVersion) {
        throw FormatError("version", "unsupported layout version " + std::to_string(v));
    }
    QuantizedLayer q;
    const std::uint32_t d_out = r.u32();
    const std::uint32_t d_in = r.u32();
    const std::uint32_t d_in_padded = r.u32();
    auto& cfg = q.cfg;
    cfg.bb = r.u8();
    cfg.mab = r.u16();
    cfg.mub = r.u16();
    cfg.row_block = r.u16();
    const std::uint8_t overflow = r.u8();
    const std::uint8_t compensate = r.u8();
    cfg.sigma_mult = r.f64();
    cfg.alpha = r.f64();
    cfg.lambda_frac = r.f64();
    const std::uint32_t n_flagged = r.u32();

    if (overflow > 1 || compensate > 1) throw FormatError("header", "invalid config flags");
    cfg.overflow = static_cast<OverflowPolicy>(overflow);
    cfg.compensate = compensate != 0;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError("header", e.what());
    }
    if (d_out > (1u << 24) || d_in > (1u << 24)) throw FormatError("header", "implausible layer shape");
    const std::uint64_t expect_pad = (static_cast<std::uint64_t>(d_in) + cfg.mab - 1) / cfg.mab * cfg.mab;
    if (d_in_padded != expect_pad) throw FormatError("header", "padded width does not match the macro-block size");

    q.d_out = static_cast<int>(d_out);
    q.d_in = static_cast<int>(d_in);
    q.d_in_padded = static_cast<int>(d_in_padded);
    const std::size_t nblocks = static_cast<std::size_t>(q.d_out) * q.mubs_per_row();
    const std::size_t nmab = static_cast<std::size_t>(q.d_out) * q.mabs_per_row();

    const auto payload = r.bytes(payload_bytes(q));
    const auto ident = r.bytes((nblocks + 7) / 8);
    const auto isf = r.bytes(nmab);

    q.identifiers.assign(nblocks, 0);
    std::size_t popcount = 0;
    for (std::size_t i = 0; i < nblocks; ++i) {
        q.identifiers[i] = static_cast<std::uint8_t>(get_bits(ident, i, 1));
        popcount += q.identifiers[i];
    }
    if (popcount != n_flagged) {
        throw FormatError("identifier-consistency", "identifier bitmap has " + std::to_string(popcount) +
                                                        " set bits but the header declares " +
                                                        std::to_string(n_flagged) + " flagged micro-blocks");
    }
    q.i_sf.resize(nmab);
    for (std::size_t i = 0; i < nmab; ++i) q.i_sf[i] = static_cast<std::int8_t>(isf[i]);

    const auto scales = r.bytes(n_flagged);
    const std::size_t rec_bytes = perm_record_bytes(cfg.mub);
    const auto perms = r.bytes(n_flagged * rec_bytes);
    if (r.remaining() != 0) throw FormatError("trailing-bytes", "unexpected data after the last section");

    const int lb = cfg.loc_bits();
    const FpLayout layout = cfg.outlier_layout();
    q.blocks.assign(nblocks, MicroBlockQ{});
    std::size_t f = 0;
    for (std::size_t i = 0; i < nblocks; ++i) {
        auto& blk = q.blocks[i];
        blk.codes.resize(static_cast<std::size_t>(cfg.mub));
        for (int p = 0; p < cfg.mub; ++p) {
            blk.codes[p] = static_cast<std::uint8_t>(get_bits(payload, (i * cfg.mub + p) * cfg.bb, cfg.bb));
        }
        if (!q.identifiers[i]) continue;
        blk.mx_scale = MxScale::unpack(scales[f], layout);
        PermList perm;
        const auto rec = perms.subspan(f * rec_bytes, rec_bytes);
        for (int k = 0; k < cfg.mub / 2; ++k) {
            perm.entries.push_back(unpack_perm_entry(get_bits(rec, static_cast<std::size_t>(k) * 2 * lb, 2 * lb), lb));
        }
        check_perm(perm, cfg.mub);
        blk.outlier_count = perm.live_count();
        blk.perm = std::move(perm);
        ++f;
    }
    return q;
}

double ebw_outlier(int bb, int mub) noexcept {
    return static_cast<double>(perm_bits(mub) + bb * mub + 8) / mub;
}

double ebw_closed_form(int bb, int mub, double x_percent) noexcept {
    return (x_percent * ebw_outlier(bb, mub) + (100.0 - x_percent) * bb) / 100.0;
}

EbwReport compute_ebw(const QuantizedLayer& q) {
    EbwReport r;
    const int bb = q.cfg.bb;
    const int mub = q.cfg.mub;
    r.ebw_inlier = bb;
    r.ebw_outlier = ebw_outlier(bb, mub);
    const double total = static_cast<double>(q.identifiers.size());
    r.outlier_mub_fraction = total > 0 ? 100.0 * static_cast<double>(flagged_count(q)) / total : 0.0;
    r.ebw_layer = ebw_closed_form(bb, mub, r.outlier_mub_fraction);
    r.ebw_strict = r.ebw_layer + 1.0 / mub + 8.0 / q.cfg.mab;
    r.ebw_model = r.ebw_layer;
    return r;
}

EbwReport compute_ebw(std::span<const QuantizedLayer> layers) {
    EbwReport r;
    if (layers.empty()) return r;
    std::size_t flagged = 0;
    std::size_t total = 0;
    for (const auto& q : layers) {
        const auto l = compute_ebw(q);
        r.ebw_layer += l.ebw_layer;
        r.ebw_strict += l.ebw_strict;
        r.ebw_inlier += l.ebw_inlier;
        r.ebw_outlier += l.ebw_outlier;
        flagged += flagged_count(q);
        total += q.identifiers.size();
    }
    const double n = static_cast<double>(layers.size());
    r.ebw_inlier /= n;
    r.ebw_outlier /= n;
    r.ebw_layer /= n;
    r.ebw_strict /= n;
    r.ebw_model = r.ebw_layer;
    r.outlier_mub_fraction = total > 0 ? 100.0 * static_cast<double>(flagged) / static_cast<double>(total) : 0.0;
    return r;
}

}  // namespace mscq
