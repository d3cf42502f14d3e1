#include "mscq/fixtures.hpp"

namespace mscq {

QuantizedLayer walkthrough_layer() {
    QuantizedLayer q;
    q.cfg.bb = 2;
    q.cfg.mab = 8;
    q.cfg.mub = 4;
    q.cfg.row_block = 8;
    q.d_out = 1;
    q.d_in = 8;
    q.d_in_padded = 8;
    q.i_sf = {0};
    q.identifiers = {0, 1};

    MicroBlockQ inl;
    inl.codes = {0, 0, encode_inlier_field(1, 2), 0};

    MicroBlockQ out;
    const FpOutlierElem e{0, 0b10};
    const auto halves = split_outlier(e, 2);
    out.codes = {0, 0, halves.upper, halves.lower};
    out.perm = PermList{{{2, 3}, {0, 0}}};
    out.mx_scale = MxScale{PotExponent(0), 0, FpLayout::E1M2};
    out.outlier_count = 1;

    q.blocks = {inl, out};
    return q;
}

ActQuant walkthrough_acts() {
    ActQuant a;
    a.bits = 8;
    a.codes = Eigen::MatrixXi::Zero(8, 1);
    a.codes(2, 0) = 8;
    a.codes(6, 0) = 32;
    a.exps = Eigen::MatrixXi::Zero(1, 1);
    return a;
}

}  // namespace mscq
