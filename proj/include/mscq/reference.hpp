#pragma once

// Dequantization, dense reference GEMM and per-row reconstruction error.

#include <Eigen/Dense>
#include <string>

#include "mscq/error.hpp"
#include "mscq/quantizer.hpp"

namespace mscq {

/// d_out x d_in reconstruction: inliers code * 2^I_sf, Upper slots the decoded
/// outlier, Lower slots 0. Throws FormatError("perm-integrity") on corrupt metadata.
Eigen::MatrixXd dequantize_layer(const QuantizedLayer& q);

/// Same reconstruction over the padded width.
Eigen::MatrixXd dequantize_layer_padded(const QuantizedLayer& q);

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// acc + W * A.
template <typename Scalar>
Mat<Scalar> reference_gemm(const Mat<Scalar>& W, const Mat<Scalar>& A, const Mat<Scalar>& acc) {
    if (W.cols() != A.rows()) {
        throw ShapeError("GEMM inner dimensions differ: " + std::to_string(W.cols()) + " vs " + std::to_string(A.rows()));
    }
    if (acc.rows() != W.rows() || acc.cols() != A.cols()) throw ShapeError("accumulator shape mismatch");
    Mat<Scalar> out = acc;
    out.noalias() += W * A;
    return out;
}

template <typename Scalar>
Mat<Scalar> reference_gemm(const Mat<Scalar>& W, const Mat<Scalar>& A) {
    return reference_gemm<Scalar>(W, A, Mat<Scalar>::Zero(W.rows(), A.cols()));
}

/// ||W_i X - Q_i X||^2 for every row i.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> layer_sq_error(const Mat<Scalar>& W, const Mat<Scalar>& Q, const Mat<Scalar>& X) {
    if (W.rows() != Q.rows() || W.cols() != Q.cols() || W.cols() != X.rows()) {
        throw ShapeError("layer error operands have inconsistent shapes");
    }
    return ((W - Q) * X).rowwise().squaredNorm();
}

}  // namespace mscq
