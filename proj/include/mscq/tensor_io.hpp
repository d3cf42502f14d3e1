#pragma once

// Dense float32 tensors on disk: raw little-endian data in `path` plus a
// `path.json` sidecar holding {"shape": [...], "dtype": "float32"}.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mscq {

struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;  ///< row-major

    std::int64_t numel() const noexcept;
};

/// Throws ShapeError for a 0-dim shape or a size mismatch, IoError on file errors.
void store_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// 2-D views; to_matrix throws ShapeError unless the tensor is 2-D.
Tensor to_tensor(const Eigen::Ref<const Eigen::MatrixXd>& m);
Eigen::MatrixXd to_matrix(const Tensor& t);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mscq
