#include "mscq/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>

#include "mscq/error.hpp"

namespace mscq {

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
    return std::filesystem::path(p.string() + ".json");
}

void check_shape(const std::vector<std::int64_t>& shape) {
    if (shape.empty()) throw ShapeError("0-dim tensors are not supported");
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
    }
}

}  // namespace

std::int64_t Tensor::numel() const noexcept {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return buf;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void store_tensor(const std::filesystem::path& path, const Tensor& t) {
    check_shape(t.shape);
    if (t.numel() != static_cast<std::int64_t>(t.data.size())) {
        throw ShapeError("tensor data length does not match its shape");
    }
    std::vector<std::uint8_t> raw(t.data.size() * 4);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(t.data[i]);
        for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    write_bytes(path, raw);
    const nlohmann::ordered_json meta = {{"shape", t.shape}, {"dtype", "float32"}};
    const std::string text = meta.dump() + "\n";
    write_bytes(sidecar(path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Tensor load_tensor(const std::filesystem::path& path) {
    const auto meta_bytes = read_bytes(sidecar(path));
    Tensor t;
    try {
        const auto meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
        if (meta.value("dtype", "") != "float32") throw ShapeError("only float32 tensors are supported");
        t.shape = meta.at("shape").get<std::vector<std::int64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ShapeError("bad tensor sidecar for " + path.string() + ": " + e.what());
    }
    check_shape(t.shape);
    const auto raw = read_bytes(path);
    if (static_cast<std::int64_t>(raw.size()) != t.numel() * 4) {
        throw ShapeError(path.string() + " holds " + std::to_string(raw.size()) + " bytes, shape needs " +
                         std::to_string(t.numel() * 4));
    }
    t.data.resize(raw.size() / 4);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
        t.data[i] = std::bit_cast<float>(bits);
    }
    return t;
}

Tensor to_tensor(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    }
    return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
    if (t.shape.size() != 2) throw ShapeError("expected a 2-D tensor, got " + std::to_string(t.shape.size()) + " dims");
    Eigen::MatrixXd m(t.shape[0], t.shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
    }
    return m;
}

}  // namespace mscq
