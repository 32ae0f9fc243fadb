#pragma once

#include <cmath>
#include <string>

#include "vmr/core/io.hpp"
#include "vmr/corpus/types.hpp"

namespace vmr {

// VMRF feature file, little-endian:
//   "VMRF" | u32 version=1 | u32 N | u32 D | f64 duration_s | N*D f32 row-major
// VMRE embedding file:
//   "VMRE" | u32 version=1 | u32 V | u32 D_e | V*D_e f32 row-major

namespace detail {

inline Mat read_f32_matrix(BinReader& r, uint32_t rows, uint32_t cols, const char* what) {
    Mat m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i) {
        for (uint32_t j = 0; j < cols; ++j) {
            size_t at = r.offset();
            float v = r.f32(what);
            if (!std::isfinite(v))
                throw FormatError(r.origin() + ": non-finite value in " + what + " at byte offset " +
                                  std::to_string(at));
            m(i, j) = static_cast<double>(v);
        }
    }
    return m;
}

inline void write_f32_matrix(BinWriter& w, const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
}

}  // namespace detail

inline void write_features(const VideoFeatures& vf, const std::string& path) {
    BinWriter w;
    w.magic("VMRF");
    w.u32(1);
    w.u32(static_cast<uint32_t>(vf.features.rows()));
    w.u32(static_cast<uint32_t>(vf.features.cols()));
    w.f64(vf.duration_s);
    detail::write_f32_matrix(w, vf.features);
    w.save(path);
}

// Returns the matrix exactly as stored; no normalization.
inline VideoFeatures load_features(const std::string& path) {
    BinReader r = BinReader::from_file(path);
    r.expect_magic("VMRF");
    uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError(path + ": unsupported VMRF version " + std::to_string(version) +
                          " at byte offset 4");
    uint32_t n = r.u32("clip count");
    uint32_t d = r.u32("feature dim");
    if (n < 1 || d < 1)
        throw FormatError(path + ": clip count and feature dim must be >= 1 (header at offset 8)");
    double duration = r.f64("duration_s");
    if (!std::isfinite(duration) || duration <= 0.0)
        throw FormatError(path + ": duration_s must be positive and finite at byte offset 16");
    size_t expected = static_cast<size_t>(n) * d * 4;
    if (r.remaining() < expected)
        throw FormatError(path + ": truncated payload at byte offset " + std::to_string(r.offset()) +
                          " (" + std::to_string(expected) + " bytes expected, " +
                          std::to_string(r.remaining()) + " present)");
    if (r.remaining() > expected)
        throw FormatError(path + ": trailing bytes after payload (expected " +
                          std::to_string(expected) + " payload bytes)");
    VideoFeatures vf;
    vf.duration_s = duration;
    vf.features = detail::read_f32_matrix(r, n, d, "feature payload");
    return vf;
}

inline void write_embeddings(const EmbeddingTable& t, const std::string& path) {
    BinWriter w;
    w.magic("VMRE");
    w.u32(1);
    w.u32(static_cast<uint32_t>(t.rows.rows()));
    w.u32(static_cast<uint32_t>(t.rows.cols()));
    detail::write_f32_matrix(w, t.rows);
    w.save(path);
}

inline EmbeddingTable load_embeddings(const std::string& path) {
    BinReader r = BinReader::from_file(path);
    r.expect_magic("VMRE");
    uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError(path + ": unsupported VMRE version " + std::to_string(version) +
                          " at byte offset 4");
    uint32_t v = r.u32("vocab size");
    uint32_t d = r.u32("embed dim");
    size_t expected = static_cast<size_t>(v) * d * 4;
    if (r.remaining() != expected)
        throw FormatError(path + ": payload size mismatch at byte offset " +
                          std::to_string(r.offset()) + " (" + std::to_string(expected) +
                          " bytes expected, " + std::to_string(r.remaining()) + " present)");
    EmbeddingTable t;
    t.rows = detail::read_f32_matrix(r, v, d, "embedding payload");
    t.validate();
    return t;
}

}  // namespace vmr
