// IDX file reader/writer (the MNIST container format). Big-endian header:
// magic, dimension sizes, then raw unsigned bytes. Pixels are normalized to
// [0,1] on load. No fetching: callers supply paths.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "otafl/loss.hpp"

namespace otafl {

constexpr uint32_t kIdxImageMagic = 0x00000803;
constexpr uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("idx: truncated file: " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

inline void write_be_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

struct IdxImages {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<std::vector<uint8_t>> pixels;  // one row*col block per image
};

inline IdxImages read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path);
  uint32_t magic = detail::read_be_u32(in, path);
  if (magic != kIdxImageMagic)
    throw std::runtime_error("idx: bad image magic in " + path);
  uint32_t count = detail::read_be_u32(in, path);
  IdxImages images;
  images.rows = detail::read_be_u32(in, path);
  images.cols = detail::read_be_u32(in, path);
  std::size_t px = std::size_t(images.rows) * images.cols;
  images.pixels.resize(count);
  for (auto& img : images.pixels) {
    img.resize(px);
    if (!in.read(reinterpret_cast<char*>(img.data()), px))
      throw std::runtime_error("idx: truncated file: " + path);
  }
  return images;
}

inline std::vector<uint8_t> read_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open " + path);
  uint32_t magic = detail::read_be_u32(in, path);
  if (magic != kIdxLabelMagic)
    throw std::runtime_error("idx: bad label magic in " + path);
  uint32_t count = detail::read_be_u32(in, path);
  std::vector<uint8_t> labels(count);
  if (count > 0 &&
      !in.read(reinterpret_cast<char*>(labels.data()), labels.size()))
    throw std::runtime_error("idx: truncated file: " + path);
  return labels;
}

inline void write_idx_images(const std::string& path, uint32_t rows,
                             uint32_t cols,
                             const std::vector<std::vector<uint8_t>>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("idx: cannot write " + path);
  detail::write_be_u32(out, kIdxImageMagic);
  detail::write_be_u32(out, static_cast<uint32_t>(pixels.size()));
  detail::write_be_u32(out, rows);
  detail::write_be_u32(out, cols);
  for (const auto& img : pixels) {
    if (img.size() != std::size_t(rows) * cols)
      throw std::invalid_argument("idx: image size mismatch");
    out.write(reinterpret_cast<const char*>(img.data()), img.size());
  }
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("idx: cannot write " + path);
  detail::write_be_u32(out, kIdxLabelMagic);
  detail::write_be_u32(out, static_cast<uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

// Loads an image/label pair into a Dataset. Each sample carries rows*cols
// features in [0,1] (pixel/255) and the raw digit as label.
inline Dataset load_mnist_idx(const std::string& images_path,
                              const std::string& labels_path) {
  IdxImages images = read_idx_images(images_path);
  std::vector<uint8_t> labels = read_idx_labels(labels_path);
  if (images.pixels.size() != labels.size())
    throw std::runtime_error("idx: image/label count mismatch (" +
                             std::to_string(images.pixels.size()) + " vs " +
                             std::to_string(labels.size()) + ")");
  Dataset ds;
  ds.name = std::filesystem::path(images_path).filename().string();
  ds.samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Sample s;
    s.features.resize(images.pixels[i].size());
    for (std::size_t j = 0; j < s.features.size(); ++j)
      s.features[j] = images.pixels[i][j] / 255.0;
    s.label = static_cast<double>(labels[i]);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace otafl
