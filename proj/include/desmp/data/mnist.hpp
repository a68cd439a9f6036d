// SPDX-License-Identifier: Apache-2.0
#pragma once

// MNIST IDX reader. Big-endian headers, magic 2051 for images and 2049 for
// labels; pixels are scaled to [0, 1].

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "desmp/data/dataset.hpp"
#include "desmp/errors.hpp"

namespace desmp::data {

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(path + ": truncated header at byte " + std::to_string(offset), offset);
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kImageMagic = 2051;
inline constexpr std::uint32_t kLabelMagic = 2049;

inline Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  if (const auto magic = detail::read_be32(img, 0, images_path); magic != kImageMagic) {
    throw FormatError(images_path + ": bad magic " + std::to_string(magic) + " at byte 0", 0);
  }
  const auto count = detail::read_be32(img, 4, images_path);
  const auto rows = detail::read_be32(img, 8, images_path);
  const auto cols = detail::read_be32(img, 12, images_path);
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * pixels;
  if (img.size() < need) {
    throw FormatError(images_path + ": truncated pixel data at byte " + std::to_string(img.size()), img.size());
  }

  if (const auto magic = detail::read_be32(lab, 0, labels_path); magic != kLabelMagic) {
    throw FormatError(labels_path + ": bad magic " + std::to_string(magic) + " at byte 0", 0);
  }
  const auto label_count = detail::read_be32(lab, 4, labels_path);
  if (label_count != count) {
    throw FormatError(labels_path + ": label count " + std::to_string(label_count) + " does not match image count " +
                          std::to_string(count),
                      4);
  }
  if (lab.size() < 8 + std::size_t{count}) {
    throw FormatError(labels_path + ": truncated label data at byte " + std::to_string(lab.size()), lab.size());
  }

  Dataset d;
  d.task = nn::Task::classification;
  d.classes = 10;
  d.features = nn::Matrix(count, pixels);
  for (std::size_t i = 0; i < d.features.data.size(); ++i) d.features.data[i] = img[16 + i] / 255.0;
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = lab[8 + i];
    if (v > 9) throw FormatError(labels_path + ": label out of range at byte " + std::to_string(8 + i), 8 + i);
    d.labels[i] = static_cast<int>(v);
  }
  return d;
}

}  // namespace desmp::data
