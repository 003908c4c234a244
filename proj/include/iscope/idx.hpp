#pragma once

// IDX files (the MNIST container format):
//
//   [0..1]  zero bytes
//   [2]     element type (0x08 = unsigned byte)
//   [3]     number of dimensions
//   [4..]   dimensions, one big-endian u32 each
//   then    raw elements, row-major
//
// Images are magic 0x00000803 (n x rows x cols), labels 0x00000801 (n).

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "iscope/binary_io.hpp"
#include "iscope/dataset.hpp"
#include "iscope/error.hpp"
#include "iscope/rng.hpp"

namespace iscope {

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes) {
  auto need = [&](std::size_t offset, std::size_t count, const char* what) {
    if (bytes.size() < offset + count) throw ParseError(std::string("truncated IDX file while reading ") + what, bytes.size());
  };
  need(0, 4, "magic number");
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError("bad IDX magic number", 0);
  if (bytes[2] != 0x08) throw ParseError("unsupported IDX element type (only unsigned byte)", 2);
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw ParseError("IDX file declares zero dimensions", 3);
  IdxArray arr;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::size_t off = 4 + 4 * i;
    need(off, 4, "dimension");
    const std::uint32_t d = (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
                            (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
    arr.dims.push_back(d);
    count *= d;
  }
  const std::size_t body = 4 + 4 * ndims;
  need(body, count, "element data");
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                  bytes.begin() + static_cast<std::ptrdiff_t>(body + count));
  return arr;
}

/// Loads `limit` images (pixels scaled to [0, 1]) from an IDX image file. The
/// subset is the first `limit` positions of a seeded permutation, kept in
/// file order. Without a label file every label is 0 and classes is 1.
inline Dataset load_idx_images(const std::string& path, std::size_t limit, std::uint64_t seed,
                               const std::optional<std::string>& labels_path = std::nullopt,
                               std::size_t classes = 10) {
  const auto bytes = read_bytes(path);
  if (bytes.size() >= 4 && (bytes[3] != 3)) throw ParseError("image IDX file must have 3 dimensions", 3);
  const IdxArray img = parse_idx(bytes);
  const std::size_t n = img.dims[0], rows = img.dims[1], cols = img.dims[2], pix = rows * cols;
  if (limit == 0 || limit > n)
    throw InvalidArgument("limit " + std::to_string(limit) + " outside [1, " + std::to_string(n) + "]");

  std::vector<std::uint8_t> label_bytes;
  if (labels_path) {
    const auto lb = read_bytes(*labels_path);
    if (lb.size() >= 4 && lb[3] != 1) throw ParseError("label IDX file must have 1 dimension", 3);
    IdxArray lab = parse_idx(lb);
    if (lab.dims[0] != n) throw ParseError("label count does not match image count", 4);
    label_bytes = std::move(lab.data);
  }

  const IndexPermutation perm(n, derive_seed(seed, "idx-subset"));
  std::vector<std::size_t> chosen(limit);
  for (std::size_t i = 0; i < limit; ++i) chosen[i] = perm(i);
  std::sort(chosen.begin(), chosen.end());

  Dataset d;
  d.classes = labels_path ? classes : 1;
  d.image = ImageShape{1, rows, cols};
  d.inputs.resize(static_cast<long>(pix), static_cast<long>(limit));
  for (std::size_t j = 0; j < limit; ++j) {
    const std::size_t src = chosen[j];
    for (std::size_t p = 0; p < pix; ++p)
      d.inputs(static_cast<long>(p), static_cast<long>(j)) = img.data[src * pix + p] / 255.0;
    d.labels.push_back(labels_path ? label_bytes[src] : 0);
  }
  d.provenance = "idx:" + path + ":sha256=" + sha256_hex(std::string(bytes.begin(), bytes.end())) +
                 ":limit=" + std::to_string(limit) + ":seed=" + std::to_string(seed);
  d.validate();
  return d;
}

}  // namespace iscope
