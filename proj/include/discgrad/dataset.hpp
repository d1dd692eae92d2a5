#pragma once
// Dataset ingestion: IDX image/label files (the MNIST distribution format),
// deterministic binarization rules, and a seeded synthetic generator used as
// the desk-scale stand-in. All binarized pixels are exactly 0 or 1.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace discgrad {

struct RawImages {
  int64_t count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> pixels;  // count * rows * cols bytes, 0-255
};

struct RawLabels {
  int64_t count = 0;
  std::vector<uint8_t> labels;
};

namespace detail {

inline uint32_t read_u32_be(const std::vector<uint8_t>& b, size_t off) {
  return ((uint32_t)b[off] << 24) | ((uint32_t)b[off + 1] << 16) | ((uint32_t)b[off + 2] << 8) |
         (uint32_t)b[off + 3];
}

inline void write_u32_be(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back((uint8_t)(v >> 24));
  b.push_back((uint8_t)(v >> 16));
  b.push_back((uint8_t)(v >> 8));
  b.push_back((uint8_t)v);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "idx: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr int64_t kIdxMaxElements = 1LL << 31;

inline RawImages load_idx_images(const std::string& path) {
  const std::vector<uint8_t> b = detail::read_file(path);
  require(b.size() >= 16, "idx: truncated header: expected 16 bytes, found " +
                              std::to_string(b.size()));
  const uint32_t magic = detail::read_u32_be(b, 0);
  if (magic != kIdxImagesMagic)
    fail("idx: unsupported type: magic " + std::to_string(magic) + ", expected " +
         std::to_string(kIdxImagesMagic) + " (images)");
  RawImages out;
  out.count = detail::read_u32_be(b, 4);
  out.rows = detail::read_u32_be(b, 8);
  out.cols = detail::read_u32_be(b, 12);
  require(out.count >= 0 && out.rows > 0 && out.cols > 0, "idx: bad dimensions");
  // Guard each product before forming it so a hostile header cannot overflow.
  if (out.rows > kIdxMaxElements / out.cols ||
      (out.count > 0 && out.count > kIdxMaxElements / (out.rows * out.cols)))
    fail("idx: dimension overflow: " + std::to_string(out.count) + "x" +
         std::to_string(out.rows) + "x" + std::to_string(out.cols));
  const int64_t n = out.count * out.rows * out.cols;
  if ((int64_t)b.size() - 16 != n)
    fail("idx: truncated payload: expected " + std::to_string(n) + " bytes, found " +
         std::to_string((int64_t)b.size() - 16));
  out.pixels.assign(b.begin() + 16, b.end());
  return out;
}

inline RawLabels load_idx_labels(const std::string& path) {
  const std::vector<uint8_t> b = detail::read_file(path);
  require(b.size() >= 8,
          "idx: truncated header: expected 8 bytes, found " + std::to_string(b.size()));
  const uint32_t magic = detail::read_u32_be(b, 0);
  if (magic != kIdxLabelsMagic)
    fail("idx: unsupported type: magic " + std::to_string(magic) + ", expected " +
         std::to_string(kIdxLabelsMagic) + " (labels)");
  RawLabels out;
  out.count = detail::read_u32_be(b, 4);
  require(out.count >= 0 && out.count <= kIdxMaxElements, "idx: dimension overflow");
  if ((int64_t)b.size() - 8 != out.count)
    fail("idx: truncated payload: expected " + std::to_string(out.count) + " bytes, found " +
         std::to_string((int64_t)b.size() - 8));
  out.labels.assign(b.begin() + 8, b.end());
  return out;
}

inline void write_idx_images(const std::string& path, const RawImages& img) {
  require((int64_t)img.pixels.size() == img.count * img.rows * img.cols,
          "idx: pixel buffer does not match dimensions");
  std::vector<uint8_t> b;
  detail::write_u32_be(b, kIdxImagesMagic);
  detail::write_u32_be(b, (uint32_t)img.count);
  detail::write_u32_be(b, (uint32_t)img.rows);
  detail::write_u32_be(b, (uint32_t)img.cols);
  b.insert(b.end(), img.pixels.begin(), img.pixels.end());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "idx: cannot write '" + path + "'");
  out.write((const char*)b.data(), (std::streamsize)b.size());
  require(out.good(), "idx: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Binarization and dataset assembly.
// ---------------------------------------------------------------------------

enum class BinarizeRule { threshold, bernoulli };

inline const char* binarize_rule_name(BinarizeRule r) {
  return r == BinarizeRule::threshold ? "threshold" : "bernoulli";
}

inline BinarizeRule parse_binarize_rule(const std::string& s) {
  if (s == "threshold") return BinarizeRule::threshold;
  if (s == "bernoulli") return BinarizeRule::bernoulli;
  fail("unknown binarize rule '" + s + "'");
}

struct DatasetMeta {
  std::string source;
  std::string rule;
  uint64_t seed = 0;
};

struct Dataset {
  int64_t dim = 0;
  std::vector<Tensor> train, valid, test;
  DatasetMeta meta;
};

// Threshold: >= 128 -> 1. Bernoulli: pixel/255 success probability, one
// forked stream per image so the result is independent of evaluation order.
inline std::vector<Tensor> binarize(const RawImages& raw, BinarizeRule rule, uint64_t seed) {
  const int64_t dim = raw.rows * raw.cols;
  RngStream base(seed);
  std::vector<Tensor> out;
  out.reserve((size_t)raw.count);
  for (int64_t i = 0; i < raw.count; ++i) {
    Tensor t{Shape{dim}};
    RngStream rng = base.fork((uint64_t)i);
    for (int64_t j = 0; j < dim; ++j) {
      const uint8_t px = raw.pixels[(size_t)(i * dim + j)];
      if (rule == BinarizeRule::threshold) {
        t.data[(size_t)j] = px >= 128 ? 1.0 : 0.0;
      } else {
        t.data[(size_t)j] = (rng.uniform() < (double)px / 255.0) ? 1.0 : 0.0;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline void split_80_10_10(std::vector<Tensor> all, Dataset& d) {
  const int64_t n = (int64_t)all.size();
  const int64_t ntr = n * 8 / 10;
  const int64_t nva = n / 10;
  d.train.assign(all.begin(), all.begin() + ntr);
  d.valid.assign(all.begin() + ntr, all.begin() + ntr + nva);
  d.test.assign(all.begin() + ntr + nva, all.end());
}

inline Dataset dataset_from_idx(const std::string& images_path, BinarizeRule rule,
                                uint64_t seed) {
  RawImages raw = load_idx_images(images_path);
  require(raw.count >= 10, "dataset needs at least 10 images to split");
  Dataset d;
  d.dim = raw.rows * raw.cols;
  split_80_10_10(binarize(raw, rule, seed), d);
  d.meta = {images_path, binarize_rule_name(rule), seed};
  return d;
}

// Seeded mixture of product-Bernoulli modes; per-pixel success probabilities
// stay inside [0.1, 0.9] so empirical means are strictly interior.
inline Dataset synthetic_dataset(int64_t dim, int64_t count, uint64_t seed) {
  require(dim > 0 && count >= 10, "synthetic dataset needs dim > 0 and count >= 10");
  constexpr int kModes = 3;
  RngStream rng(seed);
  std::vector<std::vector<double>> modes((size_t)kModes);
  for (auto& mode : modes) {
    mode.resize((size_t)dim);
    for (auto& p : mode) p = 0.1 + 0.8 * rng.uniform();
  }
  std::vector<Tensor> all;
  all.reserve((size_t)count);
  for (int64_t i = 0; i < count; ++i) {
    RngStream s = rng.fork((uint64_t)(100 + i));
    const auto& mode = modes[(size_t)std::min<int64_t>(kModes - 1, (int64_t)(s.uniform() * kModes))];
    Tensor t{Shape{dim}};
    for (int64_t j = 0; j < dim; ++j)
      t.data[(size_t)j] = (s.uniform() < mode[(size_t)j]) ? 1.0 : 0.0;
    all.push_back(std::move(t));
  }
  Dataset d;
  d.dim = dim;
  split_80_10_10(std::move(all), d);
  d.meta = {"synthetic", "native", seed};
  return d;
}

inline Tensor pixel_mean(const std::vector<Tensor>& images) {
  require(!images.empty(), "pixel mean of an empty split");
  Tensor m = Tensor::zeros(images[0].shape);
  for (const Tensor& t : images) {
    require(t.shape == m.shape, "pixel mean over ragged images");
    for (size_t j = 0; j < t.data.size(); ++j) m.data[j] += t.data[j];
  }
  for (auto& x : m.data) x /= (double)images.size();
  return m;
}

}  // namespace discgrad
