#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cvfl/attacks.hpp"
#include "cvfl/error.hpp"
#include "cvfl/model.hpp"
#include "cvfl/rng.hpp"

namespace cvfl {

// ---------------------------------------------------------------------------
// Synthetic Gaussian clusters
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 10;
  int input_dim = 32;
  int per_class = 600;
  double separation = 6.0;      // minimum distance between class means
  double cluster_spread = 1.0;  // per-coordinate std of samples around their center
  int subclusters = 1;          // sub-clusters per class (backdoor triggers)
  double subcluster_offset = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes < 2) throw InputError("synthetic data needs at least 2 classes");
    if (input_dim < 1) throw InputError("synthetic input_dim must be positive");
    if (per_class < 1) throw InputError("synthetic per_class must be at least 1");
    if (!(separation > 0.0)) throw InputError("synthetic separation must be positive");
    if (!(cluster_spread >= 0.0)) throw InputError("synthetic cluster_spread must be nonnegative");
    if (subclusters < 1) throw InputError("synthetic subclusters must be at least 1");
    if (!(subcluster_offset >= 0.0)) throw InputError("synthetic subcluster_offset must be nonnegative");
  }
};

// Cluster centers shared by every draw from one spec (train and test sets).
struct SyntheticLayout {
  std::vector<std::vector<double>> class_means;
  std::vector<std::vector<std::vector<double>>> subcluster_means;  // [class][sub]
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

// Class means are Gaussian directions rescaled so the closest pair sits
// exactly `separation` apart. Sub-cluster centers sit subcluster_offset away
// from their class mean in random directions.
inline SyntheticLayout make_layout(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_stream(spec.seed, "synthetic-layout");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto nc = static_cast<std::size_t>(spec.num_classes);
  const auto dim = static_cast<std::size_t>(spec.input_dim);

  SyntheticLayout layout;
  layout.class_means.assign(nc, std::vector<double>(dim));
  for (auto& m : layout.class_means) {
    for (double& v : m) v = normal(rng);
  }
  double min_d = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < nc; ++a) {
    for (std::size_t b = a + 1; b < nc; ++b) {
      min_d = std::min(min_d, std::sqrt(squared_distance(layout.class_means[a], layout.class_means[b])));
    }
  }
  const double scale = spec.separation / min_d;
  for (auto& m : layout.class_means) {
    for (double& v : m) v *= scale;
  }

  layout.subcluster_means.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    for (int s = 0; s < spec.subclusters; ++s) {
      std::vector<double> dir(dim);
      double norm = 0.0;
      for (double& v : dir) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      auto center = layout.class_means[c];
      if (spec.subclusters > 1) {
        for (std::size_t i = 0; i < dim; ++i) center[i] += spec.subcluster_offset * dir[i] / norm;
      }
      layout.subcluster_means[c].push_back(std::move(center));
    }
  }
  return layout;
}

// per_class samples of every class, spread evenly over its sub-clusters,
// ordered by class then sub-cluster.
inline Dataset sample_synthetic(const SyntheticLayout& layout, const SyntheticSpec& spec, int per_class,
                                std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset data;
  data.num_classes = spec.num_classes;
  data.samples.reserve(static_cast<std::size_t>(per_class) * static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto& subs = layout.subcluster_means[static_cast<std::size_t>(c)];
    for (int i = 0; i < per_class; ++i) {
      const auto& center = subs[static_cast<std::size_t>(i) % subs.size()];
      Sample s{center, c};
      for (double& v : s.features) v += spec.cluster_spread * normal(rng);
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

inline Dataset synth_dataset(const SyntheticSpec& spec) {
  return sample_synthetic(make_layout(spec), spec, spec.per_class, derive_seed(spec.seed, "synthetic-train"));
}

inline Dataset synth_dataset(int num_classes, int input_dim, int per_class, double separation, double cluster_spread,
                             std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.input_dim = input_dim;
  spec.per_class = per_class;
  spec.separation = separation;
  spec.cluster_spread = cluster_spread;
  spec.seed = seed;
  return synth_dataset(spec);
}

inline Trigger subcluster_trigger(const SyntheticLayout& layout, int source_class, int subcluster) {
  if (source_class < 0 || static_cast<std::size_t>(source_class) >= layout.subcluster_means.size()) {
    throw InputError("trigger class out of range");
  }
  const auto& subs = layout.subcluster_means[static_cast<std::size_t>(source_class)];
  if (subs.size() < 2) throw InputError("backdoor triggers need at least 2 sub-clusters per class");
  if (subcluster < 0 || static_cast<std::size_t>(subcluster) >= subs.size()) {
    throw InputError("trigger sub-cluster out of range");
  }
  return {source_class, subs, subcluster};
}

// ---------------------------------------------------------------------------
// IDX files (MNIST convention)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) throw FormatError(path + ": truncated header", buf.size());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an IDX image/label pair. Pixels are divided by 255; labels must lie
// in [0, num_classes). Any inconsistency throws before a dataset is built.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, int num_classes = 10) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);

  const std::uint32_t img_magic = detail::read_be32(images, 0, images_path);
  if (img_magic != kIdxImagesMagic) throw FormatError(images_path + ": bad IDX image magic", 0);
  const std::uint32_t count = detail::read_be32(images, 4, images_path);
  const std::uint32_t rows = detail::read_be32(images, 8, images_path);
  const std::uint32_t cols = detail::read_be32(images, 12, images_path);
  const std::size_t dim = std::size_t{rows} * cols;
  const std::size_t img_expected = 16 + std::size_t{count} * dim;
  if (images.size() != img_expected) {
    throw FormatError(images_path + ": expected " + std::to_string(img_expected) + " bytes, found " +
                          std::to_string(images.size()),
                      std::min(images.size(), img_expected));
  }

  const std::uint32_t lbl_magic = detail::read_be32(labels, 0, labels_path);
  if (lbl_magic != kIdxLabelsMagic) throw FormatError(labels_path + ": bad IDX label magic", 0);
  const std::uint32_t lbl_count = detail::read_be32(labels, 4, labels_path);
  if (lbl_count != count) {
    throw FormatError(labels_path + ": label count " + std::to_string(lbl_count) + " does not match image count " +
                          std::to_string(count),
                      4);
  }
  const std::size_t lbl_expected = 8 + std::size_t{count};
  if (labels.size() != lbl_expected) {
    throw FormatError(labels_path + ": expected " + std::to_string(lbl_expected) + " bytes, found " +
                          std::to_string(labels.size()),
                      std::min(labels.size(), lbl_expected));
  }

  Dataset data;
  data.num_classes = num_classes;
  data.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = labels[8 + i];
    if (label >= num_classes) {
      throw FormatError(labels_path + ": label " + std::to_string(label) + " out of range", 8 + i);
    }
    Sample s;
    s.label = label;
    s.features.resize(dim);
    const unsigned char* px = images.data() + 16 + i * dim;
    for (std::size_t j = 0; j < dim; ++j) s.features[j] = px[j] / 255.0;
    data.samples.push_back(std::move(s));
  }
  return data;
}

// Writes an unsigned-byte IDX pair (features are clamped to [0,1] and scaled
// by 255; dim must equal rows*cols).
inline void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path,
                      std::uint32_t rows, std::uint32_t cols) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw InputError("cannot open IDX output files");
  const auto count = static_cast<std::uint32_t>(data.size());
  detail::write_be32(img, kIdxImagesMagic);
  detail::write_be32(img, count);
  detail::write_be32(img, rows);
  detail::write_be32(img, cols);
  detail::write_be32(lbl, kIdxLabelsMagic);
  detail::write_be32(lbl, count);
  for (const auto& s : data.samples) {
    if (s.features.size() != std::size_t{rows} * cols) throw InputError("feature size does not match rows*cols");
    for (double f : s.features) {
      img.put(static_cast<char>(std::lround(std::clamp(f, 0.0, 1.0) * 255.0)));
    }
    lbl.put(static_cast<char>(s.label));
  }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

// Random permutation cut into n near-equal parts (sizes differ by at most 1,
// larger parts first).
inline std::vector<Dataset> partition_iid(const Dataset& data, int n, Rng& rng) {
  if (n < 1) throw InputError("partition needs at least one client");
  if (static_cast<std::size_t>(n) > data.size()) {
    throw InputError("cannot split " + std::to_string(data.size()) + " samples among " + std::to_string(n) +
                     " clients");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t base = data.size() / static_cast<std::size_t>(n);
  const std::size_t extra = data.size() % static_cast<std::size_t>(n);
  std::vector<Dataset> parts(static_cast<std::size_t>(n));
  std::size_t pos = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    parts[k].num_classes = data.num_classes;
    const std::size_t size = base + (k < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) parts[k].samples.push_back(data.samples[order[pos++]]);
  }
  return parts;
}

// Label-sorted data cut into 2n contiguous shards (sizes differ by at most 1);
// each client receives two distinct shards at random.
inline std::vector<Dataset> partition_noniid_shards(const Dataset& data, int n, Rng& rng) {
  if (n < 1) throw InputError("partition needs at least one client");
  const std::size_t shards = 2 * static_cast<std::size_t>(n);
  if (data.size() < shards) {
    throw InputError("cannot cut " + std::to_string(data.size()) + " samples into " + std::to_string(shards) +
                     " shards");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data.samples[a].label < data.samples[b].label; });

  const std::size_t base = data.size() / shards;
  const std::size_t extra = data.size() % shards;
  std::vector<std::size_t> starts(shards + 1, 0);
  for (std::size_t s = 0; s < shards; ++s) starts[s + 1] = starts[s] + base + (s < extra ? 1 : 0);

  std::vector<std::size_t> shard_ids(shards);
  std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  std::vector<Dataset> parts(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    parts[k].num_classes = data.num_classes;
    std::array<std::size_t, 2> mine{shard_ids[2 * k], shard_ids[2 * k + 1]};
    std::sort(mine.begin(), mine.end());
    for (std::size_t s : mine) {
      for (std::size_t j = starts[s]; j < starts[s + 1]; ++j) parts[k].samples.push_back(data.samples[order[j]]);
    }
  }
  return parts;
}

}  // namespace cvfl
