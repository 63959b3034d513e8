#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// Labeled samples with features normalized to [-1, 1].
template <typename R>
struct Dataset {
  Tensor<R> x;                       // N x D
  std::vector<std::int64_t> y;       // dense ids 0..K-1
  std::string split;                 // "train" | "test"
  std::int64_t image_side = 0;       // >0 for square images (sample dumps)

  std::int64_t size() const { return x.rows(); }
  std::int64_t dim() const { return x.cols(); }

  std::int64_t num_classes() const {
    std::int64_t k = 0;
    for (std::int64_t v : y) k = std::max(k, v + 1);
    return k;
  }
};

template <typename R>
struct Task {
  std::vector<std::int64_t> classes;  // global dense ids, disjoint across tasks
  Dataset<R> train;
  Dataset<R> test;
};

template <typename R>
struct TaskStream {
  std::vector<Task<R>> tasks;
  std::int64_t feature_dim = 0;
  std::int64_t image_side = 0;

  std::int64_t total_classes() const {
    std::int64_t k = 0;
    for (const auto& t : tasks) k += static_cast<std::int64_t>(t.classes.size());
    return k;
  }
  void validate_disjoint() const {
    std::vector<std::int64_t> seen;
    for (const auto& t : tasks)
      for (std::int64_t c : t.classes) {
        if (std::find(seen.begin(), seen.end(), c) != seen.end())
          fail("task stream: class " + std::to_string(c) + " appears in two tasks");
        seen.push_back(c);
      }
  }
};

// ---------------------------------------------------------------------------
// IDX ingestion (gzip accepted transparently via zlib)

namespace detail {

struct IdxFile {
  std::vector<std::uint8_t> bytes;
  std::string path;

  std::uint32_t u32(std::size_t off) const {
    if (off + 4 > bytes.size())
      fail("IDX " + path + ": truncated at byte offset " + std::to_string(off));
    return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
           (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
  }
};

inline IdxFile read_file_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) fail("IDX: cannot open " + path);
  IdxFile out;
  out.path = path;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0)
    out.bytes.insert(out.bytes.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) fail("IDX: read error in " + path);
  if (out.bytes.empty()) fail("IDX " + path + ": empty file");
  return out;
}

}  // namespace detail

/// Parses a big-endian IDX image file (magic 0x00000803, uint8, rank 3) into
/// rows of pixels normalized by v/127.5 - 1. 2x2 average pooling halves the
/// side when downsample2x is set.
template <typename R>
Dataset<R> read_idx_images(const std::string& path, bool downsample2x = false) {
  const auto f = detail::read_file_maybe_gz(path);
  if (f.u32(0) != 0x00000803u)
    fail("IDX " + path + ": bad magic at byte offset 0 (expected 0x00000803 image file)");
  const std::int64_t count = f.u32(4);
  const std::int64_t rows = f.u32(8);
  const std::int64_t cols = f.u32(12);
  const std::size_t need = 16 + static_cast<std::size_t>(count * rows * cols);
  if (f.bytes.size() < need)
    fail("IDX " + path + ": truncated at byte offset " + std::to_string(f.bytes.size()) +
         " (need " + std::to_string(need) + ")");

  Dataset<R> ds;
  ds.split = "train";
  if (downsample2x) {
    if (rows % 2 || cols % 2) fail("IDX " + path + ": odd image size cannot be 2x2 pooled");
    const std::int64_t r2 = rows / 2, c2 = cols / 2;
    ds.image_side = r2;
    ds.x = Tensor<R>(count, r2 * c2);
    for (std::int64_t i = 0; i < count; ++i) {
      const std::size_t base = 16 + static_cast<std::size_t>(i * rows * cols);
      for (std::int64_t r = 0; r < r2; ++r)
        for (std::int64_t c = 0; c < c2; ++c) {
          const double sum =
              double(f.bytes[base + (2 * r) * cols + 2 * c]) +
              double(f.bytes[base + (2 * r) * cols + 2 * c + 1]) +
              double(f.bytes[base + (2 * r + 1) * cols + 2 * c]) +
              double(f.bytes[base + (2 * r + 1) * cols + 2 * c + 1]);
          ds.x.at(i, r * c2 + c) = static_cast<R>(sum / 4.0 / 127.5 - 1.0);
        }
    }
  } else {
    ds.image_side = rows;
    ds.x = Tensor<R>(count, rows * cols);
    for (std::int64_t i = 0; i < count; ++i)
      for (std::int64_t p = 0; p < rows * cols; ++p)
        ds.x.at(i, p) =
            static_cast<R>(double(f.bytes[16 + static_cast<std::size_t>(i * rows * cols + p)]) /
                               127.5 -
                           1.0);
  }
  return ds;
}

/// Parses a big-endian IDX label file (magic 0x00000801, uint8, rank 1).
inline std::vector<std::int64_t> read_idx_labels(const std::string& path) {
  const auto f = detail::read_file_maybe_gz(path);
  if (f.u32(0) != 0x00000801u)
    fail("IDX " + path + ": bad magic at byte offset 0 (expected 0x00000801 label file)");
  const std::int64_t count = f.u32(4);
  if (f.bytes.size() < 8 + static_cast<std::size_t>(count))
    fail("IDX " + path + ": truncated at byte offset " + std::to_string(f.bytes.size()));
  std::vector<std::int64_t> labels(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    labels[static_cast<std::size_t>(i)] = f.bytes[8 + static_cast<std::size_t>(i)];
  return labels;
}

// ---------------------------------------------------------------------------
// Task construction

struct TaskSplitSpec {
  std::int64_t classes_per_task = 2;
  std::vector<std::int64_t> ordering;  // class ids, partitioned in order
  std::int64_t per_class_cap = 0;      // 0 = unlimited

  void validate() const {
    if (classes_per_task < 1) fail("TaskSplitSpec: classes_per_task must be >= 1");
    if (ordering.empty()) fail("TaskSplitSpec: ordering must list the classes to use");
    if (static_cast<std::int64_t>(ordering.size()) % classes_per_task != 0)
      fail("TaskSplitSpec: ordering size not divisible by classes_per_task");
    auto sorted = ordering;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      fail("TaskSplitSpec: a class appears in two tasks");
  }
};

/// Splits one dataset into ordered per-task chunks following the spec.
/// Original labels are remapped to dense global ids by position in the
/// ordering, so a partial ordering yields a stream over just those classes.
template <typename R>
std::vector<Dataset<R>> split_incremental(const Dataset<R>& full, const TaskSplitSpec& spec) {
  spec.validate();
  std::vector<std::int64_t> remap(static_cast<std::size_t>(full.num_classes()), -1);
  for (std::size_t i = 0; i < spec.ordering.size(); ++i) {
    const std::int64_t cls = spec.ordering[i];
    if (cls < 0 || cls >= full.num_classes())
      fail("TaskSplitSpec: class " + std::to_string(cls) + " not present in dataset");
    remap[static_cast<std::size_t>(cls)] = static_cast<std::int64_t>(i);
  }

  const std::int64_t n_tasks =
      static_cast<std::int64_t>(spec.ordering.size()) / spec.classes_per_task;
  std::vector<Dataset<R>> out(static_cast<std::size_t>(n_tasks));
  std::vector<std::vector<std::int64_t>> rows_per_task(static_cast<std::size_t>(n_tasks));
  std::vector<std::int64_t> taken(spec.ordering.size(), 0);
  for (std::int64_t r = 0; r < full.size(); ++r) {
    const std::int64_t orig = full.y[static_cast<std::size_t>(r)];
    const std::int64_t dense = remap[static_cast<std::size_t>(orig)];
    if (dense < 0) continue;  // class not covered by the spec
    if (spec.per_class_cap > 0 && taken[static_cast<std::size_t>(dense)] >= spec.per_class_cap)
      continue;
    taken[static_cast<std::size_t>(dense)] += 1;
    rows_per_task[static_cast<std::size_t>(dense / spec.classes_per_task)].push_back(r);
  }

  for (std::int64_t t = 0; t < n_tasks; ++t) {
    const auto& rows = rows_per_task[static_cast<std::size_t>(t)];
    Dataset<R>& ds = out[static_cast<std::size_t>(t)];
    ds.split = full.split;
    ds.image_side = full.image_side;
    ds.x = Tensor<R>(static_cast<std::int64_t>(rows.size()), full.dim());
    ds.y.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::int64_t c = 0; c < full.dim(); ++c)
        ds.x.at(static_cast<std::int64_t>(i), c) = full.x.at(rows[i], c);
      ds.y.push_back(remap[static_cast<std::size_t>(full.y[static_cast<std::size_t>(rows[i])])]);
    }
  }
  return out;
}

/// Zips per-task train/test chunks into a TaskStream.
template <typename R>
TaskStream<R> make_stream(const Dataset<R>& train, const Dataset<R>& test,
                          const TaskSplitSpec& spec) {
  auto tr = split_incremental(train, spec);
  TaskSplitSpec test_spec = spec;
  test_spec.per_class_cap = 0;  // evaluation uses full held-out sets
  auto te = split_incremental(test, test_spec);
  TaskStream<R> stream;
  stream.feature_dim = train.dim();
  stream.image_side = train.image_side;
  for (std::size_t t = 0; t < tr.size(); ++t) {
    Task<R> task;
    for (std::int64_t c = 0; c < spec.classes_per_task; ++c)
      task.classes.push_back(static_cast<std::int64_t>(t) * spec.classes_per_task + c);
    tr[t].split = "train";
    te[t].split = "test";
    task.train = std::move(tr[t]);
    task.test = std::move(te[t]);
    stream.tasks.push_back(std::move(task));
  }
  stream.validate_disjoint();
  return stream;
}

/// Synthetic 2-D stream: class means equally spaced on a circle (radius 4,
/// sigma 0.35 before scaling), mapped by 1/5 into the [-1, 1] feature box.
/// Deterministic under the seed; 80/20 train/test split per class.
template <typename R>
TaskStream<R> gaussian_tasks(std::int64_t num_tasks, std::int64_t classes_per_task,
                             std::int64_t samples_per_class, std::uint64_t seed) {
  if (num_tasks < 1 || classes_per_task < 1 || samples_per_class < 1)
    fail("gaussian_tasks: parameters must be positive");
  const std::int64_t k = num_tasks * classes_per_task;
  const double radius = 4.0, sigma = 0.35, scale = 1.0 / 5.0;
  Rng rng(seed);
  TaskStream<R> stream;
  stream.feature_dim = 2;
  const std::int64_t n_train = (samples_per_class * 8) / 10;
  for (std::int64_t t = 0; t < num_tasks; ++t) {
    Task<R> task;
    std::vector<std::vector<std::pair<R, R>>> pts(static_cast<std::size_t>(classes_per_task));
    for (std::int64_t c = 0; c < classes_per_task; ++c) {
      const std::int64_t cls = t * classes_per_task + c;
      task.classes.push_back(cls);
      const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(cls) /
                           static_cast<double>(k);
      const double mx = radius * std::cos(angle), my = radius * std::sin(angle);
      auto& v = pts[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < samples_per_class; ++i)
        v.emplace_back(static_cast<R>((mx + sigma * rng.normal()) * scale),
                       static_cast<R>((my + sigma * rng.normal()) * scale));
    }
    auto fill = [&](Dataset<R>& ds, std::int64_t lo, std::int64_t hi, const char* split) {
      const std::int64_t per = hi - lo;
      ds.split = split;
      ds.x = Tensor<R>(per * classes_per_task, 2);
      std::int64_t row = 0;
      for (std::int64_t c = 0; c < classes_per_task; ++c)
        for (std::int64_t i = lo; i < hi; ++i) {
          ds.x.at(row, 0) = pts[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)].first;
          ds.x.at(row, 1) = pts[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)].second;
          ds.y.push_back(t * classes_per_task + c);
          ++row;
        }
    };
    fill(task.train, 0, n_train, "train");
    fill(task.test, n_train, samples_per_class, "test");
    stream.tasks.push_back(std::move(task));
  }
  stream.validate_disjoint();
  return stream;
}

}  // namespace dgm
