#pragma once

// Materialized epoch-wise soft labels.
//
// One file per epoch (epoch_NNNN.lbl):
//   "DBLCACHE" u32 version i32 epoch i32 steps i32 classes f64 tau str pool
//   then per step: u64 length, record bytes, sha256(record bytes)
// A record holds the step index, the batch rows, the augmentation trace, and
// the probabilities and mean logits the pool produced for that view.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dbench/core/binio.hpp"
#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/relabel/augment.hpp"
#include "dbench/relabel/soft_labels.hpp"

namespace dbench::relabel {

namespace fs = std::filesystem;

// Everything that fixes the sequence of (batch, view, label) triples seen by
// a student.
struct RelabelPlan {
  int epochs = 1;
  int batch_size = 50;
  std::uint64_t order_seed = 0;
  AugSpec aug;
  double temperature = 20.0;
};

struct CachedStep {
  int step = 0;
  std::vector<int> rows;
  AugTrace trace;
  Tensor<float> probabilities;
  Tensor<float> mean_logits;
};

inline constexpr char kCacheMagic[8] = {'D', 'B', 'L', 'C', 'A', 'C', 'H', 'E'};

inline fs::path cache_epoch_path(const fs::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.lbl", epoch);
  return dir / name;
}

// Teacher-side view of a batch: the student's view unless the shared-view
// contract is relaxed for ablation.
inline AugmentedBatch teacher_view(const AugmentedBatch& student_view, const Tensor<float>& images,
                                   const std::vector<int>& labels, const AugSpec& aug, int epoch, int step) {
  if (aug.shared_view) return student_view;
  return augment_batch(images, labels, aug, epoch, step, /*stream=*/1);
}

inline void write_cache_epoch(const fs::path& dir, int epoch, int num_classes, double temperature,
                              const std::string& pool_fp, const std::vector<CachedStep>& steps) {
  const fs::path path = cache_epoch_path(dir, epoch);
  const fs::path tmp = path.string() + ".tmp";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::io, "cannot write label cache " + path.string());
  ByteWriter head;
  for (char ch : kCacheMagic) head.put(ch);
  head.put<std::uint32_t>(1);
  head.put<std::int32_t>(epoch);
  head.put<std::int32_t>(int(steps.size()));
  head.put<std::int32_t>(num_classes);
  head.put(temperature);
  head.put_string(pool_fp);
  out.write(reinterpret_cast<const char*>(head.bytes().data()), std::streamsize(head.bytes().size()));
  for (const auto& s : steps) {
    ByteWriter rec;
    rec.put<std::int32_t>(s.step);
    rec.put_span(std::span<const int>(s.rows));
    write_trace(rec, s.trace);
    rec.put<std::int32_t>(s.probabilities.shape.n);
    rec.put_span(std::span<const float>(s.probabilities.data));
    rec.put_span(std::span<const float>(s.mean_logits.data));
    const auto digest = Sha256().update(rec.bytes().data(), rec.bytes().size()).digest();
    const std::uint64_t len = rec.bytes().size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(reinterpret_cast<const char*>(rec.bytes().data()), std::streamsize(len));
    out.write(reinterpret_cast<const char*>(digest.data()), std::streamsize(digest.size()));
  }
  out.close();
  require(bool(out), ErrorKind::io, "short write on label cache " + path.string());
  fs::rename(tmp, path);
}

inline std::vector<CachedStep> read_cache_epoch(const fs::path& dir, int epoch) {
  const fs::path path = cache_epoch_path(dir, epoch);
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::missing_input, "label cache missing for epoch " + std::to_string(epoch) + ": " +
                                                  path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "label cache epoch " + std::to_string(epoch);
  ByteReader r(bytes);
  int steps = 0, classes = 0;
  try {
    for (char ch : kCacheMagic) require(r.get<char>() == ch, ErrorKind::integrity, where + ": bad magic");
    require(r.get<std::uint32_t>() == 1, ErrorKind::integrity, where + ": unsupported version");
    require(r.get<std::int32_t>() == epoch, ErrorKind::integrity, where + ": epoch field mismatch");
    steps = r.get<std::int32_t>();
    classes = r.get<std::int32_t>();
    r.get<double>();
    r.get_string();
  } catch (const Error& e) {
    fail(ErrorKind::integrity, where + ": corrupt header (" + e.what() + ")");
  }

  std::vector<CachedStep> out;
  std::size_t pos = r.pos();
  for (int k = 0; k < steps; ++k) {
    const std::string at = where + " step " + std::to_string(k);
    require(pos + 8 <= bytes.size(), ErrorKind::integrity, at + ": truncated");
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos, 8);
    pos += 8;
    require(len <= bytes.size() && pos + len + 32 <= bytes.size(), ErrorKind::integrity, at + ": truncated");
    const std::span<const unsigned char> rec(bytes.data() + pos, len);
    const auto digest = Sha256().update(rec.data(), rec.size()).digest();
    require(std::equal(digest.begin(), digest.end(), bytes.begin() + std::ptrdiff_t(pos + len)),
            ErrorKind::integrity, at + ": checksum mismatch");
    pos += len + 32;
    try {
      ByteReader rr(rec);
      CachedStep s;
      s.step = rr.get<std::int32_t>();
      s.rows = rr.get_vector<int>();
      s.trace = read_trace(rr);
      const int b = rr.get<std::int32_t>();
      s.probabilities = Tensor<float>(Shape{b, classes, 1, 1}, rr.get_vector<float>());
      s.mean_logits = Tensor<float>(Shape{b, classes, 1, 1}, rr.get_vector<float>());
      out.push_back(std::move(s));
    } catch (const Error& e) {
      fail(ErrorKind::integrity, at + ": malformed record (" + e.what() + ")");
    }
  }
  return out;
}

// Runs the relabel schedule for `plan.epochs` epochs and stores every
// step's labels and trace. Returns the total bytes written.
inline std::uintmax_t cache_labels(teachers::TeacherPool& pool, const datahub::DistilledDataset& ds,
                                   const RelabelPlan& plan, const fs::path& dir) {
  require(plan.epochs >= 1, ErrorKind::config, "cache_labels: epochs must be >= 1");
  require(plan.batch_size >= 1, ErrorKind::config, "cache_labels: batch size must be >= 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create label cache directory " + dir.string());
  std::uintmax_t total = 0;
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::vector<CachedStep> steps;
    const auto batches = epoch_batches(ds.size(), plan.batch_size, plan.order_seed, epoch);
    for (int step = 0; step < int(batches.size()); ++step) {
      const auto& rows = batches[step];
      const auto images = gather_batch(ds.images, rows);
      std::vector<int> labels;
      for (int r : rows) labels.push_back(ds.labels[r]);
      const auto view = augment_batch(images, labels, plan.aug, epoch, step);
      const auto tview = teacher_view(view, images, labels, plan.aug, epoch, step);
      auto sl = soft_labels(pool, tview, plan.temperature);
      steps.push_back({step, rows, view.trace, std::move(sl.probabilities), std::move(sl.mean_logits)});
    }
    write_cache_epoch(dir, epoch, pool.num_classes(), plan.temperature, pool.fingerprint(), steps);
    total += fs::file_size(cache_epoch_path(dir, epoch));
  }
  return total;
}

}  // namespace dbench::relabel
