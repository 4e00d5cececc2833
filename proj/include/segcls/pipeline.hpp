#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "segcls/error.hpp"
#include "segcls/eval.hpp"
#include "segcls/features.hpp"
#include "segcls/manifest.hpp"
#include "segcls/train.hpp"
#include "segcls/wav.hpp"

// End-to-end wiring used by the CLI: manifest -> LMEL files -> datasets ->
// sample-level metrics.
namespace segcls::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kSegmentIndexFile = "segments.csv";
inline constexpr const char* kNormFile = "norm.lnrm";

struct SkippedClip {
  std::string clip_id;
  std::string reason;
};

struct FeaturizeOptions {
  features::FrameSpec frame;
  bool fit_norm = true;
  unsigned threads = 1;
};

struct FeaturizeResult {
  std::size_t clips = 0;
  std::size_t segments = 0;
  std::vector<SkippedClip> skipped;
  std::optional<features::NormStats> norm;
};

inline std::string segment_file_name(const std::string& clip_id, std::size_t index) {
  return clip_id + "." + std::to_string(index) + ".lmel";
}

/// Loads the clip's [start_sec, end_sec) span as 16 kHz mono.
inline features::AudioClip load_clip(const manifest::Manifest& m, const manifest::Row& row) {
  const auto audio = wav::load_mono(m.resolve(row).string(), features::kDefaultSampleRate);
  const auto rate = static_cast<double>(audio.sample_rate);
  const auto first = static_cast<std::size_t>(std::llround(std::max(0.0, row.start_sec) * rate));
  const auto last = std::min(audio.samples.size(), static_cast<std::size_t>(std::llround(row.end_sec * rate)));
  features::AudioClip clip;
  clip.clip_id = row.clip_id;
  clip.sample_rate = audio.sample_rate;
  clip.labels = row.labels;
  if (first < last) clip.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(first),
                                        audio.samples.begin() + static_cast<std::ptrdiff_t>(last));
  return clip;
}

/// Featurizes every clip: one LMEL per 1 s segment, a segments.csv index, and
/// (optionally) norm.lnrm fitted on exactly these clips. Unreadable or short
/// clips are skipped and reported, never fatal.
inline FeaturizeResult featurize(const manifest::Manifest& m, const fs::path& out_dir, const FeaturizeOptions& opt) {
  fs::create_directories(out_dir);
  const auto fb = features::default_filterbank(opt.frame);

  struct ClipOutput {
    std::vector<features::FeatureMatrix> segments;
    std::optional<std::string> error;
  };
  std::vector<ClipOutput> outputs(m.rows.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < m.rows.size(); i = next++) {
      try {
        const auto clip = load_clip(m, m.rows[i]);
        for (const auto& seg : features::segment_clip(clip)) {
          outputs[i].segments.push_back(features::featurize_segment(seg, opt.frame, fb));
        }
      } catch (const std::exception& e) {
        outputs[i].segments.clear();
        outputs[i].error = e.what();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(m.rows.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Writes and the normaliser merge run in manifest order.
  FeaturizeResult result;
  features::NormAccumulator acc;
  std::ofstream index(out_dir / kSegmentIndexFile);
  if (!index) throw DataError("cannot write " + (out_dir / kSegmentIndexFile).string());
  index << "file,clip_id,segment,labels\n";
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto& row = m.rows[i];
    if (outputs[i].error) {
      result.skipped.push_back({row.clip_id, *outputs[i].error});
      continue;
    }
    std::string labels;
    for (std::size_t k = 0; k < row.labels.size(); ++k) labels += (k ? ";" : "") + std::to_string(row.labels[k]);
    for (std::size_t s = 0; s < outputs[i].segments.size(); ++s) {
      const auto name = segment_file_name(row.clip_id, s);
      features::save_lmel((out_dir / name).string(), outputs[i].segments[s]);
      index << name << "," << row.clip_id << "," << s << "," << labels << "\n";
      acc.add(outputs[i].segments[s]);
      ++result.segments;
    }
    ++result.clips;
  }
  if (opt.fit_norm) {
    if (result.segments == 0) throw DataError("no clip could be featurized; cannot fit normaliser");
    result.norm = acc.finalize();
    features::save_lnrm((out_dir / kNormFile).string(), *result.norm);
  }
  return result;
}

// ---------------------------------------------------------------------------

struct SegmentEntry {
  std::string file;
  std::size_t index = 0;
};

/// clip_id -> segments, from a features directory's segments.csv.
inline std::map<std::string, std::vector<SegmentEntry>> read_segment_index(const fs::path& features_dir) {
  std::ifstream is(features_dir / kSegmentIndexFile);
  if (!is) throw DataError("missing segment index " + (features_dir / kSegmentIndexFile).string());
  std::map<std::string, std::vector<SegmentEntry>> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = manifest::detail::split_csv(line);
    if (f.size() != 4) throw DataError("malformed segment index line: " + line);
    out[f[1]].push_back({f[0], static_cast<std::size_t>(std::stoul(f[2]))});
  }
  for (auto& [clip, segs] : out) {
    std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  }
  return out;
}

/// Builds a normalised segment dataset for the manifest's clips. Every clip
/// must have features; missing ones are listed in the error.
template <typename T>
train::Dataset<T> load_dataset(const manifest::Manifest& m, const fs::path& features_dir,
                               const features::NormStats& norm) {
  const auto index = read_segment_index(features_dir);
  train::Dataset<T> data;
  data.classes = m.class_count();
  std::vector<std::string> missing;
  for (const auto& row : m.rows) {
    auto it = index.find(row.clip_id);
    if (it == index.end() || it->second.empty()) {
      missing.push_back(row.clip_id);
      continue;
    }
    const std::size_t sample = data.sample_ids.size();
    data.sample_ids.push_back(row.clip_id);
    std::vector<int> hot(data.classes, 0);
    for (int l : row.labels) hot.at(static_cast<std::size_t>(l)) = 1;
    data.sample_labels.push_back(std::move(hot));
    for (const auto& seg : it->second) {
      const auto path = features_dir / seg.file;
      if (!fs::exists(path)) {
        missing.push_back(row.clip_id + "." + std::to_string(seg.index));
        continue;
      }
      const auto f = features::normalize(features::load_lmel(path.string()), norm);
      const Dims dims{1, f.n_mels(), f.n_frames()};
      if (data.example_dims.empty()) data.example_dims = dims;
      if (dims != data.example_dims) throw DataError("segment " + seg.file + " has unexpected shape");
      std::vector<T> input(f.values.data().size());
      for (std::size_t k = 0; k < input.size(); ++k) input[k] = static_cast<T>(f.values.data()[k]);
      data.inputs.push_back(std::move(input));
      data.segment_sample.push_back(sample);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw DataError("missing features for: " + list);
  }
  if (data.segments() == 0) throw DataError("dataset has no segments");
  return data;
}

/// Rejects label formats the task mode cannot use.
inline void check_mode_labels(const manifest::Manifest& m, train::TaskMode mode) {
  for (const auto& r : m.rows) {
    if (mode == train::TaskMode::kSingleLabel && r.labels.size() != 1) {
      throw UsageError("single_label mode needs exactly one label per clip; " + r.clip_id + " has " +
                       std::to_string(r.labels.size()));
    }
    if (r.labels.empty()) throw UsageError("clip " + r.clip_id + " has no labels");
  }
}

// ---------------------------------------------------------------------------

struct EvalReport {
  train::TaskMode mode = train::TaskMode::kMultiLabel;
  std::size_t samples = 0;
  std::size_t segments = 0;
  std::optional<eval::AucReport> auc;
  std::optional<double> accuracy;

  double metric() const { return auc ? auc->overall : accuracy.value_or(0.0); }
};

/// Scores every segment in eval mode, averages per sample, and computes the
/// mode's metric.
template <typename T>
EvalReport evaluate(nn::Network<T>& net, const train::Dataset<T>& data, train::TaskMode mode) {
  EvalReport r;
  r.mode = mode;
  r.samples = data.samples();
  r.segments = data.segments();
  const auto table = train::sample_table(data, train::predict_segments(net, data));
  if (mode == train::TaskMode::kMultiLabel) {
    r.auc = eval::weighted_auc(table);
  } else {
    r.accuracy = eval::accuracy(table);
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = train::mode_name(r.mode);
  j["samples"] = r.samples;
  j["segments"] = r.segments;
  if (r.auc) j["auc"] = eval::to_json(*r.auc);
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  return j;
}

}  // namespace segcls::pipeline
