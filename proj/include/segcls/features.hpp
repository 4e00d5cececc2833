#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "segcls/binary_io.hpp"
#include "segcls/error.hpp"

// Segment-level log-mel front end: 1 s segments, 25 ms / 10 ms framing,
// 2048-point FFT, 64 HTK mel bands, dimension-wise normalisation.
namespace segcls::features {

inline constexpr int kDefaultSampleRate = 16000;
inline constexpr int kDefaultMels = 64;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kVarianceFloor = 1e-8;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct AudioClip {
  std::string clip_id;
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = kDefaultSampleRate;
  std::vector<int> labels;
};

struct Segment {
  std::string parent_id;
  std::size_t index = 0;
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;
  std::vector<int> labels;
};

struct FrameSpec {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t fft_len = 2048;

  std::size_t window_samples(int sample_rate) const {
    return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
  }
  std::size_t hop_samples(int sample_rate) const {
    return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
  }
  /// Frame count for a signal of n samples, no centre padding.
  std::size_t frame_count(std::size_t n, int sample_rate) const {
    const std::size_t win = window_samples(sample_rate);
    if (n < win) return 0;
    return (n - win) / hop_samples(sample_rate) + 1;
  }
};

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;  // fft_len / 2 + 1
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> center_hz;  // one per filter
  Matrix weights;                 // n_mels x n_bins
};

struct FeatureMatrix {
  Matrix values;  // n_mels x n_frames
  std::string segment_ref;

  std::size_t n_mels() const { return values.rows(); }
  std::size_t n_frames() const { return values.cols(); }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

inline bool operator==(const NormStats& a, const NormStats& b) {
  return a.mean == b.mean && a.variance == b.variance;
}

// ---------------------------------------------------------------------------
// Segmentation

inline std::vector<Segment> segment_clip(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw DataError("clip " + clip.clip_id + ": sample rate must be positive");
  const auto per_segment = static_cast<std::size_t>(clip.sample_rate);
  const std::size_t n = clip.samples.size() / per_segment;
  if (n == 0) throw DataError("clip " + clip.clip_id + " is shorter than 1 second");
  std::vector<Segment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Segment s;
    s.parent_id = clip.clip_id;
    s.index = i;
    s.sample_rate = clip.sample_rate;
    s.labels = clip.labels;
    auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(i * per_segment);
    s.samples.assign(first, first + static_cast<std::ptrdiff_t>(per_segment));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Power spectrogram, (fft_len/2 + 1) x T.
inline Matrix stft_power(std::span<const double> samples, int sample_rate, const FrameSpec& spec) {
  const std::size_t win = spec.window_samples(sample_rate);
  const std::size_t hop = spec.hop_samples(sample_rate);
  if (win == 0 || hop == 0) throw UsageError("frame spec gives an empty window or hop");
  if (spec.window_ms < spec.hop_ms) throw UsageError("window must not be shorter than hop");
  if (spec.fft_len < win) throw UsageError("fft_len is smaller than the window length");
  if (samples.size() < win) throw DataError("segment shorter than one analysis window");

  const std::size_t n_bins = spec.fft_len / 2 + 1;
  const std::size_t n_frames = spec.frame_count(samples.size(), sample_rate);
  const auto window = hann_window(win);

  Matrix power(n_bins, n_frames);
  // fftw_malloc'd buffers; plan creation is not thread-safe, execution is.
  auto* in = static_cast<double*>(fftw_malloc(sizeof(double) * spec.fft_len));
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_bins));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(spec.fft_len), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(in, in + spec.fft_len, 0.0);
    const double* frame = samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) in[i] = frame[i] * window[i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < n_bins; ++k) {
      power(k, t) = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return power;
}

inline Matrix stft_power(const Segment& segment, const FrameSpec& spec) {
  return stft_power(segment.samples, segment.sample_rate, spec);
}

// ---------------------------------------------------------------------------
// Mel filterbank (HTK mel scale, triangular, peak 1)

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline MelFilterbank build_mel_filterbank(std::size_t n_mels, std::size_t fft_len, int sample_rate,
                                          double fmin, double fmax) {
  if (n_mels == 0) throw UsageError("n_mels must be positive");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw UsageError("mel range must satisfy 0 <= fmin < fmax <= sample_rate/2");

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = fft_len / 2 + 1;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.weights = Matrix(n_mels, fb.n_bins);

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_len);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    fb.center_hz.push_back(mid);
    double total = 0.0;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      fb.weights(m, k) = w;
      total += w;
    }
    if (total <= 0.0) {
      throw UsageError("mel filter " + std::to_string(m) + " covers no FFT bin; too many mel bands for fft_len " +
                       std::to_string(fft_len));
    }
  }
  return fb;
}

/// Default 64-band bank over [0, Nyquist].
inline MelFilterbank default_filterbank(const FrameSpec& spec, int sample_rate = kDefaultSampleRate) {
  return build_mel_filterbank(kDefaultMels, spec.fft_len, sample_rate, 0.0, sample_rate / 2.0);
}

inline FeatureMatrix log_mel(const Matrix& power, const MelFilterbank& fb, double floor_eps = kLogFloor) {
  if (power.rows() != fb.n_bins) {
    throw UsageError("power spectrum has " + std::to_string(power.rows()) + " bins, filterbank expects " +
                     std::to_string(fb.n_bins));
  }
  FeatureMatrix out;
  out.values = Matrix(fb.n_mels, power.cols());
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const auto w = fb.weights.row(m);
    for (std::size_t t = 0; t < power.cols(); ++t) {
      double e = 0.0;
      for (std::size_t k = 0; k < fb.n_bins; ++k) {
        if (w[k] != 0.0) e += w[k] * power(k, t);
      }
      out.values(m, t) = std::log(e + floor_eps);
    }
  }
  return out;
}

/// Full chain for one segment.
inline FeatureMatrix featurize_segment(const Segment& segment, const FrameSpec& spec, const MelFilterbank& fb) {
  auto fm = log_mel(stft_power(segment, spec), fb);
  fm.segment_ref = segment.parent_id + "." + std::to_string(segment.index);
  return fm;
}

// ---------------------------------------------------------------------------
// Normalisation

/// Mergeable per-dimension sum / sum-of-squares reduction.
class NormAccumulator {
 public:
  explicit NormAccumulator(std::size_t dims = kDefaultMels) : sum_(dims, 0.0), sum_sq_(dims, 0.0) {}

  void add(const FeatureMatrix& f) {
    if (f.n_mels() != sum_.size()) throw UsageError("feature dimension mismatch in normaliser");
    for (std::size_t d = 0; d < f.n_mels(); ++d) {
      for (double x : f.values.row(d)) {
        sum_[d] += x;
        sum_sq_[d] += x * x;
      }
    }
    frames_ += f.n_frames();
  }

  void merge(const NormAccumulator& other) {
    if (other.sum_.size() != sum_.size()) throw UsageError("cannot merge accumulators of different width");
    for (std::size_t d = 0; d < sum_.size(); ++d) {
      sum_[d] += other.sum_[d];
      sum_sq_[d] += other.sum_sq_[d];
    }
    frames_ += other.frames_;
  }

  std::size_t frames() const { return frames_; }

  NormStats finalize() const {
    if (frames_ == 0) throw DataError("cannot fit normaliser on an empty corpus");
    if (frames_ < 2) throw DataError("normaliser needs at least 2 frames");
    NormStats s;
    const double n = static_cast<double>(frames_);
    for (std::size_t d = 0; d < sum_.size(); ++d) {
      const double mean = sum_[d] / n;
      const double var = sum_sq_[d] / n - mean * mean;
      s.mean.push_back(mean);
      s.variance.push_back(std::max(var, kVarianceFloor));
    }
    return s;
  }

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::size_t frames_ = 0;
};

inline NormStats fit_normalizer(std::span<const FeatureMatrix> features) {
  if (features.empty()) throw DataError("cannot fit normaliser on an empty corpus");
  NormAccumulator acc(features.front().n_mels());
  for (const auto& f : features) acc.add(f);
  return acc.finalize();
}

inline FeatureMatrix normalize(const FeatureMatrix& f, const NormStats& stats) {
  if (stats.mean.size() != f.n_mels() || stats.variance.size() != f.n_mels()) {
    throw UsageError("normaliser has " + std::to_string(stats.mean.size()) + " dims, features have " +
                     std::to_string(f.n_mels()));
  }
  FeatureMatrix out = f;
  for (std::size_t d = 0; d < f.n_mels(); ++d) {
    const double inv_sd = 1.0 / std::sqrt(stats.variance[d]);
    for (double& x : out.values.row(d)) x = (x - stats.mean[d]) * inv_sd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline void write_lmel(std::ostream& os, const FeatureMatrix& f) {
  io::write_magic(os, "LMEL");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(f.n_mels()));
  io::write_u32(os, static_cast<std::uint32_t>(f.n_frames()));
  for (std::size_t t = 0; t < f.n_frames(); ++t) {
    for (std::size_t m = 0; m < f.n_mels(); ++m) io::write_f32(os, static_cast<float>(f.values(m, t)));
  }
}

inline FeatureMatrix read_lmel(std::istream& is) {
  io::expect_magic(is, "LMEL");
  const auto version = io::read_u32(is);
  if (version != 1) throw DataError("unsupported LMEL version " + std::to_string(version));
  const auto n_mels = io::read_u32(is);
  const auto n_frames = io::read_u32(is);
  FeatureMatrix f;
  f.values = Matrix(n_mels, n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t m = 0; m < n_mels; ++m) f.values(m, t) = io::read_f32(is);
  }
  return f;
}

inline void save_lmel(const std::string& path, const FeatureMatrix& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_lmel(os, f);
}

inline FeatureMatrix load_lmel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  auto f = read_lmel(is);
  f.segment_ref = path;
  return f;
}

inline void write_lnrm(std::ostream& os, const NormStats& s) {
  io::write_magic(os, "LNRM");
  io::write_u32(os, static_cast<std::uint32_t>(s.mean.size()));
  for (double m : s.mean) io::write_f32(os, static_cast<float>(m));
  for (double v : s.variance) io::write_f32(os, static_cast<float>(v));
}

inline NormStats read_lnrm(std::istream& is) {
  io::expect_magic(is, "LNRM");
  const auto n = io::read_u32(is);
  NormStats s;
  for (std::uint32_t i = 0; i < n; ++i) s.mean.push_back(io::read_f32(is));
  for (std::uint32_t i = 0; i < n; ++i) s.variance.push_back(io::read_f32(is));
  return s;
}

inline void save_lnrm(const std::string& path, const NormStats& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_lnrm(os, s);
}

inline NormStats load_lnrm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  return read_lnrm(is);
}

}  // namespace segcls::features
