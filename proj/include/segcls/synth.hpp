#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "segcls/error.hpp"
#include "segcls/manifest.hpp"
#include "segcls/rng.hpp"
#include "segcls/wav.hpp"

// Desk-scale stand-in corpus. Class c is a tone plus a band of random-phase
// partials around a log-spaced centre frequency; multi-label clips mix
// several classes over a faint white-noise floor.
namespace segcls::synth {

struct Options {
  std::size_t n_clips = 60;
  std::size_t n_classes = 8;
  std::uint64_t seed = 0;
  double clip_seconds = 10.0;
  int sample_rate = 16000;
  bool single_label = false;
  double extra_label_prob = 0.35;
  std::string id_prefix = "synth";
};

inline double class_center_hz(std::size_t c, std::size_t n_classes) {
  const double lo = 300.0, hi = 6000.0;
  if (n_classes == 1) return lo;
  return lo * std::pow(hi / lo, static_cast<double>(c) / static_cast<double>(n_classes - 1));
}

/// Adds a unit-amplitude sinusoid of frequency hz to `out`, scaled by gain.
inline void add_partial(std::vector<double>& out, double hz, double phase, double gain, int rate) {
  const double w = 2.0 * std::numbers::pi * hz / rate;
  const std::complex<double> step(std::cos(w), std::sin(w));
  std::complex<double> z(std::cos(phase), std::sin(phase));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += gain * z.imag();
    z *= step;
    if ((i & 1023) == 1023) z /= std::abs(z);
  }
}

inline std::vector<double> render_clip(const std::vector<int>& labels, std::size_t n_classes, const Options& opt,
                                       Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(opt.clip_seconds * opt.sample_rate));
  std::vector<double> x(n, 0.0);
  for (int label : labels) {
    const double center = class_center_hz(static_cast<std::size_t>(label), n_classes);
    const double gain = 0.12 * rng.uniform(0.6, 1.0);
    add_partial(x, center, rng.uniform(0.0, 2.0 * std::numbers::pi), gain, opt.sample_rate);
    constexpr int kPartials = 12;
    for (int p = 0; p < kPartials; ++p) {
      const double f = center * std::pow(1.15, rng.uniform(-1.0, 1.0));
      add_partial(x, f, rng.uniform(0.0, 2.0 * std::numbers::pi), gain * 0.35, opt.sample_rate);
    }
  }
  for (double& v : x) v += 0.004 * rng.normal();
  return x;
}

/// Writes wav/<id>.wav, manifest.csv and classes.csv under out_dir and
/// returns the manifest. Clip i always carries class i mod n_classes.
inline manifest::Manifest generate(const Options& opt, const std::filesystem::path& out_dir) {
  if (opt.n_classes < 2) throw UsageError("synth needs at least 2 classes");
  if (opt.n_clips == 0) throw UsageError("synth needs at least 1 clip");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "wav");

  manifest::Manifest m;
  m.base_dir = out_dir;
  for (std::size_t c = 0; c < opt.n_classes; ++c) {
    const auto hz = static_cast<long>(std::lround(class_center_hz(c, opt.n_classes)));
    m.classes.push_back({static_cast<int>(c), "/synth/c" + std::to_string(c),
                         "class " + std::to_string(c) + " (" + std::to_string(hz) + " Hz)"});
  }
  for (std::size_t i = 0; i < opt.n_clips; ++i) {
    Rng rng(derive_seed(opt.seed, i));
    std::vector<int> labels{static_cast<int>(i % opt.n_classes)};
    if (!opt.single_label) {
      while (labels.size() < opt.n_classes && rng.uniform() < opt.extra_label_prob) {
        const auto extra = static_cast<int>(rng.below(opt.n_classes));
        if (std::find(labels.begin(), labels.end(), extra) == labels.end()) labels.push_back(extra);
      }
      std::sort(labels.begin(), labels.end());
    }
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04zu", opt.id_prefix.c_str(), i);
    const std::string rel = std::string("wav/") + id + ".wav";
    wav::write_pcm16((out_dir / rel).string(), {render_clip(labels, opt.n_classes, opt, rng), opt.sample_rate});
    m.rows.push_back({id, rel, 0.0, opt.clip_seconds, labels});
  }
  manifest::save(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace segcls::synth
