#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "segcls/binary_io.hpp"
#include "segcls/error.hpp"

// Minimal RIFF/WAVE reader and writer (PCM16 and IEEE float32), mono downmix,
// and a windowed-sinc resampler.
namespace segcls::wav {

struct Audio {
  std::vector<double> samples;  // mono
  int sample_rate = 0;
};

namespace detail {

inline std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw DataError("unexpected end of WAV file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

}  // namespace detail

inline Audio read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  io::expect_magic(is, "RIFF");
  io::read_u32(is);
  io::expect_magic(is, "WAVE");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    char id[4];
    if (!is.read(id, 4)) throw DataError(path + ": no data chunk");
    const std::uint32_t size = io::read_u32(is);
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      format = detail::read_u16(is);
      channels = detail::read_u16(is);
      rate = io::read_u32(is);
      io::read_u32(is);  // byte rate
      detail::read_u16(is);  // block align
      bits = detail::read_u16(is);
      if (size > 16) is.ignore(size - 16);
      // WAVE_FORMAT_EXTENSIBLE carries the real format in the sub-format GUID;
      // treat it by bit depth.
      if (format == 0xFFFE) format = bits == 32 ? 3 : 1;
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw DataError(path + ": data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw DataError(path + ": bad fmt chunk");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw DataError(path + ": only PCM16 and float32 WAV are supported");
      const std::size_t bytes_per = bits / 8;
      const std::size_t frames = size / (bytes_per * channels);
      Audio a;
      a.sample_rate = static_cast<int>(rate);
      a.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          if (pcm16) {
            acc += static_cast<std::int16_t>(detail::read_u16(is)) / 32768.0;
          } else {
            acc += io::read_f32(is);
          }
        }
        a.samples[i] = acc / channels;
      }
      return a;
    } else {
      is.ignore(size + (size & 1));
    }
  }
}

/// Writes mono PCM16 with round-to-nearest and clipping.
inline void write_pcm16(const std::string& path, const Audio& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  const auto n = static_cast<std::uint32_t>(a.samples.size());
  io::write_magic(os, "RIFF");
  io::write_u32(os, 36 + n * 2);
  io::write_magic(os, "WAVE");
  io::write_magic(os, "fmt ");
  io::write_u32(os, 16);
  detail::write_u16(os, 1);
  detail::write_u16(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(a.sample_rate));
  io::write_u32(os, static_cast<std::uint32_t>(a.sample_rate) * 2);
  detail::write_u16(os, 2);
  detail::write_u16(os, 16);
  io::write_magic(os, "data");
  io::write_u32(os, n * 2);
  for (double x : a.samples) {
    const double clipped = std::clamp(x, -1.0, 32767.0 / 32768.0);
    detail::write_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
}

/// Hann-windowed sinc resampler; the cutoff tracks the lower of the two
/// Nyquist rates.
inline std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate, int half_taps = 16) {
  if (from_rate <= 0 || to_rate <= 0) throw UsageError("sample rates must be positive");
  if (from_rate == to_rate) return x;
  const double ratio = static_cast<double>(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio);
  const double support = half_taps / cutoff;
  const auto n_out = static_cast<std::size_t>(std::floor(x.size() * ratio));
  std::vector<double> y(n_out);
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = i / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - support));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + support));
    double acc = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(lo, 0); j <= std::min(hi, n_in - 1); ++j) {
      const double d = t - static_cast<double>(j);
      const double arg = d * cutoff;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * d / support);
      acc += x[static_cast<std::size_t>(j)] * cutoff * sinc * win;
    }
    y[i] = acc;
  }
  return y;
}

/// Reads a WAV file and converts it to mono at target_rate.
inline Audio load_mono(const std::string& path, int target_rate) {
  Audio a = read(path);
  if (a.sample_rate != target_rate) {
    a.samples = resample(a.samples, a.sample_rate, target_rate);
    a.sample_rate = target_rate;
  }
  return a;
}

}  // namespace segcls::wav
