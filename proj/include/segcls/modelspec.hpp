#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"
#include "segcls/error.hpp"

// Declarative architectures. A ModelSpec is the single source of truth for
// shape inference, parameter counting, and (for MLP/CNN layers) the trainable
// network built in network.hpp.
namespace segcls::model {

using Shape = std::vector<std::size_t>;

enum class Activation { kSigmoid, kSoftmax };

struct Conv2D {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  bool bias = true;
  bool operator==(const Conv2D&) const = default;
};
struct BatchNorm {
  bool operator==(const BatchNorm&) const = default;
};
struct ReLU {
  bool operator==(const ReLU&) const = default;
};
struct MaxPool {
  std::size_t kernel_h = 2, kernel_w = 2;
  std::size_t stride_h = 2, stride_w = 2;
  std::size_t pad_h = 0, pad_w = 0;
  bool operator==(const MaxPool&) const = default;
};
struct GlobalAvgPool {
  bool operator==(const GlobalAvgPool&) const = default;
};
struct Flatten {
  bool operator==(const Flatten&) const = default;
};
struct FullyConnected {
  std::size_t units = 1;
  bool operator==(const FullyConnected&) const = default;
};
struct Dropout {
  double p = 0.5;
  bool operator==(const Dropout&) const = default;
};
/// Stacked unidirectional LSTM; (T, D) -> (units), last time step.
struct LSTM {
  std::size_t units = 1;
  std::size_t layers = 1;
  bool operator==(const LSTM&) const = default;
};
/// Stacked bidirectional GRU; (T, D) -> (T, 2 * units).
struct BiGRU {
  std::size_t units = 1;
  std::size_t layers = 1;
  bool operator==(const BiGRU&) const = default;
};
/// Additive attention pooling over time; (T, D) -> (D).
struct Attention {
  std::size_t context_dim = 1;
  bool operator==(const Attention&) const = default;
};
/// ResNet bottleneck block: 1x1 -> 3x3(stride) -> 1x1, BN after each conv,
/// projection shortcut when stride or width changes. Analysis only.
struct ResidualBottleneck {
  std::size_t mid = 1;
  std::size_t out = 4;
  std::size_t stride = 1;
  bool operator==(const ResidualBottleneck&) const = default;
};
struct Output {
  std::size_t classes = 1;
  Activation activation = Activation::kSigmoid;
  bool operator==(const Output&) const = default;
};

using LayerSpec = std::variant<Conv2D, BatchNorm, ReLU, MaxPool, GlobalAvgPool, Flatten, FullyConnected, Dropout,
                               LSTM, BiGRU, Attention, ResidualBottleneck, Output>;

struct ModelSpec {
  std::string name;
  Shape input_shape;  // (C, H, W) for conv/MLP models, (T, D) for sequence models
  std::vector<LayerSpec> layers;
  bool operator==(const ModelSpec&) const = default;
};

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

inline std::string kind_name(const LayerSpec& layer) {
  return std::visit(Overloaded{
                        [](const Conv2D&) { return "conv2d"; },
                        [](const BatchNorm&) { return "batch_norm"; },
                        [](const ReLU&) { return "relu"; },
                        [](const MaxPool&) { return "max_pool"; },
                        [](const GlobalAvgPool&) { return "global_avg_pool"; },
                        [](const Flatten&) { return "flatten"; },
                        [](const FullyConnected&) { return "fully_connected"; },
                        [](const Dropout&) { return "dropout"; },
                        [](const LSTM&) { return "lstm"; },
                        [](const BiGRU&) { return "bigru"; },
                        [](const Attention&) { return "attention"; },
                        [](const ResidualBottleneck&) { return "residual_bottleneck"; },
                        [](const Output&) { return "output"; },
                    },
                    layer);
}

inline std::string activation_name(Activation a) { return a == Activation::kSigmoid ? "sigmoid" : "softmax"; }

inline std::string describe(const LayerSpec& layer) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const Conv2D& c) {
                   os << "Conv2D(" << c.out_channels << ", " << c.kernel_h << "x" << c.kernel_w << ", stride "
                      << c.stride_h << "x" << c.stride_w << ", pad " << c.pad_h << "x" << c.pad_w
                      << (c.bias ? "" : ", no bias") << ")";
                 },
                 [&](const BatchNorm&) { os << "BatchNorm"; },
                 [&](const ReLU&) { os << "ReLU"; },
                 [&](const MaxPool& m) {
                   os << "MaxPool(" << m.kernel_h << "x" << m.kernel_w << ", stride " << m.stride_h << "x"
                      << m.stride_w;
                   if (m.pad_h || m.pad_w) os << ", pad " << m.pad_h << "x" << m.pad_w;
                   os << ")";
                 },
                 [&](const GlobalAvgPool&) { os << "GlobalAvgPool"; },
                 [&](const Flatten&) { os << "Flatten"; },
                 [&](const FullyConnected& f) { os << "FullyConnected(" << f.units << ")"; },
                 [&](const Dropout& d) { os << "Dropout(" << d.p << ")"; },
                 [&](const LSTM& l) { os << "LSTM(" << l.units << " x " << l.layers << ")"; },
                 [&](const BiGRU& g) { os << "BiGRU(" << g.units << " x " << g.layers << ")"; },
                 [&](const Attention& a) { os << "Attention(" << a.context_dim << ")"; },
                 [&](const ResidualBottleneck& r) {
                   os << "Bottleneck(" << r.mid << "->" << r.out << ", stride " << r.stride << ")";
                 },
                 [&](const Output& o) { os << "Output(" << o.classes << ", " << activation_name(o.activation) << ")"; },
             },
             layer);
  return os.str();
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// ---------------------------------------------------------------------------
// Shape inference

struct ShapeTrace {
  Shape input;
  std::vector<Shape> outputs;  // one per layer
};

namespace detail {

inline std::size_t window_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, std::size_t layer,
                              const char* axis) {
  const auto span = static_cast<std::int64_t>(in) + 2 * static_cast<std::int64_t>(pad) - static_cast<std::int64_t>(k);
  if (span < 0) {
    throw ShapeError("layer " + std::to_string(layer) + ": kernel " + std::to_string(k) + " exceeds padded " + axis +
                     " extent " + std::to_string(in + 2 * pad));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

inline void require_rank(const Shape& in, std::size_t rank, std::size_t layer, const LayerSpec& spec) {
  if (in.size() != rank) {
    throw ShapeError("layer " + std::to_string(layer) + " (" + describe(spec) + ") expects rank-" +
                     std::to_string(rank) + " input, got " + shape_string(in));
  }
}

inline void require_positive(std::size_t v, std::size_t layer, const char* what) {
  if (v == 0) throw ShapeError("layer " + std::to_string(layer) + ": " + what + " must be >= 1");
}

inline void validate_layer(const LayerSpec& layer, std::size_t i) {
  std::visit(Overloaded{
                 [&](const Conv2D& c) {
                   require_positive(c.out_channels, i, "out_channels");
                   require_positive(c.kernel_h, i, "kernel_h");
                   require_positive(c.kernel_w, i, "kernel_w");
                   require_positive(c.stride_h, i, "stride_h");
                   require_positive(c.stride_w, i, "stride_w");
                 },
                 [&](const MaxPool& m) {
                   require_positive(m.kernel_h, i, "kernel_h");
                   require_positive(m.kernel_w, i, "kernel_w");
                   require_positive(m.stride_h, i, "stride_h");
                   require_positive(m.stride_w, i, "stride_w");
                 },
                 [&](const FullyConnected& f) { require_positive(f.units, i, "units"); },
                 [&](const Dropout& d) {
                   if (!(d.p >= 0.0 && d.p < 1.0))
                     throw ShapeError("layer " + std::to_string(i) + ": dropout p must be in [0, 1)");
                 },
                 [&](const LSTM& l) {
                   require_positive(l.units, i, "units");
                   require_positive(l.layers, i, "layers");
                 },
                 [&](const BiGRU& g) {
                   require_positive(g.units, i, "units");
                   require_positive(g.layers, i, "layers");
                 },
                 [&](const Attention& a) { require_positive(a.context_dim, i, "context_dim"); },
                 [&](const ResidualBottleneck& r) {
                   require_positive(r.mid, i, "mid");
                   require_positive(r.out, i, "out");
                   require_positive(r.stride, i, "stride");
                 },
                 [&](const Output& o) { require_positive(o.classes, i, "classes"); },
                 [](const auto&) {},
             },
             layer);
}

}  // namespace detail

/// Output shape of one layer given its input shape.
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in, std::size_t i) {
  using detail::require_rank;
  detail::validate_layer(layer, i);
  return std::visit(
      Overloaded{
          [&](const Conv2D& c) -> Shape {
            require_rank(in, 3, i, layer);
            return {c.out_channels, detail::window_out(in[1], c.kernel_h, c.stride_h, c.pad_h, i, "height"),
                    detail::window_out(in[2], c.kernel_w, c.stride_w, c.pad_w, i, "width")};
          },
          [&](const MaxPool& m) -> Shape {
            require_rank(in, 3, i, layer);
            return {in[0], detail::window_out(in[1], m.kernel_h, m.stride_h, m.pad_h, i, "height"),
                    detail::window_out(in[2], m.kernel_w, m.stride_w, m.pad_w, i, "width")};
          },
          [&](const BatchNorm&) -> Shape {
            if (in.size() != 1 && in.size() != 3)
              throw ShapeError("layer " + std::to_string(i) + " (BatchNorm) expects (C) or (C,H,W), got " +
                               shape_string(in));
            return in;
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const Dropout&) -> Shape { return in; },
          [&](const GlobalAvgPool&) -> Shape {
            require_rank(in, 3, i, layer);
            return {in[0]};
          },
          [&](const Flatten&) -> Shape {
            std::size_t n = 1;
            for (auto d : in) n *= d;
            return {n};
          },
          [&](const FullyConnected& f) -> Shape {
            require_rank(in, 1, i, layer);
            return {f.units};
          },
          [&](const LSTM& l) -> Shape {
            require_rank(in, 2, i, layer);
            return {l.units};
          },
          [&](const BiGRU& g) -> Shape {
            require_rank(in, 2, i, layer);
            return {in[0], 2 * g.units};
          },
          [&](const Attention&) -> Shape {
            require_rank(in, 2, i, layer);
            return {in[1]};
          },
          [&](const ResidualBottleneck& r) -> Shape {
            require_rank(in, 3, i, layer);
            return {r.out, detail::window_out(in[1], 3, r.stride, 1, i, "height"),
                    detail::window_out(in[2], 3, r.stride, 1, i, "width")};
          },
          [&](const Output& o) -> Shape {
            require_rank(in, 1, i, layer);
            return {o.classes};
          },
      },
      layer);
}

inline ShapeTrace infer_shapes(const ModelSpec& model) {
  if (model.input_shape.empty()) throw ShapeError(model.name + ": empty input shape");
  for (auto d : model.input_shape) {
    if (d == 0) throw ShapeError(model.name + ": input dimensions must be >= 1");
  }
  if (model.layers.empty() || !std::holds_alternative<Output>(model.layers.back()))
    throw ShapeError(model.name + ": the last layer must be an Output layer");
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    if (std::holds_alternative<Output>(model.layers[i]))
      throw ShapeError(model.name + ": exactly one Output layer is allowed (found one at layer " +
                       std::to_string(i) + ")");
  }
  ShapeTrace trace;
  trace.input = model.input_shape;
  Shape cur = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    cur = layer_output_shape(model.layers[i], cur, i);
    trace.outputs.push_back(cur);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Parameter counting

struct LayerParams {
  std::size_t index = 0;
  std::string description;
  Shape output_shape;
  std::uint64_t weights = 0;
  std::uint64_t biases = 0;
  std::uint64_t bn_affine = 0;
  std::uint64_t total() const { return weights + biases + bn_affine; }
};

struct ParamReport {
  std::string model_name;
  Shape input_shape;
  std::vector<LayerParams> layers;
  std::uint64_t weights = 0;
  std::uint64_t biases = 0;
  std::uint64_t bn_affine = 0;
  std::uint64_t total = 0;
  std::string note;
};

namespace detail {

inline void count_layer(const LayerSpec& layer, const Shape& in, LayerParams& p) {
  std::visit(Overloaded{
                 [&](const Conv2D& c) {
                   p.weights = c.out_channels * in[0] * c.kernel_h * c.kernel_w;
                   p.biases = c.bias ? c.out_channels : 0;
                 },
                 [&](const BatchNorm&) { p.bn_affine = 2 * in[0]; },
                 [&](const FullyConnected& f) {
                   p.weights = in[0] * f.units;
                   p.biases = f.units;
                 },
                 [&](const Output& o) {
                   p.weights = in[0] * o.classes;
                   p.biases = o.classes;
                 },
                 [&](const LSTM& l) {
                   std::uint64_t d = in[1];
                   const std::uint64_t h = l.units;
                   for (std::size_t k = 0; k < l.layers; ++k) {
                     p.weights += 4 * (d * h + h * h);
                     p.biases += 4 * h;
                     d = h;
                   }
                 },
                 [&](const BiGRU& g) {
                   std::uint64_t d = in[1];
                   const std::uint64_t h = g.units;
                   for (std::size_t k = 0; k < g.layers; ++k) {
                     p.weights += 2 * 3 * (d * h + h * h);
                     p.biases += 2 * 3 * h;
                     d = 2 * h;
                   }
                 },
                 [&](const Attention& a) {
                   // projection W (D x c) + bias c, plus the learned context vector c
                   p.weights = in[1] * a.context_dim + a.context_dim;
                   p.biases = a.context_dim;
                 },
                 [&](const ResidualBottleneck& r) {
                   const std::uint64_t c_in = in[0];
                   p.weights = c_in * r.mid + r.mid * r.mid * 9 + r.mid * r.out;
                   p.bn_affine = 2 * (r.mid + r.mid + r.out);
                   if (r.stride != 1 || c_in != r.out) {
                     p.weights += c_in * r.out;
                     p.bn_affine += 2 * r.out;
                   }
                 },
                 [](const auto&) {},
             },
             layer);
}

}  // namespace detail

inline ParamReport count_params(const ModelSpec& model) {
  const auto trace = infer_shapes(model);
  ParamReport report;
  report.model_name = model.name;
  report.input_shape = model.input_shape;
  Shape in = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    LayerParams p;
    p.index = i;
    p.description = describe(model.layers[i]);
    p.output_shape = trace.outputs[i];
    detail::count_layer(model.layers[i], in, p);
    report.weights += p.weights;
    report.biases += p.biases;
    report.bn_affine += p.bn_affine;
    report.total += p.total();
    report.layers.push_back(std::move(p));
    in = trace.outputs[i];
  }
  return report;
}

/// "56.11M": millions, two decimals, round half up.
inline std::string format_millions(std::uint64_t total) {
  const std::uint64_t hundredths = (total + 5'000) / 10'000;
  std::string frac = std::to_string(hundredths % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return std::to_string(hundredths / 100) + "." + frac + "M";
}

/// The same rounding as a number, for tolerance checks.
inline double millions_rounded(std::uint64_t total) {
  return static_cast<double>((total + 5'000) / 10'000) / 100.0;
}

// ---------------------------------------------------------------------------
// Catalog

inline constexpr std::size_t kAudioSetClasses = 527;
inline constexpr std::size_t kMelBins = 64;
inline constexpr std::size_t kSegmentFrames = 98;
inline constexpr std::size_t kAlexNetFcWidth = 3982;

namespace detail {

inline ModelSpec alexnet(bool with_bn) {
  ModelSpec m;
  m.name = with_bn ? "alexnet-bn" : "alexnet";
  m.input_shape = {1, kMelBins, kSegmentFrames};
  auto conv = [&](std::size_t ch, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw, std::size_t ph,
                  std::size_t pw) {
    m.layers.emplace_back(Conv2D{ch, kh, kw, sh, sw, ph, pw, true});
    if (with_bn) m.layers.emplace_back(BatchNorm{});
    m.layers.emplace_back(ReLU{});
  };
  const MaxPool pool{3, 3, 2, 2, 0, 0};
  // Paddings give a 5 x 7 map before Flatten (256 * 35 = 8960 inputs to FC1).
  conv(64, 11, 7, 2, 1, 0, 0);
  m.layers.emplace_back(pool);
  conv(192, 5, 5, 1, 1, 1, 0);
  m.layers.emplace_back(pool);
  conv(384, 3, 3, 1, 1, 2, 0);
  conv(256, 3, 3, 1, 1, 2, 0);
  conv(256, 3, 3, 1, 1, 2, 1);
  m.layers.emplace_back(pool);
  m.layers.emplace_back(Flatten{});
  for (int i = 0; i < 2; ++i) {
    m.layers.emplace_back(Dropout{0.5});
    m.layers.emplace_back(FullyConnected{kAlexNetFcWidth});
    if (with_bn) m.layers.emplace_back(BatchNorm{});
    m.layers.emplace_back(ReLU{});
  }
  m.layers.emplace_back(Output{kAudioSetClasses, Activation::kSigmoid});
  return m;
}

inline ModelSpec resnet50() {
  ModelSpec m;
  m.name = "resnet50";
  m.input_shape = {1, kMelBins, kSegmentFrames};
  m.layers.emplace_back(Conv2D{64, 7, 7, 1, 1, 3, 3, false});
  m.layers.emplace_back(BatchNorm{});
  m.layers.emplace_back(ReLU{});
  m.layers.emplace_back(MaxPool{3, 3, 2, 2, 1, 1});
  const std::size_t blocks[] = {3, 4, 6, 3};
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t b = 0; b < blocks[stage]; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      m.layers.emplace_back(ResidualBottleneck{widths[stage], 4 * widths[stage], stride});
    }
  }
  m.layers.emplace_back(GlobalAvgPool{});
  m.layers.emplace_back(Output{kAudioSetClasses, Activation::kSigmoid});
  return m;
}

inline ModelSpec mlp() {
  ModelSpec m;
  m.name = "mlp";
  m.input_shape = {1, kMelBins, kSegmentFrames};
  m.layers.emplace_back(Flatten{});
  for (int i = 0; i < 3; ++i) {
    m.layers.emplace_back(FullyConnected{1000});
    m.layers.emplace_back(BatchNorm{});
    m.layers.emplace_back(ReLU{});
    m.layers.emplace_back(Dropout{0.5});
  }
  m.layers.emplace_back(Output{kAudioSetClasses, Activation::kSigmoid});
  return m;
}

inline ModelSpec lstm() {
  ModelSpec m;
  m.name = "lstm";
  m.input_shape = {kSegmentFrames, kMelBins};
  m.layers.emplace_back(LSTM{2048, 3});
  m.layers.emplace_back(Output{kAudioSetClasses, Activation::kSigmoid});
  return m;
}

inline ModelSpec bgru_att() {
  ModelSpec m;
  m.name = "bgru-att";
  m.input_shape = {kSegmentFrames, kMelBins};
  m.layers.emplace_back(BiGRU{2048, 2});
  m.layers.emplace_back(Attention{1024});
  m.layers.emplace_back(Output{kAudioSetClasses, Activation::kSigmoid});
  return m;
}

/// Small GAP-reduced CNN for desk-scale training. The first kernel spans all
/// mel bands, so global pooling only averages over time.
inline ModelSpec toy_gap_cnn() {
  ModelSpec m;
  m.name = "toy-gap-cnn";
  m.input_shape = {1, kMelBins, kSegmentFrames};
  m.layers = {Conv2D{16, kMelBins, 5, 1, 2, 0, 0, true},
              BatchNorm{},
              ReLU{},
              Conv2D{32, 1, 3, 1, 1, 0, 1, true},
              BatchNorm{},
              ReLU{},
              GlobalAvgPool{},
              Dropout{0.5},
              Output{kAudioSetClasses, Activation::kSigmoid}};
  return m;
}

inline ModelSpec toy_mlp() {
  ModelSpec m;
  m.name = "toy-mlp";
  m.input_shape = {1, kMelBins, kSegmentFrames};
  m.layers = {Flatten{}, FullyConnected{32}, BatchNorm{}, ReLU{}, Dropout{0.5},
              FullyConnected{32}, BatchNorm{}, ReLU{}, Output{kAudioSetClasses, Activation::kSigmoid}};
  return m;
}

}  // namespace detail

inline const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names = {"mlp",        "lstm",     "bgru-att",    "alexnet",
                                                 "alexnet-bn", "resnet50", "toy-gap-cnn", "toy-mlp"};
  return names;
}

inline ModelSpec catalog(const std::string& name) {
  if (name == "mlp") return detail::mlp();
  if (name == "lstm") return detail::lstm();
  if (name == "bgru-att") return detail::bgru_att();
  if (name == "alexnet") return detail::alexnet(false);
  if (name == "alexnet-bn") return detail::alexnet(true);
  if (name == "resnet50") return detail::resnet50();
  if (name == "toy-gap-cnn") return detail::toy_gap_cnn();
  if (name == "toy-mlp") return detail::toy_mlp();
  std::string valid;
  for (const auto& n : catalog_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw UsageError("unknown model '" + name + "'; valid names: " + valid);
}

/// Caveat attached to a catalog model whose count is known to differ from
/// the commonly cited figure; empty when there is none.
inline std::string catalog_note(const std::string& name) {
  if (name == "mlp") {
    return "published total is 9.48M, which this layout does not reach: with a flattened 64x98 input "
           "(6272 dims) and BN after each hidden layer the count is 8.81M, and the often-quoted 8.94M "
           "reconstruction corresponds to a 6400-dim input; the input dimensionality is unspecified, "
           "so the computed value is reported as-is";
  }
  return {};
}

/// Re-targets the Output layer to a new class count and activation.
inline ModelSpec with_output(ModelSpec spec, std::size_t classes, Activation activation) {
  if (spec.layers.empty() || !std::holds_alternative<Output>(spec.layers.back()))
    throw ShapeError(spec.name + ": the last layer must be an Output layer");
  spec.layers.back() = Output{classes, activation};
  return spec;
}

// ---------------------------------------------------------------------------
// Complexity-reduction transforms

struct Reduction {
  enum class Kind { kNone, kBneckFinal, kBneckMid, kFcResize, kGlobalAvgPool };
  Kind kind = Kind::kNone;
  std::size_t width = 0;

  std::string name() const {
    switch (kind) {
      case Kind::kNone: return "none";
      case Kind::kBneckFinal: return "bneck-final-" + std::to_string(width);
      case Kind::kBneckMid: return "bneck-mid-" + std::to_string(width);
      case Kind::kFcResize: return "fc-" + std::to_string(width);
      case Kind::kGlobalAvgPool: return "global-avg-pool";
    }
    return "none";
  }

  static Reduction parse(const std::string& s) {
    auto width_after = [&](const std::string& prefix) -> std::optional<std::size_t> {
      if (s.rfind(prefix, 0) != 0) return std::nullopt;
      const auto rest = s.substr(prefix.size());
      if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
      const auto k = std::stoul(rest);
      if (k == 0) return std::nullopt;
      return k;
    };
    if (s == "none") return {};
    if (s == "global-avg-pool") return {Kind::kGlobalAvgPool, 0};
    if (auto k = width_after("bneck-final-")) return {Kind::kBneckFinal, *k};
    if (auto k = width_after("bneck-mid-")) return {Kind::kBneckMid, *k};
    if (auto k = width_after("fc-")) return {Kind::kFcResize, *k};
    throw UsageError("unknown reduction '" + s +
                     "'; expected none, bneck-final-K, bneck-mid-K, fc-K or global-avg-pool");
  }
};

/// The eleven Table-2 style strategies, in table order.
inline std::vector<Reduction> standard_reductions() {
  using K = Reduction::Kind;
  std::vector<Reduction> out{{K::kNone, 0}};
  for (auto kind : {K::kBneckFinal, K::kBneckMid, K::kFcResize}) {
    for (std::size_t k : {64, 256, 1024}) out.push_back({kind, k});
  }
  out.push_back({K::kGlobalAvgPool, 0});
  return out;
}

inline ModelSpec apply_reduction(const ModelSpec& base, const Reduction& r) {
  if (r.kind == Reduction::Kind::kNone) return base;

  // Locate Flatten -> FC -> FC -> Output.
  const auto& L = base.layers;
  std::optional<std::size_t> flatten;
  std::vector<std::size_t> fcs;
  for (std::size_t i = 0; i < L.size(); ++i) {
    if (std::holds_alternative<Flatten>(L[i]) && !flatten) flatten = i;
    if (std::holds_alternative<FullyConnected>(L[i])) fcs.push_back(i);
  }
  if (!flatten || fcs.size() != 2 || fcs[0] < *flatten || L.empty() || !std::holds_alternative<Output>(L.back())) {
    throw UsageError(base.name + ": reductions need a Flatten -> FC -> FC -> Output block");
  }
  const std::size_t output = L.size() - 1;
  bool block_has_bn = false;
  for (std::size_t i = *flatten; i < output; ++i) block_has_bn |= std::holds_alternative<BatchNorm>(L[i]);

  auto bottleneck = [&](std::size_t k) {
    std::vector<LayerSpec> b{FullyConnected{k}};
    if (block_has_bn) b.emplace_back(BatchNorm{});
    b.emplace_back(ReLU{});
    return b;
  };

  ModelSpec out = base;
  out.name = base.name + "+" + r.name();
  auto& layers = out.layers;
  switch (r.kind) {
    case Reduction::Kind::kFcResize:
      for (auto i : fcs) layers[i] = FullyConnected{r.width};
      break;
    case Reduction::Kind::kBneckFinal: {
      const auto b = bottleneck(r.width);
      layers.insert(layers.begin() + static_cast<std::ptrdiff_t>(output), b.begin(), b.end());
      break;
    }
    case Reduction::Kind::kBneckMid: {
      // After FC1's normalisation/activation, before any dropout feeding FC2.
      std::size_t pos = fcs[0] + 1;
      while (pos < fcs[1] && !std::holds_alternative<Dropout>(L[pos])) ++pos;
      const auto b = bottleneck(r.width);
      layers.insert(layers.begin() + static_cast<std::ptrdiff_t>(pos), b.begin(), b.end());
      break;
    }
    case Reduction::Kind::kGlobalAvgPool:
      layers.erase(layers.begin() + static_cast<std::ptrdiff_t>(*flatten),
                   layers.begin() + static_cast<std::ptrdiff_t>(output));
      layers.insert(layers.begin() + static_cast<std::ptrdiff_t>(*flatten), GlobalAvgPool{});
      break;
    case Reduction::Kind::kNone:
      break;
  }
  infer_shapes(out);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const LayerSpec& layer) {
  using nlohmann::json;
  json j;
  j["type"] = kind_name(layer);
  std::visit(Overloaded{
                 [&](const Conv2D& c) {
                   j["out_channels"] = c.out_channels;
                   j["kernel"] = {c.kernel_h, c.kernel_w};
                   j["stride"] = {c.stride_h, c.stride_w};
                   j["padding"] = {c.pad_h, c.pad_w};
                   j["bias"] = c.bias;
                 },
                 [&](const MaxPool& m) {
                   j["kernel"] = {m.kernel_h, m.kernel_w};
                   j["stride"] = {m.stride_h, m.stride_w};
                   j["padding"] = {m.pad_h, m.pad_w};
                 },
                 [&](const FullyConnected& f) { j["units"] = f.units; },
                 [&](const Dropout& d) { j["p"] = d.p; },
                 [&](const LSTM& l) {
                   j["units"] = l.units;
                   j["layers"] = l.layers;
                 },
                 [&](const BiGRU& g) {
                   j["units"] = g.units;
                   j["layers"] = g.layers;
                 },
                 [&](const Attention& a) { j["context_dim"] = a.context_dim; },
                 [&](const ResidualBottleneck& r) {
                   j["mid"] = r.mid;
                   j["out"] = r.out;
                   j["stride"] = r.stride;
                 },
                 [&](const Output& o) {
                   j["classes"] = o.classes;
                   j["activation"] = activation_name(o.activation);
                 },
                 [](const auto&) {},
             },
             layer);
  return j;
}

inline nlohmann::json to_json(const ModelSpec& m) {
  nlohmann::json j;
  j["name"] = m.name;
  j["input_shape"] = m.input_shape;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) j["layers"].push_back(to_json(l));
  return j;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> pair_of(const nlohmann::json& j, const char* key, std::size_t dflt) {
  if (!j.contains(key)) return {dflt, dflt};
  const auto& v = j.at(key);
  if (v.is_number_unsigned()) return {v.get<std::size_t>(), v.get<std::size_t>()};
  if (v.is_array() && v.size() == 2) return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  throw UsageError(std::string("field '") + key + "' must be a non-negative integer or a pair");
}

}  // namespace detail

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "conv2d") {
      Conv2D c;
      c.out_channels = j.at("out_channels").get<std::size_t>();
      std::tie(c.kernel_h, c.kernel_w) = detail::pair_of(j, "kernel", 1);
      std::tie(c.stride_h, c.stride_w) = detail::pair_of(j, "stride", 1);
      std::tie(c.pad_h, c.pad_w) = detail::pair_of(j, "padding", 0);
      c.bias = j.value("bias", true);
      return c;
    }
    if (type == "batch_norm") return BatchNorm{};
    if (type == "relu") return ReLU{};
    if (type == "max_pool") {
      MaxPool m;
      std::tie(m.kernel_h, m.kernel_w) = detail::pair_of(j, "kernel", 2);
      std::tie(m.stride_h, m.stride_w) = j.contains("stride") ? detail::pair_of(j, "stride", 1)
                                                              : std::pair{m.kernel_h, m.kernel_w};
      std::tie(m.pad_h, m.pad_w) = detail::pair_of(j, "padding", 0);
      return m;
    }
    if (type == "global_avg_pool") return GlobalAvgPool{};
    if (type == "flatten") return Flatten{};
    if (type == "fully_connected") return FullyConnected{j.at("units").get<std::size_t>()};
    if (type == "dropout") return Dropout{j.value("p", 0.5)};
    if (type == "lstm") return LSTM{j.at("units").get<std::size_t>(), j.value("layers", std::size_t{1})};
    if (type == "bigru") return BiGRU{j.at("units").get<std::size_t>(), j.value("layers", std::size_t{1})};
    if (type == "attention") return Attention{j.at("context_dim").get<std::size_t>()};
    if (type == "residual_bottleneck") {
      return ResidualBottleneck{j.at("mid").get<std::size_t>(), j.at("out").get<std::size_t>(),
                                j.value("stride", std::size_t{1})};
    }
    if (type == "output") {
      const auto act = j.value("activation", std::string("sigmoid"));
      if (act != "sigmoid" && act != "softmax") throw UsageError("output activation must be sigmoid or softmax");
      return Output{j.at("classes").get<std::size_t>(),
                    act == "sigmoid" ? Activation::kSigmoid : Activation::kSoftmax};
    }
    throw UsageError("unknown layer type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed layer: ") + e.what());
  }
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
  try {
    ModelSpec m;
    m.name = j.value("name", std::string("custom"));
    m.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) m.layers.push_back(layer_from_json(l));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed model spec: ") + e.what());
  }
}

inline nlohmann::json to_json(const ParamReport& r) {
  nlohmann::json j;
  j["model"] = r.model_name;
  j["input_shape"] = r.input_shape;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : r.layers) {
    j["layers"].push_back({{"index", l.index},
                           {"layer", l.description},
                           {"output_shape", l.output_shape},
                           {"weights", l.weights},
                           {"biases", l.biases},
                           {"bn_affine", l.bn_affine},
                           {"total", l.total()}});
  }
  j["weights"] = r.weights;
  j["biases"] = r.biases;
  j["bn_affine"] = r.bn_affine;
  j["total"] = r.total;
  j["total_millions"] = format_millions(r.total);
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline std::string to_text(const ParamReport& r) {
  std::ostringstream os;
  os << "model: " << r.model_name << "  input " << shape_string(r.input_shape) << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%4s  %-44s %-18s %14s\n", "#", "layer", "output", "params");
  os << line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%4zu  %-44s %-18s %14llu\n", l.index, l.description.c_str(),
                  shape_string(l.output_shape).c_str(), static_cast<unsigned long long>(l.total()));
    os << line;
  }
  os << "weights " << r.weights << ", biases " << r.biases << ", bn affine " << r.bn_affine << "\n";
  os << "total " << r.total << " (" << format_millions(r.total) << ")\n";
  if (!r.note.empty()) os << "note: " << r.note << "\n";
  return os.str();
}

}  // namespace segcls::model
