#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "segcls/binary_io.hpp"
#include "segcls/error.hpp"
#include "segcls/layers.hpp"
#include "segcls/modelspec.hpp"
#include "segcls/rng.hpp"

namespace segcls::nn {

/// A named tensor as stored in a checkpoint.
struct NamedTensor {
  std::string name;
  Dims dims;
  std::vector<float> data;
  bool operator==(const NamedTensor&) const = default;
};

/// Sequential network built from a ModelSpec restricted to MLP/CNN layers.
template <typename T>
class Network {
 public:
  Network(const model::ModelSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    const auto trace = model::infer_shapes(spec);
    model::Shape in = spec.input_shape;
    Rng init(derive_seed(seed, 0));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      layers_.push_back(make_layer(spec.layers[i], in, i, init));
      names_.push_back("layer" + std::to_string(i) + "." + layers_.back()->kind());
      in = trace.outputs[i];
    }
    output_activation_ = std::get<model::Output>(spec.layers.back()).activation;
  }

  const model::ModelSpec& spec() const { return spec_; }
  model::Activation output_activation() const { return output_activation_; }
  LossKind loss_kind() const { return loss_for(output_activation_); }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  /// Batch input shape for n examples.
  Dims input_dims(std::size_t n) const {
    Dims d{n};
    d.insert(d.end(), spec_.input_shape.begin(), spec_.input_shape.end());
    return d;
  }

  /// Returns pre-activation logits (N, classes).
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Dims expect = input_dims(x.rank() ? x.dim(0) : 0);
    if (x.shape() != expect) {
      throw UsageError("network input must be " + dims_string(expect) + ", got " + dims_string(x.shape()));
    }
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor<T> scores(const Tensor<T>& x) { return apply_activation(forward(x, Mode::kEval), output_activation_); }

  /// Returns the gradient with respect to the network input.
  Tensor<T> backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<std::string> param_names() {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto* p : layers_[i]->params()) out.push_back(names_[i] + "." + p->name);
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->value.zero_grad();
  }

  /// Restarts every dropout stream; with the same seed, masks repeat.
  void reseed_dropout(std::uint64_t seed) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (auto* d = dynamic_cast<DropoutLayer<T>*>(layers_[i].get())) d->reseed(derive_seed(seed, 1000 + i));
    }
  }

  /// All parameters followed by all buffers, in layer order.
  std::vector<NamedTensor> state() {
    std::vector<NamedTensor> out;
    auto push = [&](const std::string& name, const Tensor<T>& t) {
      NamedTensor nt{name, t.shape(), {}};
      nt.data.reserve(t.size());
      for (auto v : t.data()) nt.data.push_back(static_cast<float>(v));
      out.push_back(std::move(nt));
    };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto* p : layers_[i]->params()) push(names_[i] + "." + p->name, p->value);
      for (auto& [bname, buf] : layers_[i]->buffers()) push(names_[i] + "." + bname, *buf);
    }
    return out;
  }

  void load_state(const std::vector<NamedTensor>& state) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : state) by_name[t.name] = &t;
    auto load = [&](const std::string& name, Tensor<T>& dst) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + name);
      if (it->second->dims != dst.shape()) {
        throw DataError("checkpoint tensor " + name + " has shape " + dims_string(it->second->dims) +
                        ", model expects " + dims_string(dst.shape()));
      }
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(it->second->data[k]);
    };
    std::size_t used = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto* p : layers_[i]->params()) {
        load(names_[i] + "." + p->name, p->value);
        ++used;
      }
      for (auto& [bname, buf] : layers_[i]->buffers()) {
        load(names_[i] + "." + bname, *buf);
        ++used;
      }
    }
    if (used != state.size()) throw DataError("checkpoint has tensors the model does not use");
  }

  /// Rounds every parameter and buffer to float32, so the in-memory model
  /// equals what a checkpoint round trip would give.
  void quantize_to_f32() { load_state(state()); }

 private:
  std::unique_ptr<Layer<T>> make_layer(const model::LayerSpec& spec, const model::Shape& in, std::size_t index,
                                       Rng& init) {
    return std::visit(
        model::Overloaded{
            [&](const model::Conv2D& c) -> std::unique_ptr<Layer<T>> {
              auto l = std::make_unique<Conv2DLayer<T>>(in[0], c);
              he_uniform(l->weight().value, in[0] * c.kernel_h * c.kernel_w, init);
              return l;
            },
            [&](const model::FullyConnected& f) -> std::unique_ptr<Layer<T>> {
              auto l = std::make_unique<LinearLayer<T>>(in[0], f.units);
              he_uniform(l->weight().value, in[0], init);
              return l;
            },
            [&](const model::Output& o) -> std::unique_ptr<Layer<T>> {
              auto l = std::make_unique<LinearLayer<T>>(in[0], o.classes, "output");
              // Glorot-uniform on the classifier.
              const double bound = std::sqrt(6.0 / static_cast<double>(in[0] + o.classes));
              for (auto& w : l->weight().value.data()) w = static_cast<T>(init.uniform(-bound, bound));
              return l;
            },
            [&](const model::BatchNorm&) -> std::unique_ptr<Layer<T>> {
              return std::make_unique<BatchNormLayer<T>>(in[0]);
            },
            [&](const model::ReLU&) -> std::unique_ptr<Layer<T>> { return std::make_unique<ReLULayer<T>>(); },
            [&](const model::MaxPool& m) -> std::unique_ptr<Layer<T>> {
              return std::make_unique<MaxPoolLayer<T>>(m);
            },
            [&](const model::GlobalAvgPool&) -> std::unique_ptr<Layer<T>> {
              return std::make_unique<GlobalAvgPoolLayer<T>>();
            },
            [&](const model::Flatten&) -> std::unique_ptr<Layer<T>> { return std::make_unique<FlattenLayer<T>>(); },
            [&](const model::Dropout& d) -> std::unique_ptr<Layer<T>> {
              return std::make_unique<DropoutLayer<T>>(d.p, derive_seed(seed_, 1000 + index));
            },
            [&](const auto& other) -> std::unique_ptr<Layer<T>> {
              throw UsageError("layer " + std::to_string(index) + " (" + model::describe(other) +
                               ") is analysis-only and cannot be trained");
            },
        },
        spec);
  }

  static void he_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  model::ModelSpec spec_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::string> names_;
  model::Activation output_activation_ = model::Activation::kSigmoid;
};

// ---------------------------------------------------------------------------
// SSCK checkpoint: "SSCK", u32 version, u32 count, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims..., f32 data (LE).

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  io::write_magic(os, "SSCK");
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    io::write_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::write_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) io::write_u32(os, static_cast<std::uint32_t>(d));
    io::write_f32s(os, t.data);
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  io::expect_magic(is, "SSCK");
  const auto version = io::read_u32(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = io::read_u32(is);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(io::read_u32(is));
    if (!is.read(t.name.data(), static_cast<std::streamsize>(t.name.size())))
      throw DataError("truncated checkpoint");
    const auto rank = io::read_u32(is);
    for (std::uint32_t r = 0; r < rank; ++r) t.dims.push_back(io::read_u32(is));
    t.data = io::read_f32s(is, element_count(t.dims));
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_checkpoint(os, tensors);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

/// Relative error with a small absolute floor so that vanishing gradients do
/// not divide by zero.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of every trainable parameter against
/// central differences, in train mode with dropout masks held fixed.
inline GradCheckReport gradient_check(Network<double>& net, const Tensor<double>& x, const Tensor<double>& labels,
                                      double h = 1e-5, std::uint64_t dropout_seed = 12345) {
  const LossKind kind = net.loss_kind();
  auto loss_at = [&]() {
    net.reseed_dropout(dropout_seed);
    const auto r = compute_loss(net.forward(x, Mode::kTrain), labels, kind);
    if (!std::isfinite(r.value)) throw NumericError("non-finite loss in gradient check");
    return r;
  };

  net.zero_grad();
  const auto base = loss_at();
  net.backward(base.grad_logits);

  GradCheckReport report;
  const auto names = net.param_names();
  const auto params = net.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p]->value;
    const std::vector<double> analytic(value.grad().begin(), value.grad().end());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + h;
      const double plus = loss_at().value;
      value[i] = orig - h;
      const double minus = loss_at().value;
      value[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      if (!std::isfinite(analytic[i])) throw NumericError("non-finite analytic gradient in " + names[p]);
      if (report.checked == 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = names[p] + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace segcls::nn
