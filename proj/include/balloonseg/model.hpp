#pragma once

// U-Net style segmenter: a VGG-16 convolutional encoder (five blocks of
// 2,2,3,3,3 same-padded 3x3 convs, each followed by 2x2 max pooling) and a
// decoder of five upsampling steps. Each step is
//   2x2/2 transposed conv -> concat(encoder skip) -> 3x3 conv -> ReLU -> batch norm
// and the head is a 1x1 conv to one channel followed by a sigmoid.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "balloonseg/ops.hpp"
#include "balloonseg/tensor.hpp"
#include "balloonseg/weights_io.hpp"

namespace bseg {

/// Raised when a weight file does not fit the network; names the tensor.
class ModelMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::size_t, 5> kVggConvsPerBlock{2, 2, 3, 3, 3};
inline constexpr std::array<std::size_t, 5> kVggWidthMultipliers{1, 2, 4, 8, 8};

struct ModelConfig {
  std::size_t input_h = 128;
  std::size_t input_w = 192;
  std::size_t base_width = 8;
  // All zero means base_width * {1,2,4,8,8}.
  std::array<std::size_t, 5> block_widths{};
  double l2_lambda = 0.001;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::uint64_t init_seed = 0;

  std::array<std::size_t, 5> widths() const {
    if (block_widths != std::array<std::size_t, 5>{}) return block_widths;
    std::array<std::size_t, 5> w{};
    for (std::size_t i = 0; i < 5; ++i) w[i] = base_width * kVggWidthMultipliers[i];
    return w;
  }

  void validate() const {
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
      throw ShapeError("model input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                       " must be a positive multiple of 32 in both dimensions");
    }
    for (auto w : widths()) {
      if (w == 0) throw std::invalid_argument("block widths must be positive");
    }
    if (l2_lambda < 0) throw std::invalid_argument("l2_lambda must be non-negative");
  }
};

enum class LoadMode { Strict, EncoderOnly };

template <typename T>
class Network {
 public:
  struct DecoderStep {
    LayerParams<T> up;
    LayerParams<T> conv;
    LayerParams<T> bn;  // weights = gamma, bias = beta
    BatchNormState<T> bn_state;
  };

  /// Activations retained by a training forward pass for backward.
  struct Tape {
    struct EncoderBlock {
      std::vector<Tensor<T>> conv_inputs;
      std::vector<Tensor<T>> conv_outputs;  // post-ReLU
      Shape pool_input;
      std::vector<std::size_t> pool_argmax;
    };
    struct DecoderStepTape {
      Tensor<T> up_input;
      Tensor<T> merged;  // concat(upsampled, skip)
      Shape up_shape, skip_shape;
      Tensor<T> activated;  // post-ReLU, pre batch norm
      BatchNormCache<T> bn;
    };
    std::array<EncoderBlock, 5> encoder;
    std::array<Shape, 5> skip_shapes;
    std::array<DecoderStepTape, 5> decoder;
    Tensor<T> head_input;
    Tensor<T> output;
  };

  explicit Network(ModelConfig config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.init_seed);
    const auto widths = config_.widths();

    std::size_t c_in = 3;
    for (std::size_t b = 0; b < 5; ++b) {
      for (std::size_t j = 0; j < kVggConvsPerBlock[b]; ++j) {
        encoder_[b].push_back(make_conv("encoder.block" + std::to_string(b + 1) + "_conv" + std::to_string(j + 1),
                                        c_in, widths[b], 3, rng));
        c_in = widths[b];
      }
    }
    for (std::size_t i = 0; i < 5; ++i) {
      const std::size_t level = 4 - i;  // encoder block this step merges with
      const std::size_t c_out = widths[level];
      const std::string prefix = "decoder.up" + std::to_string(i + 1);
      DecoderStep step;
      step.up = make_transpose(prefix + "_transpose", c_in, c_out, rng);
      step.conv = make_conv(prefix + "_conv", 2 * c_out, c_out, 3, rng);
      step.conv.regularized = true;
      step.bn.name = prefix + "_bn";
      step.bn.weights = Tensor<T>(Shape{1, c_out, 1, 1}, T(1));
      step.bn.bias = Tensor<T>(Shape{1, c_out, 1, 1}, T(0));
      step.bn_state = BatchNormState<T>(c_out);
      step.bn_state.momentum = static_cast<T>(config_.bn_momentum);
      step.bn_state.eps = static_cast<T>(config_.bn_eps);
      decoder_[i] = std::move(step);
      c_in = c_out;
    }
    head_ = make_conv("head.conv", c_in, 1, 1, rng, 1.0);

    std::set<std::string> names;
    for (const auto* p : parameters_const()) {
      if (!names.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
    }
  }

  const ModelConfig& config() const { return config_; }

  /// Training-capable forward pass. Train mode updates batch-norm running
  /// statistics; when `tape` is given, activations are kept for backward.
  Tensor<T> forward(const Tensor<T>& image, Mode mode, Tape* tape = nullptr) { return run(*this, image, mode, tape); }

  /// Eval-mode inference; never mutates the network.
  Tensor<T> predict(const Tensor<T>& image) const { return run(*this, image, Mode::Eval, nullptr); }

  /// Accumulates parameter gradients from dL/d(prediction); returns dL/d(image).
  Tensor<T> backward(Tape& tape, const Tensor<T>& d_output) {
    Tensor<T> d = sigmoid_backward(tape.output, d_output);
    d = conv2d_backward(tape.head_input, head_, d);

    std::array<Tensor<T>, 5> d_skip;
    for (std::size_t i = 5; i-- > 0;) {
      auto& st = tape.decoder[i];
      auto& step = decoder_[i];
      d = batchnorm2d_backward(st.bn, step.bn, d);
      d = relu_backward(st.activated, d);
      d = conv2d_backward(st.merged, step.conv, d);
      auto [d_up, d_sk] = concat_channels_backward(st.up_shape, st.skip_shape, d);
      d_skip[4 - i] = std::move(d_sk);
      d = conv2d_transpose_backward(st.up_input, step.up, d_up);
    }
    for (std::size_t b = 5; b-- > 0;) {
      auto& blk = tape.encoder[b];
      d = maxpool2_backward(blk.pool_input, blk.pool_argmax, d);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += d_skip[b][k];
      for (std::size_t j = encoder_[b].size(); j-- > 0;) {
        d = relu_backward(blk.conv_outputs[j], d);
        d = conv2d_backward(blk.conv_inputs[j], encoder_[b][j], d);
      }
    }
    return d;
  }

  /// lambda * sum of squared kernel weights over regularized layers.
  double l2_penalty() const {
    double s = 0.0;
    for (const auto* p : parameters_const()) {
      if (!p->regularized) continue;
      for (T v : p->weights.data()) s += static_cast<double>(v) * static_cast<double>(v);
    }
    return config_.l2_lambda * s;
  }

  /// Adds 2 * lambda * w to the kernel gradients of regularized layers.
  void add_l2_gradient() {
    const T scale = static_cast<T>(2.0 * config_.l2_lambda);
    for (auto* p : parameters()) {
      if (!p->regularized) continue;
      auto& g = p->weights.grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * p->weights[k];
    }
  }

  void zero_grad() {
    for (auto* p : parameters()) {
      p->weights.grad();
      p->weights.zero_grad();
      if (p->bias) {
        p->bias->grad();
        p->bias->zero_grad();
      }
    }
  }

  /// Registry of every trainable parameter group, in a fixed order.
  std::vector<LayerParams<T>*> parameters() {
    std::vector<LayerParams<T>*> out;
    for (auto& blk : encoder_) {
      for (auto& c : blk) out.push_back(&c);
    }
    for (auto& s : decoder_) {
      out.push_back(&s.up);
      out.push_back(&s.conv);
      out.push_back(&s.bn);
    }
    out.push_back(&head_);
    return out;
  }

  std::vector<const LayerParams<T>*> parameters_const() const {
    auto* self = const_cast<Network*>(this);
    std::vector<const LayerParams<T>*> out;
    for (auto* p : self->parameters()) out.push_back(p);
    return out;
  }

  /// Weights plus biases whose names start with `prefix`.
  std::size_t parameter_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto* p : parameters_const()) {
      if (p->name.rfind(prefix, 0) != 0) continue;
      n += p->weights.size() + (p->bias ? p->bias->size() : 0);
    }
    return n;
  }

  const std::array<std::vector<LayerParams<T>>, 5>& encoder() const { return encoder_; }
  const std::array<DecoderStep, 5>& decoder() const { return decoder_; }
  const LayerParams<T>& head() const { return head_; }

  // --- serialization -------------------------------------------------------

  std::vector<NamedTensor> export_tensors() const {
    std::vector<NamedTensor> out;
    for (const auto& e : const_cast<Network*>(this)->entries()) {
      NamedTensor t{e.name, e.dims, std::vector<float>(e.tensor->size())};
      for (std::size_t k = 0; k < e.tensor->size(); ++k) t.values[k] = static_cast<float>((*e.tensor)[k]);
      out.push_back(std::move(t));
    }
    return out;
  }

  /// Validates every tensor before assigning any, so a failed load leaves the
  /// network untouched.
  void import_tensors(const std::vector<NamedTensor>& tensors, LoadMode mode = LoadMode::Strict) {
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) {
      if (!by_name.emplace(t.name, &t).second) throw ModelMismatchError("tensor '" + t.name + "' appears twice");
    }
    auto targets = entries();
    std::vector<std::pair<Entry*, const NamedTensor*>> plan;
    for (auto& e : targets) {
      const bool wanted = mode == LoadMode::Strict || e.name.rfind("encoder.", 0) == 0;
      if (!wanted) continue;
      auto it = by_name.find(e.name);
      if (it == by_name.end()) throw ModelMismatchError("tensor '" + e.name + "' missing from weight file");
      if (it->second->dims != e.dims) {
        throw ModelMismatchError("tensor '" + e.name + "' has dims " + dims_str(it->second->dims) + ", model expects " +
                                 dims_str(e.dims));
      }
      plan.emplace_back(&e, it->second);
      by_name.erase(it);
    }
    if (mode == LoadMode::Strict && !by_name.empty()) {
      throw ModelMismatchError("tensor '" + by_name.begin()->first + "' is not part of the model");
    }
    for (auto& [e, t] : plan) {
      for (std::size_t k = 0; k < t->values.size(); ++k) (*e->tensor)[k] = static_cast<T>(t->values[k]);
    }
  }

  void save_weights(const std::filesystem::path& path) const { write_weight_file(path, export_tensors()); }

  void load_weights(const std::filesystem::path& path, LoadMode mode = LoadMode::Strict) {
    import_tensors(read_weight_file(path), mode);
  }

 private:
  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    Tensor<T>* tensor;
  };

  static std::string dims_str(const std::vector<std::uint32_t>& d) {
    std::string s = "[";
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + "]";
  }

  static std::vector<std::uint32_t> dims4(const Shape& s) {
    return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
            static_cast<std::uint32_t>(s.w)};
  }
  static std::vector<std::uint32_t> dims1(const Tensor<T>& t) { return {static_cast<std::uint32_t>(t.size())}; }

  std::vector<Entry> entries() {
    std::vector<Entry> out;
    auto add_conv = [&](LayerParams<T>& p) {
      out.push_back({p.name + ".weight", dims4(p.weights.shape()), &p.weights});
      if (p.bias) out.push_back({p.name + ".bias", dims1(*p.bias), &*p.bias});
    };
    for (auto& blk : encoder_) {
      for (auto& c : blk) add_conv(c);
    }
    for (auto& s : decoder_) {
      add_conv(s.up);
      add_conv(s.conv);
      out.push_back({s.bn.name + ".gamma", dims1(s.bn.weights), &s.bn.weights});
      out.push_back({s.bn.name + ".beta", dims1(*s.bn.bias), &*s.bn.bias});
      out.push_back({s.bn.name + ".running_mean", dims1(s.bn_state.running_mean), &s.bn_state.running_mean});
      out.push_back({s.bn.name + ".running_var", dims1(s.bn_state.running_var), &s.bn_state.running_var});
    }
    add_conv(head_);
    return out;
  }

  // He-normal kernels, zero biases.
  static LayerParams<T> make_conv(std::string name, std::size_t c_in, std::size_t c_out, std::size_t k,
                                  std::mt19937_64& rng, double gain = 2.0) {
    const double stddev = std::sqrt(gain / static_cast<double>(c_in * k * k));
    LayerParams<T> p;
    p.name = std::move(name);
    p.weights = Tensor<T>::randn(Shape{c_out, c_in, k, k}, rng, static_cast<T>(stddev));
    p.bias = Tensor<T>(Shape{1, c_out, 1, 1}, T(0));
    return p;
  }

  static LayerParams<T> make_transpose(std::string name, std::size_t c_in, std::size_t c_out, std::mt19937_64& rng) {
    // Each output pixel receives exactly c_in contributions.
    const double stddev = std::sqrt(2.0 / static_cast<double>(c_in));
    LayerParams<T> p;
    p.name = std::move(name);
    p.weights = Tensor<T>::randn(Shape{c_in, c_out, 2, 2}, rng, static_cast<T>(stddev));
    p.bias = Tensor<T>(Shape{1, c_out, 1, 1}, T(0));
    return p;
  }

  template <typename Self>
  static Tensor<T> run(Self& self, const Tensor<T>& image, Mode mode, Tape* tape) {
    const Shape& s = image.shape();
    if (s.c != 3) throw ShapeError("network input must have 3 channels, got " + s.str());
    if (s.h == 0 || s.w == 0 || s.h % 32 != 0 || s.w % 32 != 0) {
      throw ShapeError("network input " + s.str() + " must have height and width divisible by 32");
    }

    if (tape) *tape = Tape{};
    std::array<Tensor<T>, 5> skips;
    Tensor<T> x = image;
    for (std::size_t b = 0; b < 5; ++b) {
      for (const auto& conv : self.encoder_[b]) {
        Tensor<T> y = relu(conv2d(x, conv));
        if (tape) {
          tape->encoder[b].conv_inputs.push_back(std::move(x));
          tape->encoder[b].conv_outputs.push_back(y);
        }
        x = std::move(y);
      }
      auto pooled = maxpool2(x);
      if (tape) {
        tape->encoder[b].pool_input = x.shape();
        tape->encoder[b].pool_argmax = std::move(pooled.argmax);
        tape->skip_shapes[b] = x.shape();
      }
      skips[b] = std::move(x);
      x = std::move(pooled.out);
    }

    for (std::size_t i = 0; i < 5; ++i) {
      const auto& step = self.decoder_[i];
      Tensor<T> up = conv2d_transpose(x, step.up);
      Tensor<T> merged = concat_channels(up, skips[4 - i]);
      Tensor<T> activated = relu(conv2d(merged, step.conv));
      BatchNormState<T>* running = nullptr;
      if constexpr (!std::is_const_v<Self>) {
        if (mode == Mode::Train) running = &self.decoder_[i].bn_state;
      }
      BatchNormCache<T> cache;
      Tensor<T> y = batchnorm2d(activated, step.bn, step.bn_state, mode, tape ? &cache : nullptr, running);
      if (tape) {
        auto& st = tape->decoder[i];
        st.up_input = std::move(x);
        st.up_shape = up.shape();
        st.skip_shape = skips[4 - i].shape();
        st.merged = std::move(merged);
        st.activated = std::move(activated);
        st.bn = std::move(cache);
      }
      x = std::move(y);
    }

    Tensor<T> out = sigmoid(conv2d(x, self.head_));
    if (tape) {
      tape->head_input = std::move(x);
      tape->output = out;
    }
    return out;
  }

  ModelConfig config_;
  std::array<std::vector<LayerParams<T>>, 5> encoder_;
  std::array<DecoderStep, 5> decoder_;
  LayerParams<T> head_;
};

}  // namespace bseg
