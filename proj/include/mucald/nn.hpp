#pragma once
// Layers with explicit forward/backward passes.
//
// Each layer caches what it needs from its most recent forward call; exactly
// one forward/backward pair may be in flight per instance. Parameter
// gradients accumulate until the optimizer consumes them.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

using Rng = std::mt19937_64;

// A named handle onto a trainable tensor (value + grad).
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct LayerParams {
  Tensor weights;
  Tensor bias;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = default;
  Layer& operator=(const Layer&) = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<ParamRef> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// y = x * W + b, x: [batch, in], W: [in, out].
class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng);
  Linear(std::string name, LayerParams params);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> parameters() override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Linear>(*this);
  }

  LayerParams& params() { return p_; }
  std::size_t in_features() const { return p_.weights.dim(0); }
  std::size_t out_features() const { return p_.weights.dim(1); }

 private:
  LayerParams p_;
  Tensor input_;
  bool has_input_ = false;
};

// Stride-1 cross-correlation with symmetric zero padding kernel/2, so the
// spatial extent is preserved. W: [out, in, k, k].
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, Rng& rng);
  Conv2d(std::string name, LayerParams params);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> parameters() override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2d>(*this);
  }

  LayerParams& params() { return p_; }
  std::size_t in_channels() const { return p_.weights.dim(1); }
  std::size_t out_channels() const { return p_.weights.dim(0); }
  std::size_t kernel() const { return p_.weights.dim(2); }

 private:
  LayerParams p_;
  Tensor input_;
  bool has_input_ = false;
};

enum class Activation { kRelu, kSigmoid, kTanh, kSoftmaxChannel };

// Elementwise or channel-normalized activation. Softmax normalizes over axis 1
// of a rank-2 [batch, C] or rank-4 [batch, C, H, W] tensor.
class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::string name, Activation kind)
      : Layer(std::move(name)), kind_(kind) {}

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ActivationLayer>(*this);
  }

 private:
  Activation kind_;
  Tensor input_;
  Tensor output_;
  bool has_cache_ = false;
};

// Stateless functional form of the activations.
Tensor activation(const Tensor& x, Activation kind);

// 2x2 average pooling, stride 2. Requires even H and W.
class AvgPool2 final : public Layer {
 public:
  explicit AvgPool2(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<AvgPool2>(*this);
  }

 private:
  Shape in_shape_;
};

// Nearest-neighbour 2x upsampling.
class Upsample2 final : public Layer {
 public:
  explicit Upsample2(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Upsample2>(*this);
  }

 private:
  Shape in_shape_;
};

// [batch, C, H, W] -> [batch, C] spatial mean.
class GlobalMeanPool final : public Layer {
 public:
  explicit GlobalMeanPool(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalMeanPool>(*this);
  }

 private:
  Shape in_shape_;
};

// [batch, C] rows scaled to unit length: y = x / sqrt(|x|^2 + eps).
class RowNormalize final : public Layer {
 public:
  explicit RowNormalize(std::string name, double eps = 1e-8)
      : Layer(std::move(name)), eps_(eps) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<RowNormalize>(*this);
  }

 private:
  double eps_;
  Tensor y_;
  std::vector<double> norm_;
};

// Identity forward; backward multiplies the incoming gradient by -alpha.
class GradientReversal final : public Layer {
 public:
  GradientReversal(std::string name, double alpha)
      : Layer(std::move(name)), alpha_(alpha) {}
  Tensor forward(const Tensor& x) override { return x; }
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GradientReversal>(*this);
  }

  void set_alpha(double alpha);
  double alpha() const { return alpha_; }

 private:
  double alpha_;
};

// Ordered chain of layers; owns its children.
class Sequential final : public Layer {
 public:
  explicit Sequential(std::string name) : Layer(std::move(name)) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push_back(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> parameters() override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Sequential>(*this);
  }

  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Concatenates [batch, C_i, H, W] tensors along the channel axis.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
// Splits a channel-concatenated gradient back into parts with the given widths.
std::vector<Tensor> split_channels(const Tensor& t, const std::vector<std::size_t>& widths);

// Flat parameter vectors in declared order; used by aggregation, hashing and
// checkpoints.
std::vector<double> flatten_params(const std::vector<ParamRef>& params);
void unflatten_params(const std::vector<ParamRef>& params, std::span<const double> flat);
std::size_t param_count(const std::vector<ParamRef>& params);
void zero_grads(const std::vector<ParamRef>& params);

// FNV-1a over the raw bytes of the parameter values.
std::uint64_t param_hash(const std::vector<ParamRef>& params);
std::uint64_t fnv1a(const void* bytes, std::size_t n,
                    std::uint64_t seed = 1469598103934665603ULL);

}  // namespace mucald
