#include "mucald/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "mucald/errors.hpp"
#include "mucald/kernels.hpp"

namespace mucald {
namespace {

// Kaiming-uniform with fan-in scaling, zero bias.
void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w.values()) v = dist(rng);
}

void require_rank(const Tensor& x, std::size_t rank, const std::string& who) {
  if (x.rank() != rank) {
    throw DimensionError(who + ": expected rank " + std::to_string(rank) +
                         " input, got " + shape_str(x.shape()));
  }
}

// cols: [in_ch * k * k, H * W]
void im2col(const double* img, std::size_t ch, std::size_t h, std::size_t w,
            std::size_t k, double* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          double* out = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          const double* src = img + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            out[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w))
                         ? 0.0
                         : src[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t ch, std::size_t h, std::size_t w,
                std::size_t k, double* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = img + (c * h + static_cast<std::size_t>(sy)) * w;
          const double* in = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[static_cast<std::size_t>(sx)] += in[x];
          }
        }
      }
    }
  }
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Softmax over axis 1 with the given inner stride (H*W for rank 4, 1 for rank 2).
void softmax_axis1(const Tensor& x, Tensor& y) {
  const std::size_t batch = x.dim(0);
  const std::size_t ch = x.dim(1);
  const std::size_t inner = x.size() / (batch * ch);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xs = x.data() + n * ch * inner;
    double* ys = y.data() + n * ch * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      double mx = xs[i];
      for (std::size_t c = 1; c < ch; ++c) mx = std::max(mx, xs[c * inner + i]);
      double total = 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        const double e = std::exp(xs[c * inner + i] - mx);
        ys[c * inner + i] = e;
        total += e;
      }
      for (std::size_t c = 0; c < ch; ++c) ys[c * inner + i] /= total;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in, std::size_t out, Rng& rng)
    : Layer(std::move(name)) {
  p_.weights = Tensor({in, out});
  p_.bias = Tensor({out});
  kaiming_uniform(p_.weights, in, rng);
  p_.weights.ensure_grad();
  p_.bias.ensure_grad();
}

Linear::Linear(std::string name, LayerParams params)
    : Layer(std::move(name)), p_(std::move(params)) {
  if (p_.weights.rank() != 2 || p_.bias.rank() != 1 ||
      p_.bias.dim(0) != p_.weights.dim(1)) {
    throw DimensionError(this->name() + ": weights " + shape_str(p_.weights.shape()) +
                         " incompatible with bias " + shape_str(p_.bias.shape()));
  }
  p_.weights.ensure_grad();
  p_.bias.ensure_grad();
}

Tensor Linear::forward(const Tensor& x) {
  require_rank(x, 2, name());
  const std::size_t in = in_features();
  const std::size_t out = out_features();
  if (x.dim(1) != in) {
    throw DimensionError(name() + ": input " + shape_str(x.shape()) +
                         " does not match weights " + shape_str(p_.weights.shape()));
  }
  const std::size_t batch = x.dim(0);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy(p_.bias.data(), p_.bias.data() + out, y.data() + n * out);
  }
  kernels::gemm_nn(batch, out, in, x.data(), in, p_.weights.data(), out, y.data(), out);
  input_ = x;
  has_input_ = true;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (!has_input_) throw StateError(name() + ": backward called before forward");
  const std::size_t batch = input_.dim(0);
  const std::size_t in = in_features();
  const std::size_t out = out_features();
  if (grad_out.shape() != Shape{batch, out}) {
    throw DimensionError(name() + ": upstream " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str({batch, out}));
  }
  kernels::gemm_tn(in, out, batch, input_.data(), in, grad_out.data(), out,
                   p_.weights.grad().data(), out);
  double* db = p_.bias.grad().data();
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::axpy(1.0, grad_out.data() + n * out, db, out);
  }
  Tensor dx({batch, in});
  kernels::gemm_nt(batch, in, out, grad_out.data(), out, p_.weights.data(), out,
                   dx.data(), in);
  return dx;
}

std::vector<ParamRef> Linear::parameters() {
  return {{name() + ".weight", &p_.weights}, {name() + ".bias", &p_.bias}};
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch,
               std::size_t kernel, Rng& rng)
    : Layer(std::move(name)) {
  if (kernel % 2 == 0) throw ConfigError(this->name() + ": kernel must be odd");
  p_.weights = Tensor({out_ch, in_ch, kernel, kernel});
  p_.bias = Tensor({out_ch});
  kaiming_uniform(p_.weights, in_ch * kernel * kernel, rng);
  p_.weights.ensure_grad();
  p_.bias.ensure_grad();
}

Conv2d::Conv2d(std::string name, LayerParams params)
    : Layer(std::move(name)), p_(std::move(params)) {
  if (p_.weights.rank() != 4 || p_.weights.dim(2) != p_.weights.dim(3) ||
      p_.weights.dim(2) % 2 == 0 || p_.bias.rank() != 1 ||
      p_.bias.dim(0) != p_.weights.dim(0)) {
    throw DimensionError(this->name() + ": invalid conv weights " +
                         shape_str(p_.weights.shape()) + " / bias " +
                         shape_str(p_.bias.shape()));
  }
  p_.weights.ensure_grad();
  p_.bias.ensure_grad();
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank(x, 4, name());
  const std::size_t cin = in_channels();
  if (x.dim(1) != cin) {
    throw DimensionError(name() + ": input " + shape_str(x.shape()) +
                         " has wrong channel count for weights " +
                         shape_str(p_.weights.shape()));
  }
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = out_channels(), k = kernel();
  const std::size_t hw = h * w, kk = cin * k * k;
  Tensor y({batch, cout, h, w});
  std::vector<double> cols(kk * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    double* yn = y.data() + n * cout * hw;
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(yn + co * hw, yn + (co + 1) * hw, p_.bias[co]);
    }
    if (k == 1) {
      kernels::gemm_nn(cout, hw, cin, p_.weights.data(), cin,
                       x.data() + n * cin * hw, hw, yn, hw);
    } else {
      im2col(x.data() + n * cin * hw, cin, h, w, k, cols.data());
      kernels::gemm_nn(cout, hw, kk, p_.weights.data(), kk, cols.data(), hw, yn, hw);
    }
  }
  input_ = x;
  has_input_ = true;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!has_input_) throw StateError(name() + ": backward called before forward");
  const std::size_t batch = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const std::size_t cin = in_channels(), cout = out_channels(), k = kernel();
  const std::size_t hw = h * w, kk = cin * k * k;
  if (grad_out.shape() != Shape{batch, cout, h, w}) {
    throw DimensionError(name() + ": upstream " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str({batch, cout, h, w}));
  }
  Tensor dx({batch, cin, h, w});
  std::vector<double> cols(kk * hw);
  std::vector<double> dcols(kk * hw);
  double* dw = p_.weights.grad().data();
  double* db = p_.bias.grad().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* g = grad_out.data() + n * cout * hw;
    for (std::size_t co = 0; co < cout; ++co) db[co] += kernels::sum(g + co * hw, hw);
    if (k == 1) {
      const double* xn = input_.data() + n * cin * hw;
      kernels::gemm_nt(cout, cin, hw, g, hw, xn, hw, dw, cin);
      kernels::gemm_tn(cin, hw, cout, p_.weights.data(), cin, g, hw,
                       dx.data() + n * cin * hw, hw);
    } else {
      im2col(input_.data() + n * cin * hw, cin, h, w, k, cols.data());
      kernels::gemm_nt(cout, kk, hw, g, hw, cols.data(), hw, dw, kk);
      std::fill(dcols.begin(), dcols.end(), 0.0);
      kernels::gemm_tn(kk, hw, cout, p_.weights.data(), kk, g, hw, dcols.data(), hw);
      col2im_add(dcols.data(), cin, h, w, k, dx.data() + n * cin * hw);
    }
  }
  return dx;
}

std::vector<ParamRef> Conv2d::parameters() {
  return {{name() + ".weight", &p_.weights}, {name() + ".bias", &p_.bias}};
}

// ------------------------------------------------------------ Activations

Tensor activation(const Tensor& x, Activation kind) {
  Tensor y(x.shape());
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    case Activation::kSoftmaxChannel:
      if (x.rank() != 2 && x.rank() != 4) {
        throw DimensionError("softmax_channel requires a channel axis, got " +
                             shape_str(x.shape()));
      }
      softmax_axis1(x, y);
      break;
  }
  return y;
}

Tensor ActivationLayer::forward(const Tensor& x) {
  output_ = activation(x, kind_);
  if (kind_ == Activation::kRelu) input_ = x;
  has_cache_ = true;
  return output_;
}

Tensor ActivationLayer::backward(const Tensor& grad_out) {
  if (!has_cache_) throw StateError(name() + ": backward called before forward");
  require_same_shape(grad_out, output_, name().c_str());
  Tensor dx(grad_out.shape());
  switch (kind_) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
      }
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = grad_out[i] * output_[i] * (1.0 - output_[i]);
      }
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = grad_out[i] * (1.0 - output_[i] * output_[i]);
      }
      break;
    case Activation::kSoftmaxChannel: {
      const std::size_t batch = output_.dim(0), ch = output_.dim(1);
      const std::size_t inner = output_.size() / (batch * ch);
      for (std::size_t n = 0; n < batch; ++n) {
        const double* y = output_.data() + n * ch * inner;
        const double* g = grad_out.data() + n * ch * inner;
        double* d = dx.data() + n * ch * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          double s = 0.0;
          for (std::size_t c = 0; c < ch; ++c) s += y[c * inner + i] * g[c * inner + i];
          for (std::size_t c = 0; c < ch; ++c) {
            d[c * inner + i] = y[c * inner + i] * (g[c * inner + i] - s);
          }
        }
      }
      break;
    }
  }
  return dx;
}

// --------------------------------------------------------- Resampling

Tensor AvgPool2::forward(const Tensor& x) {
  require_rank(x, 4, name());
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw DimensionError(name() + ": odd spatial size " + shape_str(x.shape()));
  Tensor y({b, c, h / 2, w / 2});
  for (std::size_t n = 0; n < b * c; ++n) {
    const double* src = x.data() + n * h * w;
    double* dst = y.data() + n * (h / 2) * (w / 2);
    for (std::size_t yy = 0; yy < h / 2; ++yy) {
      for (std::size_t xx = 0; xx < w / 2; ++xx) {
        const double* p = src + 2 * yy * w + 2 * xx;
        dst[yy * (w / 2) + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
    }
  }
  in_shape_ = x.shape();
  return y;
}

Tensor AvgPool2::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw StateError(name() + ": backward called before forward");
  const std::size_t b = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  if (grad_out.shape() != Shape{b, c, h / 2, w / 2}) {
    throw DimensionError(name() + ": upstream shape " + shape_str(grad_out.shape()));
  }
  Tensor dx(in_shape_);
  for (std::size_t n = 0; n < b * c; ++n) {
    const double* g = grad_out.data() + n * (h / 2) * (w / 2);
    double* d = dx.data() + n * h * w;
    for (std::size_t yy = 0; yy < h; ++yy) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        d[yy * w + xx] = 0.25 * g[(yy / 2) * (w / 2) + xx / 2];
      }
    }
  }
  return dx;
}

Tensor Upsample2::forward(const Tensor& x) {
  require_rank(x, 4, name());
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c, 2 * h, 2 * w});
  for (std::size_t n = 0; n < b * c; ++n) {
    const double* src = x.data() + n * h * w;
    double* dst = y.data() + n * 4 * h * w;
    for (std::size_t yy = 0; yy < 2 * h; ++yy) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
      }
    }
  }
  in_shape_ = x.shape();
  return y;
}

Tensor Upsample2::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw StateError(name() + ": backward called before forward");
  const std::size_t b = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  if (grad_out.shape() != Shape{b, c, 2 * h, 2 * w}) {
    throw DimensionError(name() + ": upstream shape " + shape_str(grad_out.shape()));
  }
  Tensor dx(in_shape_);
  for (std::size_t n = 0; n < b * c; ++n) {
    const double* g = grad_out.data() + n * 4 * h * w;
    double* d = dx.data() + n * h * w;
    for (std::size_t yy = 0; yy < 2 * h; ++yy) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        d[(yy / 2) * w + xx / 2] += g[yy * 2 * w + xx];
      }
    }
  }
  return dx;
}

Tensor GlobalMeanPool::forward(const Tensor& x) {
  require_rank(x, 4, name());
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({b, c});
  for (std::size_t n = 0; n < b * c; ++n) {
    y[n] = kernels::sum(x.data() + n * hw, hw) / static_cast<double>(hw);
  }
  in_shape_ = x.shape();
  return y;
}

Tensor GlobalMeanPool::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw StateError(name() + ": backward called before forward");
  const std::size_t b = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
  if (grad_out.shape() != Shape{b, c}) {
    throw DimensionError(name() + ": upstream shape " + shape_str(grad_out.shape()));
  }
  Tensor dx(in_shape_);
  for (std::size_t n = 0; n < b * c; ++n) {
    std::fill(dx.data() + n * hw, dx.data() + (n + 1) * hw,
              grad_out[n] / static_cast<double>(hw));
  }
  return dx;
}

Tensor RowNormalize::forward(const Tensor& x) {
  require_rank(x, 2, name());
  const std::size_t b = x.dim(0), c = x.dim(1);
  y_ = Tensor(x.shape());
  norm_.assign(b, 0.0);
  for (std::size_t n = 0; n < b; ++n) {
    const double* row = x.data() + n * c;
    norm_[n] = std::sqrt(kernels::dot(row, row, c) + eps_);
    for (std::size_t j = 0; j < c; ++j) y_[n * c + j] = row[j] / norm_[n];
  }
  return y_;
}

Tensor RowNormalize::backward(const Tensor& grad_out) {
  if (norm_.empty()) throw StateError(name() + ": backward called before forward");
  require_same_shape(grad_out, y_, name().c_str());
  const std::size_t b = y_.dim(0), c = y_.dim(1);
  Tensor dx(y_.shape());
  for (std::size_t n = 0; n < b; ++n) {
    const double* y = y_.data() + n * c;
    const double* g = grad_out.data() + n * c;
    const double yg = kernels::dot(y, g, c);
    for (std::size_t j = 0; j < c; ++j) dx[n * c + j] = (g[j] - y[j] * yg) / norm_[n];
  }
  return dx;
}

Tensor GradientReversal::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = -alpha_ * grad_out[i];
  return dx;
}

void GradientReversal::set_alpha(double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError(name() + ".alpha must be >= 0");
  alpha_ = alpha;
}

// ----------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) : Layer(other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Layer::operator=(other);
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<ParamRef> Sequential::parameters() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// ------------------------------------------------------------- Helpers

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& s0 = parts.front()->shape();
  if (s0.size() != 4) throw DimensionError("concat_channels: rank-4 inputs required");
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    const Shape& s = p->shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw DimensionError("concat_channels: " + shape_str(s) + " vs " + shape_str(s0));
    }
    total += s[1];
  }
  const std::size_t b = s0[0], hw = s0[2] * s0[3];
  Tensor out({b, total, s0[2], s0[3]});
  for (std::size_t n = 0; n < b; ++n) {
    double* dst = out.data() + n * total * hw;
    for (const Tensor* p : parts) {
      const std::size_t c = p->dim(1);
      const double* src = p->data() + n * c * hw;
      std::copy(src, src + c * hw, dst);
      dst += c * hw;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<std::size_t>& widths) {
  std::size_t total = 0;
  for (std::size_t w : widths) total += w;
  if (t.rank() != 4 || t.dim(1) != total) {
    throw DimensionError("split_channels: " + shape_str(t.shape()) +
                         " does not have " + std::to_string(total) + " channels");
  }
  const std::size_t b = t.dim(0), hw = t.dim(2) * t.dim(3);
  std::vector<Tensor> out;
  for (std::size_t w : widths) out.emplace_back(Shape{b, w, t.dim(2), t.dim(3)});
  for (std::size_t n = 0; n < b; ++n) {
    const double* src = t.data() + n * total * hw;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      std::copy(src, src + widths[i] * hw, out[i].data() + n * widths[i] * hw);
      src += widths[i] * hw;
    }
  }
  return out;
}

std::vector<double> flatten_params(const std::vector<ParamRef>& params) {
  std::vector<double> flat;
  flat.reserve(param_count(params));
  for (const auto& p : params) {
    flat.insert(flat.end(), p.tensor->storage().begin(), p.tensor->storage().end());
  }
  return flat;
}

void unflatten_params(const std::vector<ParamRef>& params, std::span<const double> flat) {
  if (flat.size() != param_count(params)) {
    throw DimensionError("unflatten_params: flat length " + std::to_string(flat.size()) +
                         " vs parameter count " + std::to_string(param_count(params)));
  }
  std::size_t off = 0;
  for (const auto& p : params) {
    std::copy(flat.begin() + off, flat.begin() + off + p.tensor->size(), p.tensor->data());
    off += p.tensor->size();
  }
}

std::size_t param_count(const std::vector<ParamRef>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed) {
  const auto* b = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t param_hash(const std::vector<ParamRef>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    h = fnv1a(p.tensor->data(), p.tensor->size() * sizeof(double), h);
  }
  return h;
}

}  // namespace mucald
