#include "cathseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cathseg/rng.hpp"
#include "conv_kernels.hpp"

namespace cathseg::nn {

namespace {

thread_local bool g_grad_enabled = true;
thread_local BranchRecorder* g_branch_recorder = nullptr;

template <typename T>
bool wants_grad(const std::vector<Tensor<T>>& inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>& t) { return t.requires_grad(); });
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw TensorError(msg);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t r, const char* what) {
  require(t.defined(), std::string(what) + ": undefined tensor");
  require(t.rank() == r, std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                             to_string(t.shape()));
}

template <typename T>
void accumulate(Node<T>& input, const std::vector<T>& delta) {
  if (!input.requires_grad) return;
  auto& g = input.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Stride-1 conv output subsampled at multiples of the stride; same
// accumulation order as a direct strided loop.
template <typename T>
std::vector<T> subsample2d(const std::vector<T>& full, std::size_t c, std::size_t h, std::size_t w,
                           std::size_t stride, std::size_t oh, std::size_t ow) {
  std::vector<T> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        out[(ch * oh + y) * ow + x] = full[(ch * h + y * stride) * w + x * stride];
  return out;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

BranchRecorder::BranchRecorder() : previous_(g_branch_recorder) { g_branch_recorder = this; }
BranchRecorder::~BranchRecorder() { g_branch_recorder = previous_; }
void BranchRecorder::fold(std::uint64_t word) { digest_ = splitmix64(digest_ ^ splitmix64(word)); }
BranchRecorder* active_branch_recorder() { return g_branch_recorder; }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(nn::numel(shape), T(0));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (values.size() != nn::numel(shape))
    throw TensorError("value count " + std::to_string(values.size()) + " does not match shape " +
                      to_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, "item() on non-scalar tensor " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                  std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (wants_grad(inputs)) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1,
          "backward() requires a scalar loss, got " + (loss.defined() ? to_string(loss.shape()) : "undefined"));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward) continue;
    if (!node->grad.empty()) node->backward(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  return make_op<T>({1}, {s}, {a}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (auto* rec = g_branch_recorder) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      word = (word << 1) | (x[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63 || i + 1 == out.size()) {
        rec->fold(word);
        word = 0;
      }
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p_drop, bool training, std::uint64_t seed) {
  require(p_drop >= 0.0 && p_drop < 1.0, "dropout: p_drop must lie in [0, 1)");
  if (!training || p_drop == 0.0) return x;
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - p_drop));
  std::vector<T> factor(x.numel());
  for (auto& f : factor) f = rng.uniform() < p_drop ? T(0) : scale;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i];
  return make_op<T>(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, bool same_pad) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t cin = input.dim(0), cout = kernel.dim(0);
  require(kernel.dim(1) == cin, "conv2d: channel mismatch, input has " + std::to_string(cin) +
                                    " channels, kernel expects " + std::to_string(kernel.dim(1)));
  require(bias.dim(0) == cout, "conv2d: bias length does not match output channels");
  kernels::Geometry g;
  g.height = input.dim(1);
  g.width = input.dim(2);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  if (same_pad) {
    require(g.kh % 2 == 1 && g.kw % 2 == 1, "conv2d: same padding needs odd kernel sizes");
    g.ph = g.kh / 2;
    g.pw = g.kw / 2;
  }
  require(g.kh <= g.hp() && g.kw <= g.wp(), "conv2d: kernel larger than padded input");
  const std::size_t fh = g.out_h(), fw = g.out_w();
  const std::size_t oh = (fh - 1) / stride + 1, ow = (fw - 1) / stride + 1;

  std::vector<T> full(cout * fh * fw);
  kernels::conv_forward(input.values().data(), cin, kernel.values().data(), bias.values().data(),
                        cout, g, full.data());
  auto out = stride == 1 ? std::move(full) : subsample2d(full, cout, fh, fw, stride, oh, ow);

  return make_op<T>({cout, oh, ow}, std::move(out), {input, kernel, bias},
                    [g, cin, cout, stride, fh, fw, oh, ow](Node<T>& self) {
                      auto& in = *self.inputs[0];
                      auto& k = *self.inputs[1];
                      auto& b = *self.inputs[2];
                      std::vector<T> gfull;
                      const T* gout = self.grad.data();
                      if (stride != 1) {
                        gfull.assign(cout * fh * fw, T(0));
                        for (std::size_t c = 0; c < cout; ++c)
                          for (std::size_t y = 0; y < oh; ++y)
                            for (std::size_t x = 0; x < ow; ++x)
                              gfull[(c * fh + y * stride) * fw + x * stride] = self.grad[(c * oh + y) * ow + x];
                        gout = gfull.data();
                      }
                      kernels::conv_backward(in.value.data(), cin, k.value.data(), cout, g, gout,
                                             in.requires_grad ? in.ensure_grad().data() : nullptr,
                                             k.requires_grad ? k.ensure_grad().data() : nullptr,
                                             b.requires_grad ? b.ensure_grad().data() : nullptr);
                    });
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, bool same_pad) {
  require_rank(input, 4, "conv3d input");
  require_rank(kernel, 5, "conv3d kernel");
  require_rank(bias, 1, "conv3d bias");
  const std::size_t cin = input.dim(0), cout = kernel.dim(0);
  require(kernel.dim(1) == cin, "conv3d: channel mismatch, input has " + std::to_string(cin) +
                                    " channels, kernel expects " + std::to_string(kernel.dim(1)));
  require(bias.dim(0) == cout, "conv3d: bias length does not match output channels");
  kernels::Geometry g;
  g.depth = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kd = kernel.dim(2);
  g.kh = kernel.dim(3);
  g.kw = kernel.dim(4);
  if (same_pad) {
    require(g.kd % 2 == 1 && g.kh % 2 == 1 && g.kw % 2 == 1, "conv3d: same padding needs odd kernel sizes");
    g.pd = g.kd / 2;
    g.ph = g.kh / 2;
    g.pw = g.kw / 2;
  }
  require(g.kd <= g.dp() && g.kh <= g.hp() && g.kw <= g.wp(), "conv3d: kernel larger than padded input");
  std::vector<T> out(cout * g.out_count());
  kernels::conv_forward(input.values().data(), cin, kernel.values().data(), bias.values().data(),
                        cout, g, out.data());
  return make_op<T>({cout, g.out_d(), g.out_h(), g.out_w()}, std::move(out), {input, kernel, bias},
                    [g, cin, cout](Node<T>& self) {
                      auto& in = *self.inputs[0];
                      auto& k = *self.inputs[1];
                      auto& b = *self.inputs[2];
                      kernels::conv_backward(in.value.data(), cin, k.value.data(), cout, g, self.grad.data(),
                                             in.requires_grad ? in.ensure_grad().data() : nullptr,
                                             k.requires_grad ? k.ensure_grad().data() : nullptr,
                                             b.requires_grad ? b.ensure_grad().data() : nullptr);
                    });
}

// Kernel equal to stride: every output pixel receives exactly one tap per
// input channel, so each tap is a channel-weighted sum of whole input planes.
template <typename T>
Tensor<T> deconv2d_tiles(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t s) {
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(1), hw = h * w, taps = s * s;
  const std::size_t oh = h * s, ow = w * s;
  const T* in = input.values().data();
  const T* k = kernel.values().data();
  std::vector<T> out(cout * oh * ow);
  std::vector<T> acc(hw);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t t = 0; t < taps; ++t) {
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T wv = k[(ci * cout + co) * taps + t];
        const T* src = in + ci * hw;
        for (std::size_t i = 0; i < hw; ++i) acc[i] += wv * src[i];
      }
      T* dst = out.data() + co * oh * ow + (t / s) * ow + t % s;
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix) dst[iy * s * ow + ix * s] = acc[iy * w + ix];
    }
  return make_op<T>({cout, oh, ow}, std::move(out), {input, kernel}, [=](Node<T>& self) {
    auto& ni = *self.inputs[0];
    auto& nk = *self.inputs[1];
    T* gi = ni.requires_grad ? ni.ensure_grad().data() : nullptr;
    T* gk = nk.requires_grad ? nk.ensure_grad().data() : nullptr;
    // Output gradient regrouped as [cout][tap][h*w].
    std::vector<T> g(cout * taps * hw);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t t = 0; t < taps; ++t) {
        const T* src = self.grad.data() + co * oh * ow + (t / s) * ow + t % s;
        T* dst = g.data() + (co * taps + t) * hw;
        for (std::size_t iy = 0; iy < h; ++iy)
          for (std::size_t ix = 0; ix < w; ++ix) dst[iy * w + ix] = src[iy * s * ow + ix * s];
      }
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t t = 0; t < taps; ++t) {
          const std::size_t kidx = (ci * cout + co) * taps + t;
          const T* gp = g.data() + (co * taps + t) * hw;
          if (gi) {
            const T wv = nk.value[kidx];
            T* dst = gi + ci * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += wv * gp[i];
          }
          if (gk) {
            const T* vp = ni.value.data() + ci * hw;
            T a = T(0);
            for (std::size_t i = 0; i < hw; ++i) a += vp[i] * gp[i];
            gk[kidx] += a;
          }
        }
  });
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride) {
  require_rank(input, 3, "deconv2d input");
  require_rank(kernel, 4, "deconv2d kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(kernel.dim(0) == cin, "deconv2d: channel mismatch");
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  require(stride >= 1 && kh >= stride && kw >= stride,
          "deconv2d: invalid stride/kernel combination (kernel must be at least the stride)");
  if (kh == stride && kw == stride) return deconv2d_tiles(input, kernel, stride);
  const std::size_t oh = h * stride, ow = w * stride;
  const std::size_t ph = (kh - stride) / 2, pw = (kw - stride) / 2;
  const T* in = input.values().data();
  const T* k = kernel.values().data();
  std::vector<T> out(cout * oh * ow, T(0));
  // Valid input range along one axis for kernel tap `t`: 0 <= i*stride + t - pad < n_out.
  auto valid = [stride](std::size_t t, std::size_t pad, std::size_t n_in, std::size_t n_out) {
    std::size_t lo = 0;
    while (lo < n_in && lo * stride + t < pad) ++lo;
    std::size_t hi = n_in;
    while (hi > lo && (hi - 1) * stride + t - pad >= n_out) --hi;
    return std::pair{lo, hi};
  };
  // Per output element: input channel, then kernel row, then kernel column.
  for (std::size_t co = 0; co < cout; ++co) {
    T* dst = out.data() + co * oh * ow;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* src = in + ci * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto [y0, y1] = valid(ky, ph, h, oh);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto [x0, x1] = valid(kx, pw, w, ow);
          const T wv = k[((ci * cout + co) * kh + ky) * kw + kx];
          for (std::size_t iy = y0; iy < y1; ++iy) {
            T* row = dst + (iy * stride + ky - ph) * ow + kx - pw;
            const T* srow = src + iy * w;
            for (std::size_t ix = x0; ix < x1; ++ix) row[ix * stride] += wv * srow[ix];
          }
        }
      }
    }
  }
  return make_op<T>({cout, oh, ow}, std::move(out), {input, kernel},
                    [=](Node<T>& self) {
                      auto& ni = *self.inputs[0];
                      auto& nk = *self.inputs[1];
                      T* gi = ni.requires_grad ? ni.ensure_grad().data() : nullptr;
                      T* gk = nk.requires_grad ? nk.ensure_grad().data() : nullptr;
                      const T* gout = self.grad.data();
                      for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t co = 0; co < cout; ++co)
                          for (std::size_t ky = 0; ky < kh; ++ky) {
                            const auto [y0, y1] = valid(ky, ph, h, oh);
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                              const auto [x0, x1] = valid(kx, pw, w, ow);
                              const std::size_t kidx = ((ci * cout + co) * kh + ky) * kw + kx;
                              const T wv = nk.value[kidx];
                              T acc = T(0);
                              for (std::size_t iy = y0; iy < y1; ++iy) {
                                const T* grow = gout + (co * oh + iy * stride + ky - ph) * ow + kx - pw;
                                const T* vrow = ni.value.data() + (ci * h + iy) * w;
                                if (gi) {
                                  T* girow = gi + (ci * h + iy) * w;
                                  for (std::size_t ix = x0; ix < x1; ++ix) girow[ix] += wv * grow[ix * stride];
                                }
                                for (std::size_t ix = x0; ix < x1; ++ix) acc += vrow[ix] * grow[ix * stride];
                              }
                              if (gk) gk[kidx] += acc;
                            }
                          }
                    });
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input) {
  require_rank(input, 3, "maxpool2d input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "maxpool2d: spatial dims must be even, got " + to_string(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(c * oh * ow);
  std::vector<std::uint32_t> arg(out.size());
  const T* in = input.values().data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand)
          if (in[idx] > in[best]) best = idx;
        const std::size_t o = (ch * oh + y) * ow + x;
        out[o] = in[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
  if (auto* rec = g_branch_recorder)
    for (auto a : arg) rec->fold(a);
  PoolResult<T> result;
  result.argmax = arg;
  result.output = make_op<T>({c, oh, ow}, std::move(out), {input}, [arg = std::move(arg)](Node<T>& self) {
    auto& ni = *self.inputs[0];
    if (!ni.requires_grad) return;
    auto& g = ni.ensure_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
  });
  return result;
}

template <typename T>
SoftmaxCE<T> softmax_ce(const Tensor<T>& logits, std::span<const std::uint8_t> target) {
  require(logits.defined() && logits.rank() >= 2 && logits.dim(0) == 2,
          "softmax_ce: logits must have shape [2, ...], got " + (logits.defined() ? to_string(logits.shape()) : "undefined"));
  const std::size_t n = logits.numel() / 2;
  require(target.size() == n, "softmax_ce: target size does not match logits");
  for (auto t : target) require(t <= 1, "softmax_ce: target labels must be 0 or 1");

  const T* l = logits.values().data();
  std::vector<T> probs(2 * n);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = l[n + i] - l[i];  // log-odds of class 1
    const T p1 = T(1) / (T(1) + std::exp(-d));
    probs[i] = T(1) - p1;
    probs[n + i] = p1;
    // -log p_target = softplus(+-d), evaluated stably.
    const T z = target[i] ? -d : d;
    total += std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
  }
  const T loss = total / static_cast<T>(n);

  std::vector<std::uint8_t> labels(target.begin(), target.end());
  SoftmaxCE<T> result;
  result.probs = Tensor<T>(logits.shape(), probs, false);
  result.loss = make_op<T>({1}, {loss}, {logits},
                           [probs = std::move(probs), labels = std::move(labels), n](Node<T>& self) {
                             auto& nl = *self.inputs[0];
                             if (!nl.requires_grad) return;
                             auto& g = nl.ensure_grad();
                             const T scale = self.grad[0] / static_cast<T>(n);
                             for (std::size_t i = 0; i < n; ++i) {
                               const T r = (probs[n + i] - static_cast<T>(labels[i])) * scale;
                               g[i] -= r;
                               g[n + i] += r;
                             }
                           });
  return result;
}

template <typename T>
Tensor<T> softmax2(const Tensor<T>& logits) {
  require(logits.defined() && logits.rank() >= 2 && logits.dim(0) == 2,
          "softmax2: logits must have shape [2, ...]");
  const std::size_t n = logits.numel() / 2;
  const T* l = logits.values().data();
  std::vector<T> probs(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const T p1 = T(1) / (T(1) + std::exp(l[i] - l[n + i]));
    probs[i] = T(1) - p1;
    probs[n + i] = p1;
  }
  return Tensor<T>(logits.shape(), std::move(probs), false);
}

template <typename T>
void init_glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

#define CATHSEG_INSTANTIATE(T)                                                                      \
  template class Tensor<T>;                                                                         \
  template Tensor<T> make_op<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&,               \
                                std::function<void(Node<T>&)>);                                     \
  template void backward<T>(const Tensor<T>&);                                                      \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                     \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, std::uint64_t);                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, bool); \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);         \
  template Tensor<T> deconv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);                  \
  template PoolResult<T> maxpool2d<T>(const Tensor<T>&);                                            \
  template SoftmaxCE<T> softmax_ce<T>(const Tensor<T>&, std::span<const std::uint8_t>);             \
  template Tensor<T> softmax2<T>(const Tensor<T>&);                                                 \
  template void init_glorot_uniform<T>(Tensor<T>&, std::size_t, std::size_t, std::uint64_t);

CATHSEG_INSTANTIATE(float)
CATHSEG_INSTANTIATE(double)

#undef CATHSEG_INSTANTIATE

}  // namespace cathseg::nn
