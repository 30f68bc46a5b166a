#include "smg/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

namespace smg::ad {
namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + shape_string(s));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

/// Source index per output position for one kernel offset; -1 marks zero padding.
std::vector<int> tap_indices(int out_len, int in_len, int offset, int stride, int pad, Padding mode) {
  std::vector<int> idx(static_cast<std::size_t>(out_len));
  for (int o = 0; o < out_len; ++o) {
    const int i = o * stride + offset - pad;
    if (i >= 0 && i < in_len) {
      idx[o] = i;
    } else {
      idx[o] = mode == Padding::zero ? -1 : reflect_index(i, in_len);
    }
  }
  return idx;
}

struct ConvGeometry {
  int channels, height, width, kernel, out_h, out_w;
  std::vector<std::vector<int>> rows;  // [ky][oy]
  std::vector<std::vector<int>> cols;  // [kx][ox]

  ConvGeometry(int c, int h, int w, int k, const ConvOptions& opt)
      : channels(c), height(h), width(w), kernel(k) {
    out_h = (h + 2 * opt.pad - k) / opt.stride + 1;
    out_w = (w + 2 * opt.pad - k) / opt.stride + 1;
    if (out_h < 1 || out_w < 1 || h + 2 * opt.pad < k || w + 2 * opt.pad < k) {
      throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    for (int o = 0; o < k; ++o) {
      rows.push_back(tap_indices(out_h, h, o, opt.stride, opt.pad, opt.padding));
      cols.push_back(tap_indices(out_w, w, o, opt.stride, opt.pad, opt.padding));
    }
  }

  int patch() const { return out_h * out_w; }

  template <typename T>
  void im2col(const T* x, T* out) const {
    const int p = patch();
    for (int c = 0; c < channels; ++c) {
      const T* plane = x + static_cast<std::size_t>(c) * height * width;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          T* dst = out + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * p;
          const auto& xi = cols[kx];
          for (int oy = 0; oy < out_h; ++oy, dst += out_w) {
            const int iy = rows[ky][oy];
            if (iy < 0) {
              std::fill(dst, dst + out_w, T{0});
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * width;
            for (int ox = 0; ox < out_w; ++ox) dst[ox] = xi[ox] < 0 ? T{0} : src[xi[ox]];
          }
        }
      }
    }
  }

  template <typename T>
  void col2im(const T* in, T* x) const {
    const int p = patch();
    for (int c = 0; c < channels; ++c) {
      T* plane = x + static_cast<std::size_t>(c) * height * width;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const T* src = in + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * p;
          const auto& xi = cols[kx];
          for (int oy = 0; oy < out_h; ++oy, src += out_w) {
            const int iy = rows[ky][oy];
            if (iy < 0) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * width;
            for (int ox = 0; ox < out_w; ++ox) {
              if (xi[ox] >= 0) dst[xi[ox]] += src[ox];
            }
          }
        }
      }
    }
  }
};

}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Var<T>::backward() const {
  if (!node_) throw StateError("backward() on undefined Var");
  if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && !child->leaf && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) n->grad = Tensor<T>(n->value.shape());
  node_->grad[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
  // Intermediate gradients are not needed once propagated.
  for (Node<T>* n : order) {
    if (n != node_.get()) n->grad = Tensor<T>();
  }
}

template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::type_identity_t<std::function<void(Node<T>&)>> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(node));
}

namespace {

/// Gradient accumulator of input i, or nullptr when it takes none.
template <typename T>
Tensor<T>* input_grad(Node<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

template <typename T, typename F>
Var<T> unary_map(const Var<T>& x, F forward, std::function<void(Node<T>&)> backward) {
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_op(std::move(out), {x}, std::move(backward));
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvOptions opt) {
  require_rank4(x.shape(), "conv2d");
  require_rank4(weight.shape(), "conv2d weight");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  if (bias.defined() && (bias.value().size() != static_cast<std::size_t>(cout))) {
    throw ShapeError("conv2d: bias size does not match output channels");
  }
  auto geo = std::make_shared<ConvGeometry>(c, h, w, k, opt);
  const int kk = c * k * k, p = geo->patch();
  const bool record = g_grad_enabled && (x.requires_grad() || weight.requires_grad() || bias.requires_grad());

  Tensor<T> out({n, cout, geo->out_h, geo->out_w});
  auto cols = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(record ? n : 1) * kk * p);
  ConstMatMap<T> wmat(weight.value().data(), cout, kk);
  for (int b = 0; b < n; ++b) {
    T* col = cols->data() + static_cast<std::size_t>(record ? b : 0) * kk * p;
    geo->im2col(x.value().data() + static_cast<std::size_t>(b) * c * h * w, col);
    MatMap<T> omat(out.data() + static_cast<std::size_t>(b) * cout * p, cout, p);
    omat.noalias() = wmat * ConstMatMap<T>(col, kk, p);
    if (bias.defined()) {
      for (int o = 0; o < cout; ++o) omat.row(o).array() += bias.value()[o];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(std::move(out), inputs, [geo, cols, n, c, h, w, cout, kk, p](Node<T>& self) {
    const Tensor<T>& wv = self.inputs[1]->value;
    Tensor<T>* gx = input_grad(self, 0);
    Tensor<T>* gw = input_grad(self, 1);
    Tensor<T>* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
    AlignedVector<T> dcols(gx ? static_cast<std::size_t>(kk) * p : 0);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> g(self.grad.data() + static_cast<std::size_t>(b) * cout * p, cout, p);
      ConstMatMap<T> col(cols->data() + static_cast<std::size_t>(b) * kk * p, kk, p);
      if (gw) MatMap<T>(gw->data(), cout, kk).noalias() += g * col.transpose();
      if (gb) {
        for (int o = 0; o < cout; ++o) (*gb)[o] += g.row(o).sum();
      }
      if (gx) {
        MatMap<T> dc(dcols.data(), kk, p);
        dc.noalias() = ConstMatMap<T>(wv.data(), cout, kk).transpose() * g;
        geo->col2im(dcols.data(), gx->data() + static_cast<std::size_t>(b) * c * h * w);
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, double eps) {
  require_rank4(x.shape(), "instance_norm");
  const int planes = x.dim(0) * x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(planes);
  for (int pl = 0; pl < planes; ++pl) {
    const T* src = x.value().data() + pl * hw;
    double mean = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mean += src[i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[pl] = inv;
    T* dst = out.data() + pl * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>((src[i] - mean) * inv);
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return make_op(std::move(out), {x}, [saved, inv_std, planes, hw](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    if (!gx) return;
    for (int pl = 0; pl < planes; ++pl) {
      const T* y = saved->data() + pl * hw;
      const T* g = self.grad.data() + pl * hw;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        mg += g[i];
        mgy += static_cast<double>(g[i]) * y[i];
      }
      mg /= static_cast<double>(hw);
      mgy /= static_cast<double>(hw);
      T* dst = gx->data() + pl * hw;
      const double inv = (*inv_std)[pl];
      for (std::size_t i = 0; i < hw; ++i) dst[i] += static_cast<T>(inv * (g[i] - mg - y[i] * mgy));
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary_map<T>(x, [](T v) { return v > T{0} ? v : T{0}; }, [](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T{0}) (*gx)[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
  const T s = static_cast<T>(slope);
  return unary_map<T>(x, [s](T v) { return v > T{0} ? v : s * v; }, [s](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += in[i] > T{0} ? self.grad[i] : s * self.grad[i];
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary_map<T>(x, [](T v) { return std::tanh(v); }, [](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += self.grad[i] * (T{1} - y[i] * y[i]);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out(a.value());
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor<T>* g = input_grad(self, k)) *g += self.grad;
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0)) *g += self.grad;
    if (Tensor<T>* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  const T f = static_cast<T>(s);
  return unary_map<T>(a, [f](T v) { return f * v; }, [f](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += f * self.grad[i];
  });
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& m) {
  a.value().require_same_shape(m, "mul_const");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * m[i];
  auto saved = std::make_shared<Tensor<T>>(m);
  return make_op(std::move(out), {a}, [saved](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += (*saved)[i] * self.grad[i];
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  require_rank4(x.shape(), "upsample_nearest2x");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n, c, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.at(b, ch, y, xx) = x.value().at(b, ch, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [n, c, h, w](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx) g->at(b, ch, y / 2, xx / 2) += self.grad.at(b, ch, y, xx);
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  require_rank4(parts[0].shape(), "concat_channels");
  const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require_rank4(p.shape(), "concat_channels");
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n, total, h, w});
  for (int b = 0; b < n; ++b) {
    int base = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].value().data() + static_cast<std::size_t>(b) * widths[k] * hw;
      std::copy(src, src + widths[k] * hw, out.data() + (static_cast<std::size_t>(b) * total + base) * hw);
      base += widths[k];
    }
  }
  return make_op(std::move(out), parts, [widths, n, total, hw](Node<T>& self) {
    for (int b = 0; b < n; ++b) {
      int base = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (Tensor<T>* g = input_grad(self, k)) {
          const T* src = self.grad.data() + (static_cast<std::size_t>(b) * total + base) * hw;
          T* dst = g->data() + static_cast<std::size_t>(b) * widths[k] * hw;
          for (std::size_t i = 0; i < widths[k] * hw; ++i) dst[i] += src[i];
        }
        base += widths[k];
      }
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ArgumentError("dropout rate must lie in [0,1)");
  if (rate == 0.0) return x;
  auto mask = std::make_shared<Tensor<T>>(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const T kept = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? kept : T{0};
    out[i] = x.value()[i] * (*mask)[i];
  }
  return make_op(std::move(out), {x}, [mask](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += (*mask)[i] * self.grad[i];
  });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  require_rank4(x.shape(), "max_pool2x2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2x2: input " + shape_string(x.shape()) + " too small");
  Tensor<T> out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& in = x.value();
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = ((static_cast<std::size_t>(b) * c + ch) * h + 2 * y) * w + 2 * xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((static_cast<std::size_t>(b) * c + ch) * h + 2 * y + dy) * w + 2 * xx + dx;
              if (in[idx] > in[best]) best = idx;
            }
          (*argmax)[o] = best;
          out[o] = in[best];
        }
  return make_op(std::move(out), {x}, [argmax](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < argmax->size(); ++i) (*g)[(*argmax)[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> gram(const Var<T>& x) {
  require_rank4(x.shape(), "gram");
  const int n = x.dim(0), c = x.dim(1);
  const int hw = x.dim(2) * x.dim(3);
  if (hw < 1 || c < 1) throw ArgumentError("gram: empty feature map " + shape_string(x.shape()));
  const T norm = static_cast<T>(1.0 / (static_cast<double>(c) * hw));
  Tensor<T> out({n, c, c});
  for (int b = 0; b < n; ++b) {
    ConstMatMap<T> f(x.value().data() + static_cast<std::size_t>(b) * c * hw, c, hw);
    MatMap<T>(out.data() + static_cast<std::size_t>(b) * c * c, c, c).noalias() = norm * (f * f.transpose());
  }
  return make_op(std::move(out), {x}, [n, c, hw, norm](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    const auto& in = self.inputs[0]->value;
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> dg(self.grad.data() + static_cast<std::size_t>(b) * c * c, c, c);
      ConstMatMap<T> f(in.data() + static_cast<std::size_t>(b) * c * hw, c, hw);
      MatMap<T>(g->data() + static_cast<std::size_t>(b) * c * hw, c, hw).noalias() +=
          norm * ((dg + dg.transpose()) * f);
    }
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value(), false);
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mean_abs_diff");
  const std::size_t count = a.value().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  Tensor<T> out(Shape{}, static_cast<T>(sum / static_cast<double>(count)));
  return make_op(std::move(out), {a, b}, [count](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T scale_by = self.grad[0] / static_cast<T>(count);
    Tensor<T>* ga = input_grad(self, 0);
    Tensor<T>* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = av[i] - bv[i];
      const T s = d > T{0} ? scale_by : (d < T{0} ? -scale_by : T{0});
      if (ga) (*ga)[i] += s;
      if (gb) (*gb)[i] -= s;
    }
  });
}

template <typename T>
Var<T> weighted_mean_abs_diff(const Var<T>& a, const Var<T>& b, const Tensor<T>& w) {
  require_same(a, b, "weighted_mean_abs_diff");
  a.value().require_same_shape(w, "weighted_mean_abs_diff weights");
  const std::size_t count = a.value().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    sum += std::abs((static_cast<double>(a.value()[i]) - b.value()[i]) * w[i]);
  }
  Tensor<T> out(Shape{}, static_cast<T>(sum / static_cast<double>(count)));
  auto weights = std::make_shared<Tensor<T>>(w);
  return make_op(std::move(out), {a, b}, [count, weights](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T scale_by = self.grad[0] / static_cast<T>(count);
    Tensor<T>* ga = input_grad(self, 0);
    Tensor<T>* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = av[i] - bv[i];
      const T mag = std::abs((*weights)[i]) * scale_by;
      const T s = d > T{0} ? mag : (d < T{0} ? -mag : T{0});
      if (ga) (*ga)[i] += s;
      if (gb) (*gb)[i] -= s;
    }
  });
}

template <typename T>
Var<T> mean_square_to(const Var<T>& x, double target) {
  const std::size_t count = x.value().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = x.value()[i] - target;
    sum += d * d;
  }
  Tensor<T> out(Shape{}, static_cast<T>(sum / static_cast<double>(count)));
  return make_op(std::move(out), {x}, [count, target](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    const auto& xv = self.inputs[0]->value;
    const T f = T{2} * self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) (*g)[i] += f * (xv[i] - static_cast<T>(target));
  });
}

template <typename T>
Var<T> mean_square_diff(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mean_square_diff");
  const std::size_t count = a.value().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    sum += d * d;
  }
  Tensor<T> out(Shape{}, static_cast<T>(sum / static_cast<double>(count)));
  return make_op(std::move(out), {a, b}, [count](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T f = T{2} * self.grad[0] / static_cast<T>(count);
    Tensor<T>* ga = input_grad(self, 0);
    Tensor<T>* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = f * (av[i] - bv[i]);
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w) {
  x.value().require_same_shape(w, "weighted_sum");
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += static_cast<double>(x.value()[i]) * w[i];
  auto weights = std::make_shared<Tensor<T>>(w);
  return make_op(Tensor<T>(Shape{}, static_cast<T>(sum)), {x}, [weights](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * (*weights)[i];
  });
}

#define SMG_INSTANTIATE_AD(T)                                                                          \
  template class Var<T>;                                                                               \
  template Var<T> make_op(Tensor<T>, const std::vector<Var<T>>&,                                        \
                          std::type_identity_t<std::function<void(Node<T>&)>>);                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvOptions);                    \
  template Var<T> instance_norm(const Var<T>&, double);                                                \
  template Var<T> relu(const Var<T>&);                                                                 \
  template Var<T> leaky_relu(const Var<T>&, double);                                                   \
  template Var<T> tanh(const Var<T>&);                                                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> scale(const Var<T>&, double);                                                        \
  template Var<T> mul_const(const Var<T>&, const Tensor<T>&);                                          \
  template Var<T> upsample_nearest2x(const Var<T>&);                                                   \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                         \
  template Var<T> dropout(const Var<T>&, double, std::mt19937_64&);                                    \
  template Var<T> max_pool2x2(const Var<T>&);                                                          \
  template Var<T> gram(const Var<T>&);                                                                 \
  template Var<T> detach(const Var<T>&);                                                               \
  template Var<T> mean_abs_diff(const Var<T>&, const Var<T>&);                                         \
  template Var<T> weighted_mean_abs_diff(const Var<T>&, const Var<T>&, const Tensor<T>&);              \
  template Var<T> mean_square_to(const Var<T>&, double);                                               \
  template Var<T> mean_square_diff(const Var<T>&, const Var<T>&);                                      \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);

SMG_INSTANTIATE_AD(float)
SMG_INSTANTIATE_AD(double)

}  // namespace smg::ad
