#include "bodyvox/gradnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bodyvox::gradnet {

std::size_t element_count(std::span<const int> shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorCode::invalid_argument, "negative tensor dimension");
    n *= std::size_t(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)) {
  data.assign(element_count(shape), fill);
}

Var Tape::constant(Tensor t) {
  require(t.data.size() == element_count(t.shape), ErrorCode::dim_mismatch, "tensor data does not match its shape");
  nodes_.push_back({std::move(t), {}, {}, {}, false});
  return {int(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor t) {
  const Var v = constant(std::move(t));
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::record(Tensor value, std::vector<int> inputs, Adjoint adjoint) {
  bool needs = false;
  for (int i : inputs) needs = needs || nodes_[std::size_t(i)].needs_grad;
  nodes_.push_back({std::move(value), {}, std::move(inputs), needs ? std::move(adjoint) : Adjoint{}, needs});
  return {int(nodes_.size()) - 1};
}

void Tape::backward(Var out) {
  require(out.id >= 0 && std::size_t(out.id) < nodes_.size(), ErrorCode::invalid_argument, "unknown tape variable");
  require(nodes_[std::size_t(out.id)].value.size() == 1, ErrorCode::invalid_argument,
          "backward needs a scalar output");
  for (auto& n : nodes_) {
    if (n.needs_grad) n.grad.assign(n.value.size(), 0.0);
    else n.grad.clear();
  }
  if (!nodes_[std::size_t(out.id)].needs_grad) return;
  nodes_[std::size_t(out.id)].grad[0] = 1.0;
  for (int i = out.id; i >= 0; --i) {
    const auto& n = nodes_[std::size_t(i)];
    if (n.adjoint) n.adjoint(*this, i);
  }
}

namespace {

const Tensor& val(const Tape& t, Var v) { return t.value(v); }

// Runs f on the gradient of input `id` when that input takes one.
template <typename F>
void accumulate(Tape& t, int id, F&& f) {
  if (!t.needs_grad(id)) return;
  f(t.grad_mut(id));
}

std::size_t product(const std::vector<int>& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= std::size_t(s[i]);
  return n;
}

// Elementwise ops keep the output and derive the local slope from it.
template <typename Fwd, typename Slope>
Var elementwise(Tape& t, Var x, Fwd fwd, Slope slope) {
  Tensor y = val(t, x);
  for (auto& v : y.data) v = fwd(v);
  const int in = x.id;
  return t.record(std::move(y), {in}, [in, slope](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& y = tp.value_of(self).data;
    const auto& xv = tp.value_of(in).data;
    accumulate(tp, in, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * slope(xv[i], y[i]);
    });
  });
}

}  // namespace

Var sigmoid(Tape& t, Var x) {
  return elementwise(
      t, x, [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Tape& t, Var x) {
  return elementwise(t, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Tape& t, Var x) {
  return elementwise(t, x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var scale(Tape& t, Var x, double s) {
  return elementwise(t, x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add(Tape& t, Var a, Var b) {
  require(val(t, a).shape == val(t, b).shape, ErrorCode::dim_mismatch, "add: shapes differ");
  Tensor y = val(t, a);
  const auto& bv = val(t, b).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return t.record(std::move(y), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    for (int in : {ia, ib})
      accumulate(tp, in, [&](std::vector<double>& gx) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
  });
}

Var sum(Tape& t, Var x) {
  const auto& xv = val(t, x).data;
  Tensor y({1});
  y.data[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
  const int in = x.id;
  return t.record(std::move(y), {in}, [in](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0];
    accumulate(tp, in, [&](std::vector<double>& gx) {
      for (auto& v : gx) v += g;
    });
  });
}

Var reshape(Tape& t, Var x, std::vector<int> shape) {
  require(element_count(shape) == val(t, x).size(), ErrorCode::dim_mismatch, "reshape: element count changes");
  Tensor y = val(t, x);
  y.shape = std::move(shape);
  const int in = x.id;
  return t.record(std::move(y), {in}, [in](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    accumulate(tp, in, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Var affine(Tape& t, Var x, Var w, Var b) {
  const auto& X = val(t, x);
  const auto& W = val(t, w);
  const auto& B = val(t, b);
  require(X.rank() == 1 && W.rank() == 2 && B.rank() == 1 && W.dim(1) == X.dim(0) && B.dim(0) == W.dim(0),
          ErrorCode::dim_mismatch, "affine: expects x [n], W [m, n], b [m]");
  const std::size_t m = std::size_t(W.dim(0)), n = std::size_t(W.dim(1));
  Tensor y({int(m)});
  for (std::size_t i = 0; i < m; ++i) {
    double s = B.data[i];
    for (std::size_t j = 0; j < n; ++j) s += W.data[i * n + j] * X.data[j];
    y.data[i] = s;
  }
  const int ix = x.id, iw = w.id, ib = b.id;
  return t.record(std::move(y), {ix, iw, ib}, [ix, iw, ib, m, n](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& Xv = tp.value_of(ix).data;
    const auto& Wv = tp.value_of(iw).data;
    accumulate(tp, ix, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[j] += Wv[i * n + j] * g[i];
    });
    accumulate(tp, iw, [&](std::vector<double>& gw) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += g[i] * Xv[j];
    });
    accumulate(tp, ib, [&](std::vector<double>& gb) {
      for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
    });
  });
}

namespace {

// Shared geometry of same-padded convolutions over 2 or 3 spatial axes. The
// spatial extent is (d, h, w) with d = 1 for images.
struct ConvShape {
  int c = 0, o = 0, k = 0, d = 1, h = 0, w = 0, kd = 1;
  std::size_t plane() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
  std::size_t kernel() const { return std::size_t(kd) * std::size_t(k) * std::size_t(k); }
};

// Calls f(out_offset, in_offset, count, weight_index) for every contiguous
// run of the x axis that a kernel tap touches.
template <typename F>
void for_each_tap(const ConvShape& s, F&& f) {
  const int r = s.k / 2, rd = s.kd / 2;
  for (int o = 0; o < s.o; ++o)
    for (int c = 0; c < s.c; ++c)
      for (int a = 0; a < s.kd; ++a)
        for (int ky = 0; ky < s.k; ++ky)
          for (int kx = 0; kx < s.k; ++kx) {
            const int dz = a - rd, dy = ky - r, dx = kx - r;
            const std::size_t wi =
                ((std::size_t(o) * std::size_t(s.c) + std::size_t(c)) * std::size_t(s.kd) + std::size_t(a)) *
                    std::size_t(s.k) * std::size_t(s.k) +
                std::size_t(ky) * std::size_t(s.k) + std::size_t(kx);
            const int x0 = std::max(0, -dx), x1 = std::min(s.w, s.w - dx);
            if (x1 <= x0) continue;
            for (int z = std::max(0, -dz); z < std::min(s.d, s.d - dz); ++z)
              for (int y = std::max(0, -dy); y < std::min(s.h, s.h - dy); ++y) {
                const std::size_t out = ((std::size_t(o) * std::size_t(s.d) + std::size_t(z)) * std::size_t(s.h) +
                                         std::size_t(y)) * std::size_t(s.w) + std::size_t(x0);
                const std::size_t in = ((std::size_t(c) * std::size_t(s.d) + std::size_t(z + dz)) * std::size_t(s.h) +
                                        std::size_t(y + dy)) * std::size_t(s.w) + std::size_t(x0 + dx);
                f(out, in, std::size_t(x1 - x0), wi);
              }
          }
}

Var conv(Tape& t, Var x, Var w, Var b, const ConvShape& s, std::vector<int> out_shape) {
  const auto& X = val(t, x).data;
  const auto& W = val(t, w).data;
  const auto& B = val(t, b).data;
  Tensor y(std::move(out_shape));
  for (int o = 0; o < s.o; ++o)
    std::fill_n(y.data.begin() + std::ptrdiff_t(std::size_t(o) * s.plane()), s.plane(), B[std::size_t(o)]);
  for_each_tap(s, [&](std::size_t out, std::size_t in, std::size_t n, std::size_t wi) {
    const double wv = W[wi];
    double* yo = y.data.data() + out;
    const double* xi = X.data() + in;
    for (std::size_t i = 0; i < n; ++i) yo[i] += wv * xi[i];
  });
  const int ix = x.id, iw = w.id, ib = b.id;
  return t.record(std::move(y), {ix, iw, ib}, [ix, iw, ib, s](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& Xv = tp.value_of(ix).data;
    const auto& Wv = tp.value_of(iw).data;
    const bool gx_on = tp.needs_grad(ix), gw_on = tp.needs_grad(iw);
    std::vector<double>* gx = gx_on ? &tp.grad_mut(ix) : nullptr;
    std::vector<double>* gw = gw_on ? &tp.grad_mut(iw) : nullptr;
    if (gx_on || gw_on) {
      for_each_tap(s, [&](std::size_t out, std::size_t in, std::size_t n, std::size_t wi) {
        const double* go = g.data() + out;
        if (gx) {
          const double wv = Wv[wi];
          double* gi = gx->data() + in;
          for (std::size_t i = 0; i < n; ++i) gi[i] += wv * go[i];
        }
        if (gw) {
          const double* xi = Xv.data() + in;
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += go[i] * xi[i];
          (*gw)[wi] += acc;
        }
      });
    }
    accumulate(tp, ib, [&](std::vector<double>& gb) {
      for (int o = 0; o < s.o; ++o) {
        const double* go = g.data() + std::size_t(o) * s.plane();
        gb[std::size_t(o)] += std::accumulate(go, go + s.plane(), 0.0);
      }
    });
  });
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b) {
  const auto& X = val(t, x);
  const auto& W = val(t, w);
  const auto& B = val(t, b);
  require(X.rank() == 3 && W.rank() == 4 && B.rank() == 1, ErrorCode::dim_mismatch,
          "conv2d: expects x [C, H, W], w [O, C, k, k], b [O]");
  require(W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3) && W.dim(2) % 2 == 1 && B.dim(0) == W.dim(0),
          ErrorCode::dim_mismatch, "conv2d: inconsistent shapes");
  ConvShape s{X.dim(0), W.dim(0), W.dim(2), 1, X.dim(1), X.dim(2), 1};
  return conv(t, x, w, b, s, {s.o, s.h, s.w});
}

Var conv3d(Tape& t, Var x, Var w, Var b) {
  const auto& X = val(t, x);
  const auto& W = val(t, w);
  const auto& B = val(t, b);
  require(X.rank() == 4 && W.rank() == 5 && B.rank() == 1, ErrorCode::dim_mismatch,
          "conv3d: expects x [C, D, H, W], w [O, C, k, k, k], b [O]");
  require(W.dim(1) == X.dim(0) && W.dim(2) == W.dim(3) && W.dim(3) == W.dim(4) && W.dim(2) % 2 == 1 &&
              B.dim(0) == W.dim(0),
          ErrorCode::dim_mismatch, "conv3d: inconsistent shapes");
  ConvShape s{X.dim(0), W.dim(0), W.dim(2), X.dim(1), X.dim(2), X.dim(3), W.dim(2)};
  return conv(t, x, w, b, s, {s.o, s.d, s.h, s.w});
}

namespace {

// Output built from chosen input entries; the adjoint scatters back.
Var gather(Tape& t, Var x, std::vector<int> shape, std::vector<std::size_t> src) {
  const auto& xv = val(t, x).data;
  Tensor y(std::move(shape));
  for (std::size_t i = 0; i < src.size(); ++i) y.data[i] = xv[src[i]];
  const int in = x.id;
  return t.record(std::move(y), {in}, [in, src = std::move(src)](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    accumulate(tp, in, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
    });
  });
}

}  // namespace

Var max_reduce(Tape& t, Var x, int axis) {
  const auto& X = val(t, x);
  require(axis >= 0 && axis < X.rank(), ErrorCode::invalid_argument, "max_reduce: axis out of range");
  const std::size_t outer = product(X.shape, 0, std::size_t(axis));
  const std::size_t n = std::size_t(X.dim(axis));
  const std::size_t inner = product(X.shape, std::size_t(axis) + 1, X.shape.size());
  require(n > 0, ErrorCode::invalid_argument, "max_reduce: empty axis");
  std::vector<int> shape = X.shape;
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  std::vector<std::size_t> src(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = (o * n) * inner + i;
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t at = (o * n + k) * inner + i;
        if (X.data[at] > X.data[best]) best = at;
      }
      src[o * inner + i] = best;
    }
  return gather(t, x, std::move(shape), std::move(src));
}

Var max_pool2d(Tape& t, Var x, int k) {
  const auto& X = val(t, x);
  require(X.rank() == 3 && k > 0 && X.dim(1) % k == 0 && X.dim(2) % k == 0, ErrorCode::dim_mismatch,
          "max_pool2d: expects [C, H, W] with H and W divisible by k");
  const int c = X.dim(0), h = X.dim(1) / k, w = X.dim(2) / k;
  std::vector<std::size_t> src(std::size_t(c) * std::size_t(h) * std::size_t(w));
  auto at = [&](int ch, int y, int x_) {
    return (std::size_t(ch) * std::size_t(X.dim(1)) + std::size_t(y)) * std::size_t(X.dim(2)) + std::size_t(x_);
  };
  std::size_t i = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x_ = 0; x_ < w; ++x_, ++i) {
        std::size_t best = at(ch, y * k, x_ * k);
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) {
            const std::size_t p = at(ch, y * k + a, x_ * k + b);
            if (X.data[p] > X.data[best]) best = p;
          }
        src[i] = best;
      }
  return gather(t, x, {c, h, w}, std::move(src));
}

Var upsample(Tape& t, Var x, int factor) {
  const auto& X = val(t, x);
  require(factor >= 1 && X.rank() >= 2, ErrorCode::invalid_argument, "upsample: needs rank >= 2 and factor >= 1");
  std::vector<int> shape = X.shape;
  for (std::size_t a = 1; a < shape.size(); ++a) shape[a] *= factor;
  const std::size_t total = element_count(shape);
  std::vector<std::size_t> src(total);
  std::vector<int> idx(shape.size(), 0);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t s = 0;
    for (std::size_t a = 0; a < shape.size(); ++a)
      s = s * std::size_t(X.shape[a]) + std::size_t(a == 0 ? idx[a] : idx[a] / factor);
    src[i] = s;
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return gather(t, x, std::move(shape), std::move(src));
}

Var concat(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::invalid_argument, "concat: no inputs");
  std::vector<int> shape = val(t, parts[0]).shape;
  require(!shape.empty(), ErrorCode::invalid_argument, "concat: scalar input");
  int lead = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    const auto& s = val(t, p).shape;
    require(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1),
            ErrorCode::dim_mismatch, "concat: trailing shapes differ");
    lead += s[0];
    ids.push_back(p.id);
  }
  shape[0] = lead;
  Tensor y(shape);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& v = val(t, p).data;
    std::copy(v.begin(), v.end(), y.data.begin() + std::ptrdiff_t(off));
    off += v.size();
  }
  return t.record(std::move(y), ids, [ids](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    std::size_t o = 0;
    for (int in : ids) {
      const std::size_t n = tp.value_of(in).size();
      accumulate(tp, in, [&](std::vector<double>& gx) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[o + i];
      });
      o += n;
    }
  });
}

namespace {

Var loss_node(Tape& t, Var x, losskit::LossValue lv) {
  Tensor y({1});
  y.data[0] = lv.value;
  const int in = x.id;
  return t.record(std::move(y), {in}, [in, grad = std::move(lv.grad)](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0];
    accumulate(tp, in, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += g * grad[i];
    });
  });
}

}  // namespace

Var mse(Tape& t, Var pred, std::span<const double> target) {
  return loss_node(t, pred, losskit::heatmap_mse(val(t, pred).data, target));
}

Var softmax_ce(Tape& t, Var logits, std::span<const int> labels) {
  const auto& x = val(t, logits);
  require(x.rank() >= 1, ErrorCode::invalid_argument, "softmax_ce: needs a channel axis");
  return loss_node(t, logits, losskit::softmax_ce(x.data, labels, x.dim(0)));
}

Var bce_logits(Tape& t, Var logits, std::span<const std::uint8_t> target) {
  return loss_node(t, logits, losskit::voxel_bce(val(t, logits).data, target));
}

}  // namespace bodyvox::gradnet
