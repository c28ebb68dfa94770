#include "rescal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "rescal/errors.hpp"
#include "rescal/gradcheck.hpp"

namespace rescal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                     " differ");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const bool tracked = needs_grad({&x});
  Tensor out = make_output(x.shape(), tracked);
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  record_op(tracked, {x}, out, [x, out, deriv]() mutable {
    auto g = out.grad();
    auto xs = x.data();
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += g[i] * deriv(xs[i]);
  });
  return out;
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

// cols is [cin*kh*kw, ho*wo] row-major.
// Output columns [lo, hi) of a kernel tap land inside the image horizontally.
void valid_columns(const ConvGeometry& g, std::size_t kj, std::size_t& lo, std::size_t& hi) {
  const long pad = static_cast<long>(g.pad), st = static_cast<long>(g.stride), w = static_cast<long>(g.w);
  const long wo = static_cast<long>(g.wo), off = static_cast<long>(kj) - pad;
  long l = off >= 0 ? 0 : (-off + st - 1) / st;
  long h = (w - 1 - off) < 0 ? 0 : (w - 1 - off) / st + 1;
  l = std::min(l, wo);
  h = std::clamp(h, l, wo);
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        std::size_t lo = 0, hi = 0;
        valid_columns(g, kj, lo, hi);
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          double* dst = row + oi * g.wo;
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
          std::fill(dst, dst + lo, 0.0);
          const std::size_t base = lo * g.stride + kj - g.pad;  // >= 0 for lo in range
          if (g.stride == 1) {
            std::copy(src + base, src + base + (hi - lo), dst + lo);
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = src[base + (oj - lo) * g.stride];
          }
          std::fill(dst + hi, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        std::size_t lo = 0, hi = 0;
        valid_columns(g, kj, lo, hi);
        if (lo >= hi) continue;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          double* dst = img + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
          const double* src = row + oi * g.wo;
          const std::size_t base = lo * g.stride + kj - g.pad;
          for (std::size_t oj = lo; oj < hi; ++oj) dst[base + (oj - lo) * g.stride] += src[oj];
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool tracked = needs_grad({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  auto as = a.data(), bs = b.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  record_op(tracked, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool tracked = needs_grad({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  auto as = a.data(), bs = b.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] - bs[i];
  record_op(tracked, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool tracked = needs_grad({&a, &b});
  Tensor out = make_output(a.shape(), tracked);
  auto as = a.data(), bs = b.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * bs[i];
  record_op(tracked, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    auto as = a.data(), bs = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor sum(const Tensor& x) {
  const bool tracked = needs_grad({&x});
  Tensor out = make_output({1}, tracked);
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.mutable_data()[0] = s;
  record_op(tracked, {x}, out, [x, out]() mutable {
    const double g = out.grad()[0];
    for (double& gx : x.grad_mut()) gx += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_product(shape) != x.size()) {
    throw ShapeError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const bool tracked = needs_grad({&x});
  Tensor out = Tensor::create(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), tracked);
  record_op(tracked, {x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  for (double v : x.data()) note_kink_distance(std::abs(v));
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, logistic, [](double v) {
    const double s = logistic(v);
    return s * (1.0 - s);
  });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }, logistic);
}

Tensor erf(const Tensor& x) {
  return unary(
      x, [](double v) { return std::erf(v); },
      [](double v) { return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-v * v); });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, Conv2dOptions options) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (options.stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.pad = options.padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(g.cin));
  }
  if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad || g.kh == 0 || g.kw == 0) {
    throw ShapeError("conv2d: kernel " + shape_string(weight.shape()) + " does not fit padded input " +
                     shape_string(input.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias->shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const bool tracked = needs_grad({&input, &weight, bias ? &*bias : nullptr});
  Tensor out = make_output({g.n, g.cout, g.ho, g.wo}, tracked);

  const std::size_t k = g.patch(), p = g.positions();
  std::vector<double> cols(k * p);
  ConstMapMat wmat(weight.data().data(), g.cout, k);
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(input.data().data() + s * g.cin * g.h * g.w, g, cols.data());
    MapMat omat(out.mutable_data().data() + s * g.cout * p, g.cout, p);
    omat.noalias() = wmat * ConstMapMat(cols.data(), k, p);
    if (bias) {
      for (std::size_t c = 0; c < g.cout; ++c) omat.row(c).array() += bias->data()[c];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  record_op(tracked, inputs, out, [input, weight, bias, out, g]() mutable {
    const std::size_t k = g.patch(), p = g.positions();
    std::vector<double> cols(k * p);
    std::vector<double> dcols(k * p);
    auto gout = out.grad();
    ConstMapMat wmat(weight.data().data(), g.cout, k);
    for (std::size_t s = 0; s < g.n; ++s) {
      ConstMapMat go(gout.data() + s * g.cout * p, g.cout, p);
      if (weight.requires_grad()) {
        im2col(input.data().data() + s * g.cin * g.h * g.w, g, cols.data());
        MapMat gw(weight.grad_mut().data(), g.cout, k);
        gw.noalias() += go * ConstMapMat(cols.data(), k, p).transpose();
      }
      if (input.requires_grad()) {
        MapMat dc(dcols.data(), k, p);
        dc.noalias() = wmat.transpose() * go;
        col2im_add(dcols.data(), g, input.grad_mut().data() + s * g.cin * g.h * g.w);
      }
      if (bias && bias->requires_grad()) {
        auto gb = bias->grad_mut();
        for (std::size_t c = 0; c < g.cout; ++c) gb[c] += go.row(c).sum();
      }
    }
  });
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  NormMode mode) {
  require_rank(input, 4, "batch_norm");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batch_norm: parameter width does not match " + std::to_string(c) + " channels");
  }
  if (!(state.eps > 0.0)) throw DomainError("batch_norm: eps must be positive");
  const std::size_t m = n * hw;
  if (m == 0) throw ShapeError("batch_norm: empty input");

  std::vector<double> mu(c), inv_std(c);
  auto xs = input.data();
  if (mode == NormMode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* px = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += px[i];
      }
      const double mean = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* px = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (px[i] - mean) * (px[i] - mean);
      }
      const double var = v / static_cast<double>(m);
      mu[ch] = mean;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  const bool tracked = needs_grad({&input, &gamma, &beta});
  Tensor out = make_output(input.shape(), tracked);
  auto ys = out.mutable_data();
  auto gs = gamma.data(), bs = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* px = xs.data() + (b * c + ch) * hw;
      double* py = ys.data() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) py[i] = gs[ch] * (px[i] - mu[ch]) * inv_std[ch] + bs[ch];
    }
  }

  record_op(tracked, {input, gamma, beta}, out, [input, gamma, beta, out, mu, inv_std, n, c, hw, m, mode]() mutable {
    auto gy = out.grad();
    auto xs = input.data();
    auto gs = gamma.data();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* px = xs.data() + (b * c + ch) * hw;
        const double* pg = gy.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy[ch] += pg[i];
          sum_dy_xhat[ch] += pg[i] * (px[i] - mu[ch]) * inv_std[ch];
        }
      }
    }
    if (gamma.requires_grad()) {
      auto gg = gamma.grad_mut();
      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
    }
    if (beta.requires_grad()) {
      auto gb = beta.grad_mut();
      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
    }
    if (!input.requires_grad()) return;
    auto gx = input.grad_mut();
    const double md = static_cast<double>(m);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* px = xs.data() + (b * c + ch) * hw;
        const double* pg = gy.data() + (b * c + ch) * hw;
        double* pgx = gx.data() + (b * c + ch) * hw;
        if (mode == NormMode::eval) {
          for (std::size_t i = 0; i < hw; ++i) pgx[i] += pg[i] * gs[ch] * inv_std[ch];
          continue;
        }
        const double k = gs[ch] * inv_std[ch] / md;
        for (std::size_t i = 0; i < hw; ++i) {
          const double xhat = (px[i] - mu[ch]) * inv_std[ch];
          pgx[i] += k * (md * pg[i] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
        }
      }
    }
  });
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  const bool tracked = needs_grad({&input});
  Tensor out = make_output({n, c}, tracked);
  auto xs = input.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += xs[i * hw + j];
    ys[i] = s / static_cast<double>(hw);
  }
  record_op(tracked, {input}, out, [input, out, n, c, hw]() mutable {
    auto g = out.grad();
    auto gx = input.grad_mut();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g[i] * inv;
    }
  });
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "fully_connected input");
  require_rank(weight, 2, "fully_connected weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  if (weight.dim(1) != cin || bias.rank() != 1 || bias.dim(0) != cout) {
    throw ShapeError("fully_connected: input " + shape_string(input.shape()) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const bool tracked = needs_grad({&input, &weight, &bias});
  Tensor out = make_output({n, cout}, tracked);
  MapMat y(out.mutable_data().data(), n, cout);
  y.noalias() = ConstMapMat(input.data().data(), n, cin) * ConstMapMat(weight.data().data(), cout, cin).transpose();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < cout; ++o) y(r, o) += bias.data()[o];
  }
  record_op(tracked, {input, weight, bias}, out, [input, weight, bias, out, n, cin, cout]() mutable {
    ConstMapMat g(out.grad().data(), n, cout);
    if (input.requires_grad()) {
      MapMat gx(input.grad_mut().data(), n, cin);
      gx.noalias() += g * ConstMapMat(weight.data().data(), cout, cin);
    }
    if (weight.requires_grad()) {
      MapMat gw(weight.grad_mut().data(), cout, cin);
      gw.noalias() += g.transpose() * ConstMapMat(input.data().data(), n, cin);
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_mut();
      for (std::size_t o = 0; o < cout; ++o) gb[o] += g.col(o).sum();
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  std::vector<int> lbl(labels.begin(), labels.end());
  for (int l : lbl) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw DomainError("cross_entropy: label out of range");
  }
  const bool tracked = needs_grad({&logits});
  Tensor out = make_output({1}, tracked);
  auto xs = logits.data();
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xs.data() + r * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[lbl[r]];
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
  }
  out.mutable_data()[0] = total / static_cast<double>(n);
  record_op(tracked, {logits}, out, [logits, out, probs, lbl, n, k]() mutable {
    const double g = out.grad()[0] / static_cast<double>(n);
    auto gx = logits.grad_mut();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double target = static_cast<std::size_t>(lbl[r]) == j ? 1.0 : 0.0;
        gx[r * k + j] += g * (probs[r * k + j] - target);
      }
    }
  });
  return out;
}

}  // namespace rescal
