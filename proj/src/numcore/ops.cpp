#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "imusic/dsp.hpp"
#include "internal.hpp"

namespace imusic::nc {
inline namespace IMUSIC_NC_ABI {

namespace {

using NodePtr = std::shared_ptr<Node>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void check_finite(const char* op, std::span<const real> v) {
  for (real x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite result");
  }
}

Tensor finish(const char* op, Shape shape, std::vector<real> values, bool track) {
  check_finite(op, values);
  return make_result(std::move(shape), std::move(values), track);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

void require_2d(const char* op, const Tensor& t) {
  require(t.defined() && t.ndim() == 2,
          std::string(op) + ": expected a 2-D tensor, got " +
              (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

std::string mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape());
}

// How b is broadcast against a.
enum class Bcast { kSame, kScalar, kTrailing };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kScalar;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() <= sa.size() &&
      std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    return Bcast::kTrailing;
  }
  throw UsageError(mismatch(op, a, b));
}

// Reduces a gradient over a's elements to b's layout.
std::vector<real> reduce_to(Bcast kind, std::span<const real> g, std::size_t nb) {
  if (kind == Bcast::kSame) return {g.begin(), g.end()};
  std::vector<real> out(nb, real(0));
  for (std::size_t i = 0; i < g.size(); ++i) out[i % nb] += g[i];
  return out;
}

template <class Fwd, class Dfn>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Dfn dfn) {
  const auto x = a.data();
  std::vector<real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const bool track = tracking({&a});
  Tensor out = finish(op, a.shape(), std::move(y), track);
  if (track) {
    NodePtr an = a.handle();
    NodePtr on = out.handle();
    Tape::current().record([an, on, dfn] {
      if (on->grad.empty()) return;
      std::vector<real> g(an->data.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = on->grad[i] * dfn(an->data[i], on->data[i]);
      an->accumulate(g);
    });
  }
  return out;
}

}  // namespace

// ---- contraction -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  require(a.dim(1) == b.dim(0), mismatch("matmul", a, b));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<real> y(static_cast<std::size_t>(m) * n);
  MapR(y.data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  const bool track = tracking({&a, &b});
  Tensor out = finish("matmul", {m, n}, std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    Tape::current().record([an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      CMapR g(on->grad.data(), m, n);
      if (an->requires_grad) {
        MapR(an->grad_buffer().data(), m, k).noalias() += g * CMapR(bn->data.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        MapR(bn->grad_buffer().data(), k, n).noalias() += CMapR(an->data.data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_2d("matmul_bt", a);
  require_2d("matmul_bt", b);
  require(a.dim(1) == b.dim(1), mismatch("matmul_bt", a, b));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<real> y(static_cast<std::size_t>(m) * n);
  MapR(y.data(), m, n).noalias() =
      CMapR(a.data().data(), m, k) * CMapR(b.data().data(), n, k).transpose();
  const bool track = tracking({&a, &b});
  Tensor out = finish("matmul_bt", {m, n}, std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    Tape::current().record([an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      CMapR g(on->grad.data(), m, n);
      if (an->requires_grad) {
        MapR(an->grad_buffer().data(), m, k).noalias() += g * CMapR(bn->data.data(), n, k);
      }
      if (bn->requires_grad) {
        MapR(bn->grad_buffer().data(), n, k).noalias() += g.transpose() * CMapR(an->data.data(), m, k);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_2d("linear", x);
  require_2d("linear", w);
  require(x.dim(1) == w.dim(1), mismatch("linear", x, w));
  const int n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  if (b.defined()) require(static_cast<int>(b.numel()) == outd, mismatch("linear", w, b));
  std::vector<real> y(static_cast<std::size_t>(n) * outd);
  MapR ym(y.data(), n, outd);
  ym.noalias() = CMapR(x.data().data(), n, in) * CMapR(w.data().data(), outd, in).transpose();
  if (b.defined()) {
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(b.data().data(), outd);
  }
  const bool track = tracking({&x, &w, &b});
  Tensor out = finish("linear", {n, outd}, std::move(y), track);
  if (track) {
    NodePtr xn = x.handle(), wn = w.handle(), on = out.handle();
    NodePtr bnode = b.defined() ? b.handle() : nullptr;
    Tape::current().record([xn, wn, bnode, on, n, in, outd] {
      if (on->grad.empty()) return;
      CMapR g(on->grad.data(), n, outd);
      if (xn->requires_grad) {
        MapR(xn->grad_buffer().data(), n, in).noalias() += g * CMapR(wn->data.data(), outd, in);
      }
      if (wn->requires_grad) {
        MapR(wn->grad_buffer().data(), outd, in).noalias() += g.transpose() * CMapR(xn->data.data(), n, in);
      }
      if (bnode && bnode->requires_grad) {
        Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(bnode->grad_buffer().data(), outd) +=
            g.colwise().sum();
      }
    });
  }
  return out;
}

// ---- elementwise binary ----------------------------------------------------

namespace {

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const char* op, const Tensor& a, const Tensor& b, BinOp kind) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  const Bcast bc = broadcast_kind(op, a, b);
  const auto xa = a.data();
  const auto xb = b.data();
  const std::size_t nb = xb.size();
  std::vector<real> y(xa.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const real bv = xb[bc == Bcast::kSame ? i : i % nb];
    switch (kind) {
      case BinOp::kAdd: y[i] = xa[i] + bv; break;
      case BinOp::kSub: y[i] = xa[i] - bv; break;
      case BinOp::kMul: y[i] = xa[i] * bv; break;
    }
  }
  const bool track = tracking({&a, &b});
  Tensor out = finish(op, a.shape(), std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    Tape::current().record([an, bn, on, bc, kind] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      const std::size_t nb = bn->data.size();
      if (an->requires_grad) {
        if (kind == BinOp::kMul) {
          std::vector<real> ga(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] * bn->data[bc == Bcast::kSame ? i : i % nb];
          }
          an->accumulate(ga);
        } else {
          an->accumulate(g);
        }
      }
      if (bn->requires_grad) {
        std::vector<real> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case BinOp::kAdd: gb[i] = g[i]; break;
            case BinOp::kSub: gb[i] = -g[i]; break;
            case BinOp::kMul: gb[i] = g[i] * an->data[i]; break;
          }
        }
        bn->accumulate(reduce_to(bc, gb, nb));
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", a, b, BinOp::kMul); }

Tensor scale(const Tensor& a, real s) {
  return unary("scale", a, [s](real x) { return x * s; }, [s](real, real) { return s; });
}

Tensor add_scalar(const Tensor& a, real s) {
  return unary("add_scalar", a, [s](real x) { return x + s; }, [](real, real) { return real(1); });
}

// ---- elementwise unary -----------------------------------------------------

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Tensor log(const Tensor& a) {
  for (real x : a.data()) {
    if (!(x > 0)) throw NumericError("log: non-positive input");
  }
  return unary("log", a, [](real x) { return std::log(x); }, [](real x, real) { return 1 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (real x : a.data()) {
    if (x < 0) throw NumericError("sqrt: negative input");
  }
  return unary("sqrt", a, [](real x) { return std::sqrt(x); },
               [](real, real y) { return y > 0 ? real(0.5) / y : real(0); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](real x) { return std::tanh(x); },
               [](real, real y) { return 1 - y * y; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](real x) { return std::sin(x); }, [](real x, real) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](real x) { return std::cos(x); }, [](real x, real) { return -std::sin(x); });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr real c = real(0.7978845608028654);  // sqrt(2/pi)
  constexpr real k = real(0.044715);
  return unary(
      "gelu", a,
      [](real x) { return real(0.5) * x * (1 + std::tanh(c * (x + k * x * x * x))); },
      [](real x, real) {
        const real u = c * (x + k * x * x * x);
        const real t = std::tanh(u);
        const real du = c * (1 + 3 * k * x * x);
        return real(0.5) * (1 + t) + real(0.5) * x * (1 - t * t) * du;
      });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](real x) { return x / (1 + std::exp(-x)); },
      [](real x, real) {
        const real s = 1 / (1 + std::exp(-x));
        return s * (1 + x * (1 - s));
      });
}

Tensor clamp(const Tensor& a, real lo, real hi) {
  return unary("clamp", a, [lo, hi](real x) { return std::clamp(x, lo, hi); },
               [lo, hi](real x, real) { return (x >= lo && x <= hi) ? real(1) : real(0); });
}

// ---- normalization ---------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const int d = a.dim(-1);
  const std::size_t rows = a.numel() / static_cast<std::size_t>(d);
  const auto x = a.data();
  std::vector<real> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x.data() + r * d;
    real* yr = y.data() + r * d;
    const real mx = *std::max_element(xr, xr + d);
    real s = 0;
    for (int j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (int j = 0; j < d; ++j) yr[j] /= s;
  }
  const bool track = tracking({&a});
  Tensor out = finish("softmax", a.shape(), std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, d, rows] {
      if (on->grad.empty()) return;
      std::vector<real> g(on->data.size());
      for (std::size_t r = 0; r < rows; ++r) {
        const real* yr = on->data.data() + r * d;
        const real* gr = on->grad.data() + r * d;
        real dot = 0;
        for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < d; ++j) g[r * d + j] = yr[j] * (gr[j] - dot);
      }
      an->accumulate(g);
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& a) {
  const int d = a.dim(-1);
  const std::size_t rows = a.numel() / static_cast<std::size_t>(d);
  const auto x = a.data();
  std::vector<real> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x.data() + r * d;
    const real mx = *std::max_element(xr, xr + d);
    real s = 0;
    for (int j = 0; j < d; ++j) s += std::exp(xr[j] - mx);
    const real lse = mx + std::log(s);
    for (int j = 0; j < d; ++j) y[r * d + j] = xr[j] - lse;
  }
  const bool track = tracking({&a});
  Tensor out = finish("log_softmax", a.shape(), std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, d, rows] {
      if (on->grad.empty()) return;
      std::vector<real> g(on->data.size());
      for (std::size_t r = 0; r < rows; ++r) {
        const real* yr = on->data.data() + r * d;
        const real* gr = on->grad.data() + r * d;
        real s = 0;
        for (int j = 0; j < d; ++j) s += gr[j];
        for (int j = 0; j < d; ++j) g[r * d + j] = gr[j] - std::exp(yr[j]) * s;
      }
      an->accumulate(g);
    });
  }
  return out;
}

Tensor causal_softmax(const Tensor& scores, int prefix, int window) {
  require_2d("causal_softmax", scores);
  const int t = scores.dim(0);
  const int s = scores.dim(1);
  require(t == s, "causal_softmax: expected square scores, got " + shape_str(scores.shape()));
  auto visible = [prefix, window](int i, int j) {
    if (j > i) return false;
    if (window <= 0) return true;
    return j < prefix || j > i - window;
  };
  const auto x = scores.data();
  std::vector<real> y(x.size(), real(0));
  for (int i = 0; i < t; ++i) {
    const real* xr = x.data() + static_cast<std::size_t>(i) * s;
    real* yr = y.data() + static_cast<std::size_t>(i) * s;
    real mx = -std::numeric_limits<real>::infinity();
    for (int j = 0; j <= i; ++j) {
      if (visible(i, j)) mx = std::max(mx, xr[j]);
    }
    real z = 0;
    for (int j = 0; j <= i; ++j) {
      if (visible(i, j)) z += (yr[j] = std::exp(xr[j] - mx));
    }
    for (int j = 0; j <= i; ++j) yr[j] /= z;
  }
  const bool track = tracking({&scores});
  Tensor out = finish("causal_softmax", scores.shape(), std::move(y), track);
  if (track) {
    NodePtr an = scores.handle(), on = out.handle();
    Tape::current().record([an, on, t, s] {
      if (on->grad.empty()) return;
      std::vector<real> g(on->data.size(), real(0));
      for (int i = 0; i < t; ++i) {
        const real* yr = on->data.data() + static_cast<std::size_t>(i) * s;
        const real* gr = on->grad.data() + static_cast<std::size_t>(i) * s;
        real dot = 0;
        for (int j = 0; j <= i; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j <= i; ++j) g[static_cast<std::size_t>(i) * s + j] = yr[j] * (gr[j] - dot);
      }
      an->accumulate(g);
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const int d = x.dim(-1);
  require(static_cast<int>(gamma.numel()) == d && static_cast<int>(beta.numel()) == d,
          mismatch("layernorm", x, gamma));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<real> y(xv.size());
  std::vector<real> xhat(xv.size());
  std::vector<real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = xv.data() + r * d;
    real mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<real>(d);
    real var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<real>(d);
    rstd[r] = 1 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      const real h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const bool track = tracking({&x, &gamma, &beta});
  Tensor out = finish("layernorm", x.shape(), std::move(y), track);
  if (track) {
    NodePtr xn = x.handle(), gn = gamma.handle(), bn = beta.handle(), on = out.handle();
    Tape::current().record([xn, gn, bn, on, xhat = std::move(xhat), rstd = std::move(rstd), d, rows] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (gn->requires_grad || bn->requires_grad) {
        std::vector<real> gg(static_cast<std::size_t>(d), real(0));
        std::vector<real> gb(static_cast<std::size_t>(d), real(0));
        for (std::size_t r = 0; r < rows; ++r) {
          for (int j = 0; j < d; ++j) {
            gg[j] += g[r * d + j] * xhat[r * d + j];
            gb[j] += g[r * d + j];
          }
        }
        if (gn->requires_grad) gn->accumulate(gg);
        if (bn->requires_grad) bn->accumulate(gb);
      }
      if (xn->requires_grad) {
        std::vector<real> gx(g.size());
        std::vector<real> dh(static_cast<std::size_t>(d));
        for (std::size_t r = 0; r < rows; ++r) {
          real s1 = 0, s2 = 0;
          for (int j = 0; j < d; ++j) {
            dh[j] = g[r * d + j] * gn->data[j];
            s1 += dh[j];
            s2 += dh[j] * xhat[r * d + j];
          }
          const real inv_d = real(1) / static_cast<real>(d);
          for (int j = 0; j < d; ++j) {
            gx[r * d + j] = rstd[r] * (dh[j] - inv_d * s1 - xhat[r * d + j] * inv_d * s2);
          }
        }
        xn->accumulate(gx);
      }
    });
  }
  return out;
}

// ---- convolution -----------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad_left,
              int pad_right) {
  require_2d("conv1d", x);
  require(w.defined() && w.ndim() == 3 && w.dim(1) == x.dim(0), mismatch("conv1d", x, w));
  require(stride >= 1 && pad_left >= 0 && pad_right >= 0, "conv1d: bad stride/padding");
  const int cin = x.dim(0), len = x.dim(1), cout = w.dim(0), k = w.dim(2);
  if (b.defined()) require(static_cast<int>(b.numel()) == cout, mismatch("conv1d", w, b));
  const int padded = len + pad_left + pad_right;
  require(padded >= k, "conv1d: input of length " + std::to_string(len) +
                           " shorter than kernel " + std::to_string(k));
  const int lout = (padded - k) / stride + 1;
  const int ck = cin * k;
  // im2col: cols [lout, cin*k]
  auto cols = std::make_shared<std::vector<real>>(static_cast<std::size_t>(lout) * ck, real(0));
  const auto xv = x.data();
  for (int l = 0; l < lout; ++l) {
    real* row = cols->data() + static_cast<std::size_t>(l) * ck;
    const int base = l * stride - pad_left;
    for (int c = 0; c < cin; ++c) {
      const real* xc = xv.data() + static_cast<std::size_t>(c) * len;
      for (int j = 0; j < k; ++j) {
        const int p = base + j;
        if (p >= 0 && p < len) row[c * k + j] = xc[p];
      }
    }
  }
  std::vector<real> y(static_cast<std::size_t>(cout) * lout);
  MapR ym(y.data(), cout, lout);
  ym.noalias() = CMapR(w.data().data(), cout, ck) * CMapR(cols->data(), lout, ck).transpose();
  if (b.defined()) {
    ym.colwise() += Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>(b.data().data(), cout);
  }
  const bool track = tracking({&x, &w, &b});
  Tensor out = finish("conv1d", {cout, lout}, std::move(y), track);
  if (track) {
    NodePtr xn = x.handle(), wn = w.handle(), on = out.handle();
    NodePtr bnode = b.defined() ? b.handle() : nullptr;
    Tape::current().record([=] {
      if (on->grad.empty()) return;
      CMapR g(on->grad.data(), cout, lout);
      if (wn->requires_grad) {
        MapR(wn->grad_buffer().data(), cout, ck).noalias() += g * CMapR(cols->data(), lout, ck);
      }
      if (bnode && bnode->requires_grad) {
        Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>(bnode->grad_buffer().data(), cout) +=
            g.rowwise().sum();
      }
      if (xn->requires_grad) {
        MatR dcols = g.transpose() * CMapR(wn->data.data(), cout, ck);
        auto gx = xn->grad_buffer();
        for (int l = 0; l < lout; ++l) {
          const int base = l * stride - pad_left;
          for (int c = 0; c < cin; ++c) {
            for (int j = 0; j < k; ++j) {
              const int p = base + j;
              if (p >= 0 && p < len) gx[static_cast<std::size_t>(c) * len + p] += dcols(l, c * k + j);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int crop_left, int crop_right) {
  require_2d("conv_transpose1d", x);
  require(w.defined() && w.ndim() == 3 && w.dim(0) == x.dim(0),
          mismatch("conv_transpose1d", x, w));
  const int cin = x.dim(0), len = x.dim(1), cout = w.dim(1), k = w.dim(2);
  if (b.defined()) require(static_cast<int>(b.numel()) == cout, mismatch("conv_transpose1d", w, b));
  const int full = (len - 1) * stride + k;
  const int lout = full - crop_left - crop_right;
  require(stride >= 1 && crop_left >= 0 && crop_right >= 0 && lout >= 1,
          "conv_transpose1d: bad stride/crop");
  const int ok = cout * k;
  // ycols [len, cout*k] = x^T w
  MatR ycols = CMapR(x.data().data(), cin, len).transpose() * CMapR(w.data().data(), cin, ok);
  std::vector<real> y(static_cast<std::size_t>(cout) * lout, real(0));
  for (int l = 0; l < len; ++l) {
    for (int c = 0; c < cout; ++c) {
      for (int j = 0; j < k; ++j) {
        const int p = l * stride + j - crop_left;
        if (p >= 0 && p < lout) y[static_cast<std::size_t>(c) * lout + p] += ycols(l, c * k + j);
      }
    }
  }
  if (b.defined()) {
    const auto bv = b.data();
    for (int c = 0; c < cout; ++c) {
      for (int p = 0; p < lout; ++p) y[static_cast<std::size_t>(c) * lout + p] += bv[c];
    }
  }
  const bool track = tracking({&x, &w, &b});
  Tensor out = finish("conv_transpose1d", {cout, lout}, std::move(y), track);
  if (track) {
    NodePtr xn = x.handle(), wn = w.handle(), on = out.handle();
    NodePtr bnode = b.defined() ? b.handle() : nullptr;
    Tape::current().record([=] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      MatR dcols = MatR::Zero(len, ok);
      for (int l = 0; l < len; ++l) {
        for (int c = 0; c < cout; ++c) {
          for (int j = 0; j < k; ++j) {
            const int p = l * stride + j - crop_left;
            if (p >= 0 && p < lout) dcols(l, c * k + j) = g[static_cast<std::size_t>(c) * lout + p];
          }
        }
      }
      if (xn->requires_grad) {
        MapR(xn->grad_buffer().data(), cin, len).noalias() +=
            CMapR(wn->data.data(), cin, ok) * dcols.transpose();
      }
      if (wn->requires_grad) {
        MapR(wn->grad_buffer().data(), cin, ok).noalias() += CMapR(xn->data.data(), cin, len) * dcols;
      }
      if (bnode && bnode->requires_grad) {
        auto gb = bnode->grad_buffer();
        for (int c = 0; c < cout; ++c) {
          real s = 0;
          for (int p = 0; p < lout; ++p) s += g[static_cast<std::size_t>(c) * lout + p];
          gb[c] += s;
        }
      }
    });
  }
  return out;
}

// ---- lookup and losses -----------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d("embedding", table);
  const int v = table.dim(0), d = table.dim(1);
  require(!ids.empty(), "embedding: empty id list");
  std::vector<real> y(ids.size() * static_cast<std::size_t>(d));
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= v) {
      throw UsageError("embedding: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(v) + ")");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, y.data() + i * d);
  }
  const bool track = tracking({&table});
  Tensor out = finish("embedding", {static_cast<int>(ids.size()), d}, std::move(y), track);
  if (track) {
    NodePtr tn = table.handle(), on = out.handle();
    std::vector<int> idv(ids.begin(), ids.end());
    Tape::current().record([tn, on, idv = std::move(idv), d] {
      if (on->grad.empty()) return;
      auto g = tn->grad_buffer();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        for (int j = 0; j < d; ++j) {
          g[static_cast<std::size_t>(idv[i]) * d + j] += on->grad[i * d + j];
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  require_2d("cross_entropy", logits);
  const int n = logits.dim(0), v = logits.dim(1);
  require(static_cast<int>(targets.size()) == n,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(n) + " rows");
  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<real>>(x.size());
  double total = 0;
  int count = 0;
  for (int r = 0; r < n; ++r) {
    const real* xr = x.data() + static_cast<std::size_t>(r) * v;
    real* pr = probs->data() + static_cast<std::size_t>(r) * v;
    const real mx = *std::max_element(xr, xr + v);
    real s = 0;
    for (int j = 0; j < v; ++j) s += (pr[j] = std::exp(xr[j] - mx));
    for (int j = 0; j < v; ++j) pr[j] /= s;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v) {
      throw UsageError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(v) + ")");
    }
    total += static_cast<double>(mx + std::log(s) - xr[t]);
    ++count;
  }
  const real loss = count ? static_cast<real>(total / count) : real(0);
  const bool track = tracking({&logits});
  Tensor out = finish("cross_entropy", {1}, {loss}, track);
  if (track) {
    NodePtr ln = logits.handle(), on = out.handle();
    std::vector<int> tv(targets.begin(), targets.end());
    Tape::current().record([ln, on, probs, tv = std::move(tv), n, v, count, ignore_index] {
      if (on->grad.empty() || count == 0) return;
      const real scale_g = on->grad[0] / static_cast<real>(count);
      auto g = ln->grad_buffer();
      for (int r = 0; r < n; ++r) {
        const int t = tv[static_cast<std::size_t>(r)];
        if (t == ignore_index) continue;
        for (int j = 0; j < v; ++j) {
          const std::size_t idx = static_cast<std::size_t>(r) * v + j;
          g[idx] += scale_g * ((*probs)[idx] - (j == t ? real(1) : real(0)));
        }
      }
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(), mismatch("mse", a, b));
  const auto xa = a.data();
  const auto xb = b.data();
  double s = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const double d = static_cast<double>(xa[i]) - static_cast<double>(xb[i]);
    s += d * d;
  }
  const std::size_t n = xa.size();
  const bool track = tracking({&a, &b});
  Tensor out = finish("mse", {1}, {static_cast<real>(s / static_cast<double>(n))}, track);
  if (track) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    Tape::current().record([an, bn, on, n] {
      if (on->grad.empty()) return;
      const real c = 2 * on->grad[0] / static_cast<real>(n);
      std::vector<real> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = c * (an->data[i] - bn->data[i]);
      if (an->requires_grad) an->accumulate(g);
      if (bn->requires_grad) {
        for (auto& x : g) x = -x;
        bn->accumulate(g);
      }
    });
  }
  return out;
}

Tensor l1(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(), mismatch("l1", a, b));
  const auto xa = a.data();
  const auto xb = b.data();
  double s = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) s += std::abs(static_cast<double>(xa[i]) - xb[i]);
  const std::size_t n = xa.size();
  const bool track = tracking({&a, &b});
  Tensor out = finish("l1", {1}, {static_cast<real>(s / static_cast<double>(n))}, track);
  if (track) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    Tape::current().record([an, bn, on, n] {
      if (on->grad.empty()) return;
      const real c = on->grad[0] / static_cast<real>(n);
      std::vector<real> g(n);
      for (std::size_t i = 0; i < n; ++i) {
        const real d = an->data[i] - bn->data[i];
        g[i] = d > 0 ? c : (d < 0 ? -c : real(0));
      }
      if (an->requires_grad) an->accumulate(g);
      if (bn->requires_grad) {
        for (auto& x : g) x = -x;
        bn->accumulate(g);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (real x : a.data()) s += x;
  const bool track = tracking({&a});
  Tensor out = finish("sum", {1}, {static_cast<real>(s)}, track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on] {
      if (on->grad.empty()) return;
      an->accumulate(std::vector<real>(an->data.size(), on->grad[0]));
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), real(1) / static_cast<real>(a.numel()));
}

// ---- structure -------------------------------------------------------------

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<real> y(a.numel());
  MapR(y.data(), c, r) = CMapR(a.data().data(), r, c).transpose();
  const bool track = tracking({&a});
  Tensor out = make_result({c, r}, std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, r, c] {
      if (on->grad.empty()) return;
      MapR(an->grad_buffer().data(), r, c) += CMapR(on->grad.data(), c, r).transpose();
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  const bool track = tracking({&a});
  Tensor out = make_result(std::move(shape), {a.data().begin(), a.data().end()}, track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on] {
      if (!on->grad.empty()) an->accumulate(on->grad);
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int c = parts[0].dim(1);
  int rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_2d("concat_rows", p);
    require(p.dim(1) == c, mismatch("concat_rows", parts[0], p));
    rows += p.dim(0);
    track = track || tracking({&p});
  }
  std::vector<real> y;
  y.reserve(static_cast<std::size_t>(rows) * c);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  Tensor out = make_result({rows, c}, std::move(y), track);
  if (track) {
    std::vector<NodePtr> ns;
    for (const auto& p : parts) ns.push_back(p.handle());
    NodePtr on = out.handle();
    Tape::current().record([ns, on] {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& n : ns) {
        const std::size_t sz = n->data.size();
        if (n->requires_grad) {
          n->accumulate(std::span<const real>(on->grad.data() + off, sz));
        }
        off += sz;
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int r = parts[0].dim(0);
  int cols = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_2d("concat_cols", p);
    require(p.dim(0) == r, mismatch("concat_cols", parts[0], p));
    cols += p.dim(1);
    track = track || tracking({&p});
  }
  std::vector<real> y(static_cast<std::size_t>(r) * cols);
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < r; ++i) {
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * c, c,
                  y.data() + static_cast<std::size_t>(i) * cols + off);
    }
    off += c;
  }
  Tensor out = make_result({r, cols}, std::move(y), track);
  if (track) {
    std::vector<NodePtr> ns;
    for (const auto& p : parts) ns.push_back(p.handle());
    NodePtr on = out.handle();
    Tape::current().record([ns, on, r, cols] {
      if (on->grad.empty()) return;
      int off = 0;
      for (const auto& n : ns) {
        const int c = n->shape[1];
        if (n->requires_grad) {
          auto g = n->grad_buffer();
          for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
              g[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(i) * cols + off + j];
            }
          }
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
  require_2d("slice_rows", a);
  require(0 <= begin && begin < end && end <= a.dim(0),
          "slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") outside " + shape_str(a.shape()));
  const int c = a.dim(1);
  const auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin) * c;
  const auto last = a.data().begin() + static_cast<std::ptrdiff_t>(end) * c;
  const bool track = tracking({&a});
  Tensor out = make_result({end - begin, c}, {first, last}, track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, begin, c] {
      if (on->grad.empty()) return;
      auto g = an->grad_buffer();
      const std::size_t off = static_cast<std::size_t>(begin) * c;
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[off + i] += on->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int begin, int end) {
  require_2d("slice_cols", a);
  require(0 <= begin && begin < end && end <= a.dim(1),
          "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") outside " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1), w = end - begin;
  std::vector<real> y(static_cast<std::size_t>(r) * w);
  for (int i = 0; i < r; ++i) {
    std::copy_n(a.data().data() + static_cast<std::size_t>(i) * c + begin, w,
                y.data() + static_cast<std::size_t>(i) * w);
  }
  const bool track = tracking({&a});
  Tensor out = make_result({r, w}, std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, r, c, w, begin] {
      if (on->grad.empty()) return;
      auto g = an->grad_buffer();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) {
          g[static_cast<std::size_t>(i) * c + begin + j] += on->grad[static_cast<std::size_t>(i) * w + j];
        }
      }
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& a, int factor) {
  require_2d("repeat_rows", a);
  require(factor >= 1, "repeat_rows: factor must be >= 1");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<real> y(static_cast<std::size_t>(r) * factor * c);
  for (int i = 0; i < r; ++i) {
    for (int f = 0; f < factor; ++f) {
      std::copy_n(a.data().data() + static_cast<std::size_t>(i) * c, c,
                  y.data() + (static_cast<std::size_t>(i) * factor + f) * c);
    }
  }
  const bool track = tracking({&a});
  Tensor out = make_result({r * factor, c}, std::move(y), track);
  if (track) {
    NodePtr an = a.handle(), on = out.handle();
    Tape::current().record([an, on, r, c, factor] {
      if (on->grad.empty()) return;
      auto g = an->grad_buffer();
      for (int i = 0; i < r; ++i) {
        for (int f = 0; f < factor; ++f) {
          for (int j = 0; j < c; ++j) {
            g[static_cast<std::size_t>(i) * c + j] +=
                on->grad[(static_cast<std::size_t>(i) * factor + f) * c + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor rope(const Tensor& x, int offset, real base) {
  require_2d("rope", x);
  const int t = x.dim(0), d = x.dim(1);
  require(d % 2 == 0, "rope: feature width must be even, got " + std::to_string(d));
  const int half = d / 2;
  auto cs = std::make_shared<std::vector<real>>(static_cast<std::size_t>(t) * half);
  auto sn = std::make_shared<std::vector<real>>(static_cast<std::size_t>(t) * half);
  for (int i = 0; i < t; ++i) {
    for (int p = 0; p < half; ++p) {
      const double freq = std::pow(static_cast<double>(base), -2.0 * p / d);
      const double ang = static_cast<double>(offset + i) * freq;
      (*cs)[static_cast<std::size_t>(i) * half + p] = static_cast<real>(std::cos(ang));
      (*sn)[static_cast<std::size_t>(i) * half + p] = static_cast<real>(std::sin(ang));
    }
  }
  const auto xv = x.data();
  std::vector<real> y(xv.size());
  for (int i = 0; i < t; ++i) {
    for (int p = 0; p < half; ++p) {
      const std::size_t q = static_cast<std::size_t>(i) * half + p;
      const std::size_t e = static_cast<std::size_t>(i) * d + 2 * p;
      y[e] = xv[e] * (*cs)[q] - xv[e + 1] * (*sn)[q];
      y[e + 1] = xv[e] * (*sn)[q] + xv[e + 1] * (*cs)[q];
    }
  }
  const bool track = tracking({&x});
  Tensor out = make_result(x.shape(), std::move(y), track);
  if (track) {
    NodePtr xn = x.handle(), on = out.handle();
    Tape::current().record([xn, on, cs, sn, t, d, half] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      for (int i = 0; i < t; ++i) {
        for (int p = 0; p < half; ++p) {
          const std::size_t q = static_cast<std::size_t>(i) * half + p;
          const std::size_t e = static_cast<std::size_t>(i) * d + 2 * p;
          const real g0 = on->grad[e], g1 = on->grad[e + 1];
          g[e] += g0 * (*cs)[q] + g1 * (*sn)[q];
          g[e + 1] += -g0 * (*sn)[q] + g1 * (*cs)[q];
        }
      }
    });
  }
  return out;
}

Tensor overlap_add(const Tensor& frames, int hop) {
  require_2d("overlap_add", frames);
  require(hop >= 1, "overlap_add: hop must be >= 1");
  const int f = frames.dim(0), n = frames.dim(1);
  const int len = (f - 1) * hop + n;
  std::vector<real> y(static_cast<std::size_t>(len), real(0));
  const auto fv = frames.data();
  for (int i = 0; i < f; ++i) {
    for (int j = 0; j < n; ++j) y[static_cast<std::size_t>(i) * hop + j] += fv[static_cast<std::size_t>(i) * n + j];
  }
  const bool track = tracking({&frames});
  Tensor out = finish("overlap_add", {len}, std::move(y), track);
  if (track) {
    NodePtr fn = frames.handle(), on = out.handle();
    Tape::current().record([fn, on, f, n, hop] {
      if (on->grad.empty()) return;
      auto g = fn->grad_buffer();
      for (int i = 0; i < f; ++i) {
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(i) * hop + j];
      }
    });
  }
  return out;
}

Tensor stft_magnitude(const Tensor& signal, int fft_size, int hop, real eps) {
  require(signal.defined(), "stft_magnitude: undefined signal");
  require(dsp::is_power_of_two(static_cast<std::size_t>(fft_size)) && hop >= 1,
          "stft_magnitude: fft_size must be a power of two");
  const int len = static_cast<int>(signal.numel());
  require(len >= fft_size, "stft_magnitude: signal of length " + std::to_string(len) +
                               " shorter than fft_size " + std::to_string(fft_size));
  const int frames = (len - fft_size) / hop + 1;
  const int bins = fft_size / 2 + 1;
  const auto win = dsp::hann(fft_size);
  auto spec = std::make_shared<std::vector<dsp::cplx>>(static_cast<std::size_t>(frames) * bins);
  std::vector<real> y(static_cast<std::size_t>(frames) * bins);
  const auto xv = signal.data();
  std::vector<dsp::cplx> buf(static_cast<std::size_t>(fft_size));
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < fft_size; ++i) {
      buf[static_cast<std::size_t>(i)] =
          static_cast<double>(xv[static_cast<std::size_t>(f) * hop + i]) * win[static_cast<std::size_t>(i)];
    }
    dsp::fft_inplace(buf, false);
    for (int k = 0; k < bins; ++k) {
      const std::size_t q = static_cast<std::size_t>(f) * bins + k;
      (*spec)[q] = buf[static_cast<std::size_t>(k)];
      y[q] = static_cast<real>(std::sqrt(std::norm(buf[static_cast<std::size_t>(k)]) + static_cast<double>(eps)));
    }
  }
  const bool track = tracking({&signal});
  Tensor out = finish("stft_magnitude", {frames, bins}, std::move(y), track);
  if (track) {
    NodePtr sn = signal.handle(), on = out.handle();
    Tape::current().record([sn, on, spec, win, frames, bins, fft_size, hop] {
      if (on->grad.empty()) return;
      auto g = sn->grad_buffer();
      std::vector<dsp::cplx> buf(static_cast<std::size_t>(fft_size));
      const double n = fft_size;
      for (int f = 0; f < frames; ++f) {
        std::fill(buf.begin(), buf.end(), dsp::cplx{});
        for (int k = 0; k < bins; ++k) {
          const std::size_t q = static_cast<std::size_t>(f) * bins + k;
          buf[static_cast<std::size_t>(k)] =
              static_cast<double>(on->grad[q]) * (*spec)[q] / static_cast<double>(on->data[q]);
        }
        dsp::fft_inplace(buf, true);  // includes 1/N
        for (int i = 0; i < fft_size; ++i) {
          g[static_cast<std::size_t>(f) * hop + i] +=
              static_cast<real>(win[static_cast<std::size_t>(i)] * buf[static_cast<std::size_t>(i)].real() * n);
        }
      }
    });
  }
  return out;
}

Tensor detach(const Tensor& a) {
  return make_result(a.shape(), {a.data().begin(), a.data().end()}, false);
}

}  // namespace IMUSIC_NC_ABI
}  // namespace imusic::nc
