#include "softmcl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>

#include "softmcl/errors.hpp"

namespace softmcl::ad {

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::invalid_argument(std::string(op) + ": operands from different tapes");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
  nodes_.push_back(Node{std::move(value), Tensor{}, needs ? std::move(fn) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::invalid_argument("backward: root from another tape");
  if (backward_done_) throw std::logic_error("backward: already run on this tape");
  if (nodes_[root.id_].value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(nodes_[root.id_].value.shape()));
  }
  backward_done_ = true;
  if (!nodes_[root.id_].requires_grad) return;
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) {
      n.backward(n.grad);
      n.backward = nullptr;
    }
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands from different tapes");
  return a.tape();
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

// C[n,m] += A[n,k] B[k,m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n,k] += G[n,m] B[k,m]^T, through a transposed copy of B so the inner
// loop is a contiguous axpy.
void gemm_nt(const double* g, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k) {
  std::vector<double> bt(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  gemm_nn(g, bt.data(), c, n, m, k);
}

// C[k,m] += A[n,k]^T G[n,m]
void gemm_tn(const double* a, const double* g, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename D>
Var unary(const char* op, Var a, F f, D df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(op, std::move(out), {a}, [a, df](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record("add", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    for (const Var& v : {a, b}) {
      if (!v.requires_grad()) continue;
      Tensor& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record("sub", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= k;
  return a.tape().record("scale", std::move(out), {a}, [a, k](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias, "add_bias");
  require_rank(x, 2, "add_bias");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  if (bias.value().rank() != 1 || bias.value().dim(0) != d) {
    throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  return t.record("add_bias", std::move(out), {x, bias}, [x, bias, n, d](const Tensor& g) {
    Tape& t = x.tape();
    if (x.requires_grad()) {
      Tensor& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out(Shape{n, m}, 0.0);
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  return t.record("matmul", std::move(out), {a, b}, [a, b, n, k, m](const Tensor& g) {
    Tape& t = a.tape();
    if (a.requires_grad()) {
      gemm_nt(g.data().data(), b.value().data().data(), t.grad_buffer(a).data().data(), n, m, k);
    }
    if (b.requires_grad()) {
      gemm_tn(a.value().data().data(), g.data().data(), t.grad_buffer(b).data().data(), n, k, m);
    }
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const Tensor& x = a.value();
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return a.tape().record("transpose", std::move(out), {a}, [a, r, c](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

// ---- reductions / normalizers -------------------------------------------

Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(x[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  Tensor y = out;
  return a.tape().record("softmax", std::move(out), {a}, [a, s, y = std::move(y)](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis, "sum");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.len + l) * s.inner + in];
  return a.tape().record("sum", std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t in = 0; in < s.inner; ++in) ga[(o * s.len + l) * s.inner + in] += g[o * s.inner + in];
  });
}

Var sum_all(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record("sum_all", Tensor::scalar(total), {a}, [a](const Tensor& g) {
    Tensor& ga = a.tape().grad_buffer(a);
    for (double& v : ga.data()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var l2_normalize(Var a, std::size_t axis) {
  constexpr double eps = 1e-12;
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis, "l2_normalize");
  Tensor out(x.shape());
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double sq = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) sq += x[base + l * s.inner] * x[base + l * s.inner];
      const double nrm = std::max(std::sqrt(sq), eps);
      norms[o * s.inner + in] = nrm;
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = x[base + l * s.inner] / nrm;
    }
  }
  Tensor y = out;
  return a.tape().record(
      "l2_normalize", std::move(out), {a},
      [a, s, y = std::move(y), norms = std::move(norms)](const Tensor& g) {
        Tensor& ga = a.tape().grad_buffer(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            const double nrm = norms[o * s.inner + in];
            if (nrm <= eps) {
              for (std::size_t l = 0; l < s.len; ++l) ga[base + l * s.inner] += g[base + l * s.inner] / eps;
              continue;
            }
            double dot = 0.0;
            for (std::size_t l = 0; l < s.len; ++l) dot += y[base + l * s.inner] * g[base + l * s.inner];
            for (std::size_t l = 0; l < s.len; ++l) {
              const std::size_t idx = base + l * s.inner;
              ga[idx] += (g[idx] - y[idx] * dot) / nrm;
            }
          }
        }
      });
}

// ---- indexing / structure ------------------------------------------------

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "gather_rows");
  const Tensor& tv = table.value();
  const std::size_t n = tv.dim(0), d = tv.dim(1);
  Tensor out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " out of range for " + shape_str(tv.shape()));
    }
    std::copy_n(tv.data().data() + ids[r] * d, d, out.data().data() + r * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape().record("gather_rows", std::move(out), {table}, [table, d, idx = std::move(idx)](const Tensor& g) {
    Tensor& gt = table.tape().grad_buffer(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = gt.data().data() + idx[r] * d;
      const double* src = g.data().data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var concat(Var a, Var b, std::size_t axis) {
  Tape& t = same_tape(a, b, "concat");
  require_rank(a, 2, "concat");
  require_rank(b, 2, "concat");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const std::size_t other = 1 - axis;
  if (av.dim(other) != bv.dim(other)) {
    throw ShapeError("concat: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  if (axis == 0) {
    const std::size_t d = av.dim(1);
    std::vector<double> data(av.values());
    data.insert(data.end(), bv.values().begin(), bv.values().end());
    const std::size_t na = av.dim(0);
    return t.record("concat", Tensor(Shape{na + bv.dim(0), d}, std::move(data)), {a, b},
                    [a, b, na, d](const Tensor& g) {
                      Tape& t = a.tape();
                      if (a.requires_grad()) {
                        Tensor& ga = t.grad_buffer(a);
                        for (std::size_t i = 0; i < na * d; ++i) ga[i] += g[i];
                      }
                      if (b.requires_grad()) {
                        Tensor& gb = t.grad_buffer(b);
                        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na * d + i];
                      }
                    });
  }
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor out(Shape{n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data().data() + i * ca, ca, out.data().data() + i * (ca + cb));
    std::copy_n(bv.data().data() + i * cb, cb, out.data().data() + i * (ca + cb) + ca);
  }
  return t.record("concat", std::move(out), {a, b}, [a, b, n, ca, cb](const Tensor& g) {
    Tape& t = a.tape();
    const std::size_t c = ca + cb;
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm");
  same_tape(x, bias, "layer_norm");
  require_rank(x, 2, "layer_norm");
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw ShapeError("layer_norm: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(gain.shape()));
  }
  Tensor xhat(xv.shape());
  std::vector<double> rstd(n);
  Tensor out(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = xv.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mu) * rstd[i];
      xhat[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  return t.record("layer_norm", std::move(out), {x, gain, bias},
                  [x, gain, bias, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& g) {
                    Tape& t = x.tape();
                    if (gain.requires_grad()) {
                      Tensor& gg = t.grad_buffer(gain);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
                    }
                    if (bias.requires_grad()) {
                      Tensor& gb = t.grad_buffer(bias);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                    }
                    if (x.requires_grad()) {
                      Tensor& gx = t.grad_buffer(x);
                      const Tensor& gv = gain.value();
                      const double inv_d = 1.0 / static_cast<double>(d);
                      for (std::size_t i = 0; i < n; ++i) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dh = g[i * d + j] * gv[j];
                          m1 += dh;
                          m2 += dh * xhat[i * d + j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for (std::size_t j = 0; j < d; ++j) {
                          const double dh = g[i * d + j] * gv[j];
                          gx[i * d + j] += rstd[i] * (dh - m1 - xhat[i * d + j] * m2);
                        }
                      }
                    }
                  });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double k = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.value().size());
  for (double& f : factor) f = keep(rng) ? k : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return x.tape().record("dropout", std::move(out), {x}, [x, factor = std::move(factor)](const Tensor& g) {
    Tensor& gx = x.tape().grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

// ---- fused ops -------------------------------------------------------------

Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                         std::span<const std::uint8_t> key_mask) {
  Tape& t = same_tape(q, k, "multi_head_attention");
  same_tape(q, v, "multi_head_attention");
  const Tensor& qv = q.value();
  require_rank(q, 2, "multi_head_attention");
  const std::size_t d = qv.dim(1);
  if (qv.dim(0) != batch * seq || k.value().shape() != qv.shape() || v.value().shape() != qv.shape()) {
    throw ShapeError("multi_head_attention: shape mismatch " + shape_str(qv.shape()) + " vs " +
                     shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) throw ShapeError("multi_head_attention: d not divisible by heads");
  if (key_mask.size() != batch * seq) throw ShapeError("multi_head_attention: mask size mismatch");
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();

  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
  Tensor out(qv.shape(), 0.0);
  std::vector<double> row(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* m = key_mask.data() + b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = qv.data().data() + (b * seq + i) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (!m[j]) continue;
          const double* kj = kv.data().data() + (b * seq + j) * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          row[j] = s * inv;
          mx = std::max(mx, row[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double z = 0.0;
        double* p = probs->data() + ((b * heads + h) * seq + i) * seq;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!m[j]) continue;
          p[j] = std::exp(row[j] - mx);
          z += p[j];
        }
        double* oi = out.data().data() + (b * seq + i) * d + off;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!m[j]) continue;
          p[j] /= z;
          const double* vj = vv.data().data() + (b * seq + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  return t.record("multi_head_attention", std::move(out), {q, k, v},
                  [q, k, v, batch, seq, heads, d, dh, inv, probs, mask = std::move(mask)](const Tensor& g) {
                    Tape& t = q.tape();
                    const Tensor& qv = q.value();
                    const Tensor& kv = k.value();
                    const Tensor& vv = v.value();
                    Tensor gq(qv.shape(), 0.0), gk(qv.shape(), 0.0), gvv(qv.shape(), 0.0);
                    std::vector<double> dp(seq);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const std::uint8_t* m = mask.data() + b * seq;
                      for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t off = h * dh;
                        for (std::size_t i = 0; i < seq; ++i) {
                          const double* p = probs->data() + ((b * heads + h) * seq + i) * seq;
                          const double* gi = g.data().data() + (b * seq + i) * d + off;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < seq; ++j) {
                            if (!m[j] || p[j] == 0.0) {
                              dp[j] = 0.0;
                              continue;
                            }
                            const double* vj = vv.data().data() + (b * seq + j) * d + off;
                            double* gvj = gvv.data().data() + (b * seq + j) * d + off;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) {
                              s += gi[c] * vj[c];
                              gvj[c] += p[j] * gi[c];
                            }
                            dp[j] = s;
                            dot += p[j] * s;
                          }
                          const double* qi = qv.data().data() + (b * seq + i) * d + off;
                          double* gqi = gq.data().data() + (b * seq + i) * d + off;
                          for (std::size_t j = 0; j < seq; ++j) {
                            if (!m[j] || p[j] == 0.0) continue;
                            const double ds = p[j] * (dp[j] - dot) * inv;
                            const double* kj = kv.data().data() + (b * seq + j) * d + off;
                            double* gkj = gk.data().data() + (b * seq + j) * d + off;
                            for (std::size_t c = 0; c < dh; ++c) {
                              gqi[c] += ds * kj[c];
                              gkj[c] += ds * qi[c];
                            }
                          }
                        }
                      }
                    }
                    auto accumulate = [&t](const Var& var, const Tensor& src) {
                      if (!var.requires_grad()) return;
                      Tensor& dst = t.grad_buffer(var);
                      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                    };
                    accumulate(q, gq);
                    accumulate(k, gk);
                    accumulate(v, gvv);
                  });
}

Var masked_soft_cross_entropy(Var logits, std::span<const std::uint8_t> mask, std::span<const double> weights) {
  require_rank(logits, 2, "masked_soft_cross_entropy");
  const Tensor& l = logits.value();
  const std::size_t m = l.dim(0), c = l.dim(1);
  if (mask.size() != m * c || weights.size() != m * c) {
    throw ShapeError("masked_soft_cross_entropy: mask/weights size mismatch for logits " + shape_str(l.shape()));
  }
  // probs over each row's mask, kept for the backward pass
  std::vector<double> probs(m * c, 0.0);
  std::vector<double> row_weight(m, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double w_total = 0.0;
    bool any = false;
    double mx = -std::numeric_limits<double>::infinity();
    bool stray = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) {
        stray = stray || weights[i * c + j] != 0.0;
        continue;
      }
      any = true;
      w_total += weights[i * c + j];
      mx = std::max(mx, l[i * c + j]);
    }
    if (stray && !any) throw DegenerateBatchError("masked_soft_cross_entropy: row with weight but no candidates");
    if (w_total == 0.0) continue;
    if (!any) throw DegenerateBatchError("masked_soft_cross_entropy: row with weight but no candidates");
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[i * c + j]) z += std::exp(l[i * c + j] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) continue;
      probs[i * c + j] = std::exp(l[i * c + j] - lse);
      loss -= weights[i * c + j] * (l[i * c + j] - lse);
    }
    row_weight[i] = w_total;
  }
  std::vector<double> w(weights.begin(), weights.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return logits.tape().record(
      "masked_soft_cross_entropy", Tensor::scalar(loss), {logits},
      [logits, m, c, probs = std::move(probs), row_weight = std::move(row_weight), w = std::move(w),
       mk = std::move(mk)](const Tensor& g) {
        Tensor& gl = logits.tape().grad_buffer(logits);
        const double go = g[0];
        for (std::size_t i = 0; i < m; ++i) {
          if (row_weight[i] == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) {
            if (!mk[i * c + j]) continue;
            gl[i * c + j] += go * (row_weight[i] * probs[i * c + j] - w[i * c + j]);
          }
        }
      });
}

}  // namespace softmcl::ad
