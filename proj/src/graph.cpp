#include "qreform/graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "qreform/error.hpp"

namespace qreform {

const Tensor& Var::value() const { return graph->value(*this); }

double Var::scalar() const {
  const Tensor& t = value();
  if (t.size() != 1) throw UsageError("scalar() on tensor of shape " + shape_string(t.shape()));
  return t[0];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.param ? n.param->value : n.own;
}

std::span<double> Graph::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.param) return n.param->grad.data();
  if (n.grad.empty()) n.grad.assign(n.own.size(), 0.0);
  return n.grad;
}

std::span<const double> Graph::grad_view(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->grad.data();
  return n.grad;
}

Var Graph::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var in) {
      assert(in.graph == this);
      return nodes_[in.id].needs_grad;
    });
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  if (!record_) throw UsageError("backward() on a non-recording graph");
  if (loss.graph != this) throw UsageError("backward() on a node of another graph");
  if (value(loss).size() != 1) throw UsageError("backward() requires a scalar loss");
  if (backward_done_) throw UsageError("backward() already ran on this graph");
  backward_done_ = true;
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss)[0] += 1.0;
  for (std::int64_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, Var{this, static_cast<std::uint32_t>(id)});
  }
}

namespace ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw UsageError(what);
}

void require_vector(const Tensor& t, const char* op) {
  if (t.rank() != 1) throw UsageError(std::string(op) + ": expected a 1-D tensor, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.graph->push(std::move(out), {x}, [x, deriv](Graph& g, Var self) {
    auto go = g.grad_view(self);
    const Tensor& xv = g.value(x);
    const Tensor& yv = g.value(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv(xv[i], yv[i]);
  });
}

double stable_log_sigmoid(double x) {
  // log(sigmoid(x)) = -log(1 + exp(-x))
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var affine(Var x, Var W, Var b) {
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const Tensor& bv = b.value();
  require_vector(xv, "affine");
  require_vector(bv, "affine");
  if (Wv.rank() != 2 || Wv.cols() != xv.size() || Wv.rows() != bv.size()) {
    throw UsageError("affine: dimension mismatch W" + shape_string(Wv.shape()) + " x" + shape_string(xv.shape()) +
                     " b" + shape_string(bv.shape()));
  }
  const std::size_t m = Wv.rows(), n = Wv.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* w = &Wv.data()[r * n];
    double acc = bv[r];
    for (std::size_t c = 0; c < n; ++c) acc += w[c] * xv[c];
    out[r] = acc;
  }
  return x.graph->push(std::move(out), {x, W, b}, [x, W, b, m, n](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t r = 0; r < m; ++r) gb[r] += go[r];
    }
    if (g.needs_grad(W)) {
      const Tensor& xv = g.value(x);
      auto gW = g.grad(W);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        double* row = &gW[r * n];
        for (std::size_t c = 0; c < n; ++c) row[c] += gr * xv[c];
      }
    }
    if (g.needs_grad(x)) {
      const Tensor& Wv = g.value(W);
      auto gx = g.grad(x);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        const double* w = &Wv.data()[r * n];
        for (std::size_t c = 0; c < n; ++c) gx[c] += gr * w[c];
      }
    }
  });
}

Var matvec(Var W, Var x) {
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  require_vector(xv, "matvec");
  if (Wv.rank() != 2 || Wv.cols() != xv.size()) {
    throw UsageError("matvec: dimension mismatch W" + shape_string(Wv.shape()) + " x" + shape_string(xv.shape()));
  }
  const std::size_t m = Wv.rows(), n = Wv.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* w = &Wv.data()[r * n];
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += w[c] * xv[c];
    out[r] = acc;
  }
  return x.graph->push(std::move(out), {W, x}, [x, W, m, n](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(W)) {
      const Tensor& xv = g.value(x);
      auto gW = g.grad(W);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        double* row = &gW[r * n];
        for (std::size_t c = 0; c < n; ++c) row[c] += gr * xv[c];
      }
    }
    if (g.needs_grad(x)) {
      const Tensor& Wv = g.value(W);
      auto gx = g.grad(x);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = go[r];
        if (gr == 0.0) continue;
        const double* w = &Wv.data()[r * n];
        for (std::size_t c = 0; c < n; ++c) gx[c] += gr * w[c];
      }
    }
  });
}

Var matvec_t(Var M, Var x) {
  const Tensor& xv = x.value();
  const Tensor& Mv = M.value();
  require_vector(xv, "matvec_t");
  if (Mv.rank() != 2 || Mv.rows() != xv.size()) {
    throw UsageError("matvec_t: dimension mismatch M" + shape_string(Mv.shape()) + " x" + shape_string(xv.shape()));
  }
  const std::size_t m = Mv.rows(), n = Mv.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < m; ++r) {
    const double xr = xv[r];
    for (std::size_t c = 0; c < n; ++c) out[c] += Mv.at(r, c) * xr;
  }
  return x.graph->push(std::move(out), {M, x}, [x, M, m, n](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(M)) {
      const Tensor& xv = g.value(x);
      auto gM = g.grad(M);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) gM[r * n + c] += xv[r] * go[c];
      }
    }
    if (g.needs_grad(x)) {
      const Tensor& Mv = g.value(M);
      auto gx = g.grad(x);
      for (std::size_t r = 0; r < m; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += Mv.at(r, c) * go[c];
        gx[r] += acc;
      }
    }
  });
}

Var sigmoid(Var x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(Var x) {
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) throw UsageError("log: non-positive input " + std::to_string(xv[i]));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var log_sigmoid(Var x) {
  return unary(x, stable_log_sigmoid, [](double v, double) { return stable_sigmoid(-v); });
}

Var elementwise(Var x, Unary kind) {
  switch (kind) {
    case Unary::sigmoid: return sigmoid(x);
    case Unary::tanh: return tanh(x);
    case Unary::log: return log(x);
  }
  throw UsageError("elementwise: unknown unary kind");
}

Var elementwise(Var a, Var b, Binary kind) {
  return kind == Binary::add ? add(a, b) : mul(a, b);
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(a)) {
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.needs_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(a)) {
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.needs_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(a)) {
      const Tensor& bv = g.value(b);
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.needs_grad(b)) {
      const Tensor& av = g.value(a);
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return x.graph->push(std::move(out), {x}, [x, factor](Graph& g, Var self) {
    auto go = g.grad_view(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

Var divide(Var x, double divisor) {
  require(divisor != 0.0, "divide: zero divisor");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= divisor;
  return x.graph->push(std::move(out), {x}, [x, divisor](Graph& g, Var self) {
    auto go = g.grad_view(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / divisor;
  });
}

Var add_n(std::span<const Var> terms) {
  require(!terms.empty(), "add_n: no terms");
  Tensor out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    const Tensor& v = terms[t].value();
    require_same_shape(out, v, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  return terms[0].graph->push(std::move(out), terms, [inputs](Graph& g, Var self) {
    auto go = g.grad_view(self);
    for (Var in : inputs) {
      if (!g.needs_grad(in)) continue;
      auto gi = g.grad(in);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

Var softmax(Var logits) {
  const Tensor& z = logits.value();
  require_vector(z, "softmax");
  const double mx = *std::max_element(z.data().begin(), z.data().end());
  Tensor out(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) out[i] /= total;
  return logits.graph->push(std::move(out), {logits}, [logits](Graph& g, Var self) {
    auto go = g.grad_view(self);
    const Tensor& p = g.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += go[i] * p[i];
    auto gz = g.grad(logits);
    for (std::size_t i = 0; i < p.size(); ++i) gz[i] += p[i] * (go[i] - inner);
  });
}

Var log_softmax(Var logits) {
  const Tensor& z = logits.value();
  require_vector(z, "log_softmax");
  const double mx = *std::max_element(z.data().begin(), z.data().end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - mx);
  const double lse = mx + std::log(total);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return logits.graph->push(std::move(out), {logits}, [logits](Graph& g, Var self) {
    auto go = g.grad_view(self);
    const Tensor& lp = g.value(self);
    double total = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) total += go[i];
    auto gz = g.grad(logits);
    for (std::size_t i = 0; i < lp.size(); ++i) gz[i] += go[i] - std::exp(lp[i]) * total;
  });
}

Var concat(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_vector(av, "concat");
  require_vector(bv, "concat");
  std::vector<double> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t n = av.size();
  return a.graph->push(Tensor::vector(std::move(data)), {a, b}, [a, b, n](Graph& g, Var self) {
    auto go = g.grad_view(self);
    if (g.needs_grad(a)) {
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (g.needs_grad(b)) {
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[n + i];
    }
  });
}

Var concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat: no parts");
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const Tensor& v = p.value();
    require_vector(v, "concat");
    offsets.push_back(data.size());
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph->push(Tensor::vector(std::move(data)), parts, [inputs, offsets](Graph& g, Var self) {
    auto go = g.grad_view(self);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!g.needs_grad(inputs[k])) continue;
      auto gi = g.grad(inputs[k]);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[offsets[k] + i];
    }
  });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& xv = x.value();
  require_vector(xv, "slice");
  if (length == 0 || offset + length > xv.size()) throw UsageError("slice: range out of bounds");
  std::vector<double> data(xv.data().begin() + offset, xv.data().begin() + offset + length);
  return x.graph->push(Tensor::vector(std::move(data)), {x}, [x, offset](Graph& g, Var self) {
    auto go = g.grad_view(self);
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[offset + i] += go[i];
  });
}

Var stack(std::span<const Var> rows) {
  require(!rows.empty(), "stack: no rows");
  const std::size_t d = rows[0].value().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (Var r : rows) {
    const Tensor& v = r.value();
    require_vector(v, "stack");
    if (v.size() != d) throw UsageError("stack: rows of different length");
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return rows[0].graph->push(Tensor::matrix(rows.size(), d, std::move(data)), rows,
                             [inputs, d](Graph& g, Var self) {
                               auto go = g.grad_view(self);
                               for (std::size_t t = 0; t < inputs.size(); ++t) {
                                 if (!g.needs_grad(inputs[t])) continue;
                                 auto gr = g.grad(inputs[t]);
                                 for (std::size_t j = 0; j < d; ++j) gr[j] += go[t * d + j];
                               }
                             });
}

Var maxpool_over_steps(Var H) {
  const Tensor& hv = H.value();
  if (hv.rank() != 2) throw UsageError("maxpool_over_steps: expected a T x d matrix");
  const std::size_t steps = hv.rows(), d = hv.cols();
  Tensor out({d});
  std::vector<std::size_t> argmax(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = hv.at(0, j);
    for (std::size_t t = 1; t < steps; ++t) {
      if (hv.at(t, j) > best) {
        best = hv.at(t, j);
        argmax[j] = t;
      }
    }
    out[j] = best;
  }
  return H.graph->push(std::move(out), {H}, [H, argmax, d](Graph& g, Var self) {
    auto go = g.grad_view(self);
    auto gH = g.grad(H);
    for (std::size_t j = 0; j < d; ++j) gH[argmax[j] * d + j] += go[j];
  });
}

Var cosine(Var u, Var v) {
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  require_vector(uv, "cosine");
  require_same_shape(uv, vv, "cosine");
  double uu = 0.0, vvn = 0.0, uvd = 0.0;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    uu += uv[i] * uv[i];
    vvn += vv[i] * vv[i];
    uvd += uv[i] * vv[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vvn);
  const bool degenerate = nu == 0.0 || nv == 0.0;
  const double c = degenerate ? 0.0 : uvd / (nu * nv);
  return u.graph->push(Tensor::vector({c}), {u, v}, [u, v, nu, nv, c, degenerate](Graph& g, Var self) {
    if (degenerate) return;
    const double go = g.grad_view(self)[0];
    const Tensor& uv = g.value(u);
    const Tensor& vv = g.value(v);
    // d cos / du = v / (|u||v|) - cos * u / |u|^2
    if (g.needs_grad(u)) {
      auto gu = g.grad(u);
      for (std::size_t i = 0; i < uv.size(); ++i) gu[i] += go * (vv[i] / (nu * nv) - c * uv[i] / (nu * nu));
    }
    if (g.needs_grad(v)) {
      auto gv = g.grad(v);
      for (std::size_t i = 0; i < vv.size(); ++i) gv[i] += go * (uv[i] / (nu * nv) - c * vv[i] / (nv * nv));
    }
  });
}

Var dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return a.graph->push(Tensor::vector({acc}), {a, b}, [a, b](Graph& g, Var self) {
    const double go = g.grad_view(self)[0];
    if (g.needs_grad(a)) {
      const Tensor& bv = g.value(b);
      auto ga = g.grad(a);
      for (std::size_t i = 0; i < bv.size(); ++i) ga[i] += go * bv[i];
    }
    if (g.needs_grad(b)) {
      const Tensor& av = g.value(a);
      auto gb = g.grad(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] += go * av[i];
    }
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return x.graph->push(Tensor::vector({acc}), {x}, [x](Graph& g, Var self) {
    const double go = g.grad_view(self)[0];
    auto gx = g.grad(x);
    for (double& v : gx) v += go;
  });
}

Var pick(Var x, std::size_t index) {
  const Tensor& xv = x.value();
  if (index >= xv.size()) throw UsageError("pick: index out of range");
  return x.graph->push(Tensor::vector({xv[index]}), {x}, [x, index](Graph& g, Var self) {
    g.grad(x)[index] += g.grad_view(self)[0];
  });
}

Var embedding_lookup(Graph& g, Parameter& table, std::size_t id) {
  const Tensor& E = table.value;
  if (E.rank() != 2) throw UsageError("embedding_lookup: table must be a matrix");
  if (id >= E.rows()) {
    throw UsageError("embedding_lookup: id " + std::to_string(id) + " out of range for " + std::to_string(E.rows()) +
                     " rows");
  }
  const std::size_t d = E.cols();
  auto row = E.row(id);
  Tensor out = Tensor::vector(std::vector<double>(row.begin(), row.end()));
  Var table_node = g.param(table);
  // The table node is only a needs_grad carrier; the gradient is written
  // sparsely into the single row.
  return g.push(std::move(out), {table_node}, [table_node, id, d](Graph& g, Var self) {
    auto go = g.grad_view(self);
    auto gt = g.grad(table_node);
    for (std::size_t j = 0; j < d; ++j) gt[id * d + j] += go[j];
  });
}

}  // namespace ad
}  // namespace qreform
