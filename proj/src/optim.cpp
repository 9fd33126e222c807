#include "qreform/optim.hpp"

#include <algorithm>
#include <cmath>

#include "qreform/error.hpp"
#include "qreform/rng.hpp"

namespace qreform {

AdamState::AdamState(AdamOptions opts, std::span<Parameter* const> params) : options(opts) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Parameter* p : params) {
    m.push_back(Tensor::zeros_like(p->value));
    v.push_back(Tensor::zeros_like(p->value));
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UsageError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " tensors for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].shape() != params[k]->value.shape() || state.v[k].shape() != params[k]->value.shape()) {
      throw UsageError("adam_step: state shape mismatch for " + params[k]->name);
    }
  }
  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(o.beta1, t);
  const double correct2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const std::size_t cols = p.value.cols();
    std::vector<bool> pinned(p.value.rank() == 2 ? p.value.rows() : 0, false);
    for (std::size_t r : p.pinned_rows) {
      if (r < pinned.size()) pinned[r] = true;
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!pinned.empty() && pinned[i / cols]) continue;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / correct1;
      const double vhat = v[i] / correct2;
      value[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

GradCheckResult grad_check(const std::function<double(bool)>& loss_fn, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->value.size();
  if (total == 0) throw UsageError("grad_check: no parameters");

  for (Parameter* p : params) p->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

  // Sample without replacement when the request covers everything.
  std::vector<std::size_t> flat;
  Rng rng(options.seed);
  if (options.coordinates >= total) {
    flat.resize(total);
    for (std::size_t i = 0; i < total; ++i) flat[i] = i;
  } else {
    for (std::size_t i = 0; i < options.coordinates; ++i) flat.push_back(rng.below(total));
  }

  GradCheckResult result;
  result.loss = base;
  bool first = true;
  for (std::size_t index : flat) {
    std::size_t k = 0, offset = index;
    while (offset >= params[k]->value.size()) {
      offset -= params[k]->value.size();
      ++k;
    }
    Parameter& p = *params[k];
    double analytic = p.grad[offset];
    if (first) analytic += options.corrupt_analytic;
    first = false;

    const double saved = p.value[offset];
    p.value[offset] = saved + options.eps;
    const double plus = loss_fn(false);
    p.value[offset] = saved - options.eps;
    const double minus = loss_fn(false);
    p.value[offset] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: non-finite loss");

    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic - numeric));
    if (result.worst_parameter.empty() || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_parameter = p.name;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
    ++result.coordinates;
  }
  return result;
}

}  // namespace qreform
