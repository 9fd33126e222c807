#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qreform/tensor.hpp"

namespace qreform {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter list.
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  AdamState(AdamOptions opts, std::span<Parameter* const> params);
};

/// One bias-corrected Adam update from the accumulated gradients. Pinned rows
/// are left untouched. Throws UsageError if the state was built for different
/// shapes.
void adam_step(std::span<Parameter* const> params, AdamState& state);

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t coordinates = 200;
  std::uint64_t seed = 1;
  /// Test hook: adds this offset to the analytic gradient of the first sampled
  /// coordinate, to prove the checker can fail.
  double corrupt_analytic = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double max_abs_error = 0.0;
  /// Loss at the unperturbed parameters.
  double loss = 0.0;
};

/// Compares the backward() gradient of `loss_fn` against central finite
/// differences on a seeded sample of coordinates drawn across `params`.
/// `loss_fn` must build a fresh graph, optionally call backward on it when
/// `with_backward` is true, and return the loss value.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<double(bool with_backward)>& loss_fn,
                           std::span<Parameter* const> params, const GradCheckOptions& options = {});

}  // namespace qreform
