#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cstt/params.hpp"
#include "cstt/tensor.hpp"

namespace cstt {

struct GradCheckEntry {
  std::string name;
  // max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|), per tensor
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of the scalar `objective` against central
// differences for every element of `params`. The objective must rebuild its
// graph from the current parameter values on each call and be deterministic
// (dropout off, cluster assignments frozen); two identical evaluations that
// disagree raise ContractError.
GradCheckReport grad_check(const std::function<Tensor()>& objective,
                           const std::vector<NamedParam>& params, double step = 1e-5,
                           double tol = 1e-5);

}  // namespace cstt
