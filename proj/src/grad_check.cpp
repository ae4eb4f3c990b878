#include "cstt/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cstt {

GradCheckReport grad_check(const std::function<Tensor()>& objective,
                           const std::vector<NamedParam>& params, double step, double tol) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }
  Tensor loss = objective();
  const double base = loss.item();
  const double again = objective().item();
  if (base != again) {
    throw ContractError("grad_check: objective is not deterministic (" + std::to_string(base) +
                        " vs " + std::to_string(again) + ")");
  }
  backward(loss);

  GradCheckReport report;
  report.tolerance = tol;
  report.pass = true;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = objective().item();
      data[i] = saved - step;
      const double down = objective().item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    GradCheckEntry e;
    e.name = p.name;
    double magnitude = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      magnitude = std::max({magnitude, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double diff = std::abs(analytic[i] - numeric[i]);
      if (diff > e.max_abs_error) {
        e.max_abs_error = diff;
        e.worst_index = i;
      }
    }
    // A tensor whose true gradient is identically zero is compared absolutely.
    e.max_rel_error = magnitude > 1e-12 ? e.max_abs_error / magnitude : e.max_abs_error;
    e.pass = e.max_rel_error <= tol;
    report.pass = report.pass && e.pass;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace cstt
