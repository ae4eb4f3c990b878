#include "cstt/params.hpp"

#include <cmath>

namespace cstt {

Tensor ParamStore::create(const std::string& name, Shape shape, Init init) {
  for (const auto& p : items_) {
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  }
  const std::size_t n = numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      values.assign(n, 1.0);
      break;
    case Init::FanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.empty() ? 1 : shape[0]));
      for (double& v : values) v = rng_.uniform(-bound, bound);
      break;
    }
    case Init::SmallNormal:
      for (double& v : values) v = rng_.normal(0.0, 0.02);
      break;
  }
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  items_.push_back({name, t});
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return p.tensor;
  }
  return {};
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

}  // namespace cstt
