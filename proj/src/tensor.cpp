#include "cstt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cstt {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

NodePtr make_node(Shape shape, std::vector<double> data, const char* op,
                  std::vector<NodePtr> parents = {}) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
  }
  return n;
}

// Attach an adjoint only when the result is part of a differentiable path.
template <typename F>
Tensor finish(NodePtr n, F&& fn) {
  if (n->requires_grad) n->backward = std::forward<F>(fn);
  return Tensor(std::move(n));
}

void check_finite_scale(double v, const char* what) {
  if (!std::isfinite(v)) throw ContractError(std::string(what) + " must be finite");
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool b_small = false;
  bool a_small = false;
  if (sa != sb) {
    if (is_suffix(sb, sa)) {
      b_small = true;
    } else if (is_suffix(sa, sb)) {
      a_small = true;
    } else {
      throw ShapeError(std::string(name) + ": incompatible shapes " + to_string(sa) + " and " +
                       to_string(sb));
    }
  }
  const Shape& out_shape = a_small ? sb : sa;
  const std::size_t n = numel(out_shape);
  const std::size_t pa = a.numel();
  const std::size_t pb = b.numel();
  const auto& da = a.node()->data;
  const auto& db = b.node()->data;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = da[a_small ? i % pa : i];
    const double y = db[b_small ? i % pb : i];
    switch (kind) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
    }
  }
  NodePtr an = a.node();
  NodePtr bn = b.node();
  auto node = make_node(out_shape, std::move(out), name, {an, bn});
  return finish(node, [an, bn, kind, pa, pb, a_small, b_small](Node& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double g = self.grad[i];
        if (kind == BinOp::Mul) g *= bn->data[b_small ? i % pb : i];
        an->grad[a_small ? i % pa : i] += g;
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double g = self.grad[i];
        if (kind == BinOp::Sub) g = -g;
        if (kind == BinOp::Mul) g *= an->data[a_small ? i % pa : i];
        bn->grad[b_small ? i % pb : i] += g;
      }
    }
  });
}

// Strides helper for axis-wise ops: [outer, len, inner].
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void softmax_rows(const double* x, double* y, std::size_t len, std::size_t stride,
                  const std::uint8_t* mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < len; ++j) {
    if (mask && !mask[j * stride]) continue;
    mx = std::max(mx, x[j * stride]);
  }
  if (!std::isfinite(mx)) {
    // every entry masked
    for (std::size_t j = 0; j < len; ++j) y[j * stride] = 0.0;
    return;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    if (mask && !mask[j * stride]) {
      y[j * stride] = 0.0;
      continue;
    }
    const double e = std::exp(x[j * stride] - mx);
    y[j * stride] = e;
    total += e;
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < len; ++j) y[j * stride] *= inv;
}

Tensor softmax_impl(const Tensor& x, std::size_t axis, const std::uint8_t* mask,
                    const char* name) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      softmax_rows(xd.data() + base, out.data() + base, sp.len, sp.inner,
                   mask ? mask + base : nullptr);
    }
  }
  NodePtr xn = x.node();
  auto node = make_node(x.shape(), std::move(out), name, {xn});
  return finish(node, [xn, sp](Node& self) {
    xn->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t k = base + j * sp.inner;
          dot += self.grad[k] * self.data[k];
        }
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t k = base + j * sp.inner;
          xn->grad[k] += self.data[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (cstt::numel(shape) != values.size()) {
    throw ShapeError("shape " + cstt::to_string(shape) + " needs " +
                     std::to_string(cstt::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero-length dimension in " + cstt::to_string(shape));
  }
  return Tensor(make_node(std::move(shape), std::move(values), "leaf"));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = cstt::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "param";
  return t;
}

std::size_t Tensor::dim(int axis) const {
  return node_->shape[normalize_axis(axis, node_->shape.size())];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data() is only allowed on leaf tensors");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + cstt::to_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + cstt::to_string(shape()));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : index) {
    if (v >= node_->shape[i]) throw ShapeError("index out of range for " + cstt::to_string(shape()));
    flat = flat * node_->shape[i] + v;
    ++i;
  }
  return node_->data[flat];
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(make_node(node_->shape, node_->data, "detach"));
}

Tensor Tensor::clone() const {
  auto n = make_node(node_->shape, node_->data, node_->requires_grad ? "param" : "leaf");
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  check_finite_scale(factor, "scale factor");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  NodePtr xn = x.node();
  auto node = make_node(x.shape(), std::move(out), "scale", {xn});
  return finish(node, [xn, factor](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  NodePtr xn = x.node();
  auto node = make_node(x.shape(), std::move(out), "relu", {xn});
  return finish(node, [xn](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
    }
  });
}

// ---- matmul ----------------------------------------------------------------

constexpr std::size_t kSmallProduct = 32 * 32 * 32;

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&] {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) fail();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t k2 = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != k2) fail();
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b) fail();

  Shape out_shape = batch_a.empty() ? batch_b : batch_a;
  const std::size_t batch = numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);

  const auto& da = a.node()->data;
  const auto& db = b.node()->data;
  std::vector<double> out(batch * m * n);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();
  // Blocked GEMM setup dominates for the many tiny per-head products.
  const bool small = m * k * n <= kSmallProduct;

  if (!b_batched && a_batched) {
    // Fold a's batch into rows: one GEMM.
    MutMap(out.data(), batch * m, n).noalias() =
        ConstMap(da.data(), batch * m, k) * ConstMap(db.data(), k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* pa = da.data() + (a_batched ? i * m * k : 0);
      const double* pb = db.data() + (b_batched ? i * k * n : 0);
      if (small)
        MutMap(out.data() + i * m * n, m, n).noalias() = ConstMap(pa, m, k).lazyProduct(ConstMap(pb, k, n));
      else
        MutMap(out.data() + i * m * n, m, n).noalias() = ConstMap(pa, m, k) * ConstMap(pb, k, n);
    }
  }

  NodePtr an = a.node();
  NodePtr bn = b.node();
  auto node = make_node(std::move(out_shape), std::move(out), "matmul", {an, bn});
  return finish(node, [an, bn, batch, m, k, n, a_batched, b_batched, small](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      if (a_batched && !b_batched) {
        MutMap(an->grad.data(), batch * m, k).noalias() +=
            ConstMap(g, batch * m, n) * ConstMap(bn->data.data(), k, n).transpose();
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          double* ga = an->grad.data() + (a_batched ? i * m * k : 0);
          const double* pb = bn->data.data() + (b_batched ? i * k * n : 0);
          if (small)
            MutMap(ga, m, k).noalias() += ConstMap(g + i * m * n, m, n).lazyProduct(ConstMap(pb, k, n).transpose());
          else
            MutMap(ga, m, k).noalias() += ConstMap(g + i * m * n, m, n) * ConstMap(pb, k, n).transpose();
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (a_batched && !b_batched) {
        MutMap(bn->grad.data(), k, n).noalias() +=
            ConstMap(an->data.data(), batch * m, k).transpose() * ConstMap(g, batch * m, n);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          double* gb = bn->grad.data() + (b_batched ? i * k * n : 0);
          const double* pa = an->data.data() + (a_batched ? i * m * k : 0);
          if (small)
            MutMap(gb, k, n).noalias() += ConstMap(pa, m, k).transpose().lazyProduct(ConstMap(g + i * m * n, m, n));
          else
            MutMap(gb, k, n).noalias() += ConstMap(pa, m, k).transpose() * ConstMap(g + i * m * n, m, n);
        }
      }
    }
  });
}

// ---- shaping ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  NodePtr xn = x.node();
  auto node = make_node(std::move(shape), xn->data, "reshape", {xn});
  return finish(node, [xn](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

namespace {

// Maps each output flat index to the input flat index for a permutation.
std::vector<std::size_t> permutation_index(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[axes[i]];
  const std::size_t n = numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[axes[i]];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axes do not match rank of " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];
  auto map = std::make_shared<std::vector<std::size_t>>(permutation_index(x.shape(), axes));
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*map)[i]];
  NodePtr xn = x.node();
  auto node = make_node(std::move(out_shape), std::move(out), "permute", {xn});
  return finish(node, [xn, map](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[(*map)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const std::size_t a = normalize_axis(axis_a, x.rank());
  const std::size_t b = normalize_axis(axis_b, x.rank());
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a], axes[b]);
  return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + to_string(first) + " and " + to_string(s));
    }
    out_shape[ax] += s[ax];
  }
  const AxisSplit sp = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax];
    const auto& d = p.node()->data;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(d.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.len + off) * sp.inner);
    }
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += len;
  }
  auto node = make_node(out_shape, std::move(out), "concat", nodes);
  return finish(node, [nodes, offsets, sp, ax](Node& self) {
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
      Node& pn = *nodes[pi];
      if (!pn.requires_grad) continue;
      pn.ensure_grad();
      const std::size_t len = pn.shape[ax];
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = self.grad.data() + (o * sp.len + offsets[pi]) * sp.inner;
        double* dst = pn.grad.data() + o * len * sp.inner;
        for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

namespace {

Tensor reduce_axis(const Tensor& x, int axis, double factor, const char* name) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto& xd = x.node()->data;
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.len; ++j) {
      const double* src = xd.data() + (o * sp.len + j) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  if (factor != 1.0) {
    for (double& v : out) v *= factor;
  }
  NodePtr xn = x.node();
  auto node = make_node(std::move(out_shape), std::move(out), name, {xn});
  return finish(node, [xn, sp, factor](Node& self) {
    xn->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* g = self.grad.data() + o * sp.inner;
      for (std::size_t j = 0; j < sp.len; ++j) {
        double* dst = xn->grad.data() + (o * sp.len + j) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += factor * g[i];
      }
    }
  });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, 1.0, "sum"); }

Tensor mean(const Tensor& x, int axis) {
  const std::size_t len = x.dim(axis);
  return reduce_axis(x, axis, 1.0 / static_cast<double>(len), "mean");
}

Tensor sum_all(const Tensor& x) {
  return reduce_axis(reshape(x, {x.numel()}), 0, 1.0, "sum_all");
}

Tensor mean_all(const Tensor& x) {
  return reduce_axis(reshape(x, {x.numel()}), 0, 1.0 / static_cast<double>(x.numel()), "mean_all");
}

// ---- row indexing ----------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  if (x.rank() < 1) throw ShapeError("gather_rows: scalar input");
  if (rows.empty()) throw ContractError("gather_rows: empty row list");
  const std::size_t r = x.shape()[0];
  const std::size_t width = x.numel() / r;
  for (std::size_t i : rows) {
    if (i >= r) {
      throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range for " +
                       to_string(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  const auto& xd = x.node()->data;
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xd.data() + rows[i] * width, width, out.data() + i * width);
  }
  NodePtr xn = x.node();
  auto node = make_node(std::move(out_shape), std::move(out), "gather_rows", {xn});
  return finish(node, [xn, rows, width](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* g = self.grad.data() + i * width;
      double* dst = xn->grad.data() + rows[i] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
    }
  });
}

Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& rows,
                        std::size_t out_rows) {
  if (x.rank() < 1 || x.shape()[0] != rows.size()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) + " indices for input " +
                     to_string(x.shape()));
  }
  if (out_rows == 0) throw ShapeError("scatter_add_rows: zero output rows");
  const std::size_t width = x.numel() / rows.size();
  for (std::size_t i : rows) {
    if (i >= out_rows) throw ShapeError("scatter_add_rows: target row out of range");
  }
  Shape out_shape = x.shape();
  out_shape[0] = out_rows;
  const auto& xd = x.node()->data;
  std::vector<double> out(out_rows * width, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = xd.data() + i * width;
    double* dst = out.data() + rows[i] * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
  }
  NodePtr xn = x.node();
  auto node = make_node(std::move(out_shape), std::move(out), "scatter_add_rows", {xn});
  return finish(node, [xn, rows, width](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* g = self.grad.data() + rows[i] * width;
      double* dst = xn->grad.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
    }
  });
}

// ---- normalization / probabilities ----------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  return softmax_impl(x, normalize_axis(axis, x.rank()), nullptr, "softmax");
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.numel()) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) +
                     " entries for input " + to_string(x.shape()));
  }
  return softmax_impl(x, x.rank() - 1, mask.data(), "masked_softmax");
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * len;
    const double mx = *std::max_element(row, row + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - lse;
  }
  NodePtr xn = x.node();
  auto node = make_node(x.shape(), std::move(out), "log_softmax", {xn});
  return finish(node, [xn, rows, len](Node& self) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < len; ++j) gsum += self.grad[r * len + j];
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t k = r * len + j;
        xn->grad[k] += self.grad[k] - std::exp(self.data[k]) * gsum;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma " + to_string(gamma.shape()) + " / beta " +
                     to_string(beta.shape()) + " do not match input " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xd = x.node()->data;
  const auto& gd = gamma.node()->data;
  const auto& bd = beta.node()->data;
  std::vector<double> out(xd.size());
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  NodePtr xn = x.node();
  NodePtr gn = gamma.node();
  NodePtr bn = beta.node();
  auto node = make_node(x.shape(), std::move(out), "layer_norm", {xn, gn, bn});
  return finish(node, [xn, gn, bn, xhat, inv_std, rows, d](Node& self) {
    const double* g = self.grad.data();
    if (gn->requires_grad) {
      gn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[r * d + j] * (*xhat)[r * d + j];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[r * d + j];
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0.0;
        double s2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double gh = g[r * d + j] * gn->data[j];
          s1 += gh;
          s2 += gh * (*xhat)[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double gh = g[r * d + j] * gn->data[j];
          xn->grad[r * d + j] +=
              (*inv_std)[r] * (gh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [R,K], got " + to_string(logits.shape()));
  const std::size_t rows = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  if (labels.size() != rows) {
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> picks(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[r]) +
                          " out of range [0," + std::to_string(k) + ")");
    }
    picks[r] = r * k + static_cast<std::size_t>(labels[r]);
  }
  Tensor lsm = log_softmax(logits);
  const auto& ld = lsm.node()->data;
  double total = 0.0;
  for (std::size_t p : picks) total -= ld[p];
  const double inv = 1.0 / static_cast<double>(rows);
  NodePtr ln = lsm.node();
  auto node = make_node({}, {total * inv}, "cross_entropy", {ln});
  return finish(node, [ln, picks, inv](Node& self) {
    ln->ensure_grad();
    for (std::size_t p : picks) ln->grad[p] -= self.grad[0] * inv;
  });
}

// ---- stochastic ------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, std::span<const std::uint8_t> keep) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  if (keep.size() != x.numel()) throw ShapeError("dropout: mask size mismatch for " + to_string(x.shape()));
  const double s = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) (*mask)[i] = keep[i] ? s : 0.0;
  const auto& xd = x.node()->data;
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * (*mask)[i];
  NodePtr xn = x.node();
  auto node = make_node(x.shape(), std::move(out), "dropout", {xn});
  return finish(node, [xn, mask](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
  });
}

// ---- differentiation -------------------------------------------------------

namespace {

// Post-order DFS: parents before children (forward topological order).
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;
  std::vector<Node*> order = topo_order(root);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->data.size()) n->backward(*n);
  }
  // Release the graph; leaves keep their accumulated gradients.
  for (Node* n : order) {
    if (n->parents.empty()) continue;
    n->backward = nullptr;
    n->parents.clear();
  }
}

std::vector<Tensor> replay_order(const Tensor& root) {
  std::vector<Node*> order = topo_order(root.node().get());
  std::unordered_map<Node*, NodePtr> owner;
  owner[root.node().get()] = root.node();
  for (Node* n : order)
    for (const auto& p : n->parents) owner[p.get()] = p;
  std::vector<Tensor> out;
  out.reserve(order.size());
  for (auto it = order.rbegin(); it != order.rend(); ++it) out.emplace_back(owner[*it]);
  return out;
}

std::string first_nonfinite_op(const Tensor& root) {
  auto finite = [](const Node* n) {
    return std::all_of(n->data.begin(), n->data.end(), [](double v) { return std::isfinite(v); });
  };
  for (Node* n : topo_order(root.node().get())) {
    if (finite(n)) continue;
    const bool inputs_ok = std::all_of(n->parents.begin(), n->parents.end(),
                                       [&](const NodePtr& p) { return finite(p.get()); });
    if (inputs_ok) return n->op;
  }
  return {};
}

Tensor custom_op(const char* name, Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs, Adjoint adjoint) {
  if (numel(shape) != values.size()) throw ShapeError(std::string(name) + ": value count mismatch");
  std::vector<NodePtr> parents;
  for (const auto& t : inputs) parents.push_back(t.node());
  auto node = make_node(std::move(shape), std::move(values), name, parents);
  return finish(node, [parents, adjoint = std::move(adjoint)](Node& self) {
    std::vector<std::span<double>> grads;
    for (const auto& p : parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        grads.emplace_back(p->grad);
      } else {
        grads.emplace_back();
      }
    }
    adjoint(self.grad, grads);
  });
}

}  // namespace cstt
