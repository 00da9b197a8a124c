#include "mdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "mdg/errors.hpp"

namespace mdg {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Wraps a freshly computed value into a graph node. History is kept only when
// recording is on and some input carries grad.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<const Tensor*> inputs,
                   const char* op, std::function<void(Node&)> backward) {
  auto n = new_node(std::move(shape), std::move(value));
  n->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const Tensor* t : inputs) any = any || t->requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->inputs.push_back(t->node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }

// Index maps of a and b onto a broadcast output; empty map means identity.
struct BroadcastMap {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ContractViolation("shapes not broadcastable: " + shape_str(a) + " vs " +
                              shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For each element of `out`, the linear index into a tensor of shape `in`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t total = numel(out);
  std::vector<std::size_t> idx(total);
  if (in == out) {
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    return idx;
  }
  const std::size_t n_in = numel(in);
  if (n_in == 1) {
    std::fill(idx.begin(), idx.end(), 0);
    return idx;
  }
  // Strides of `in` aligned to out dims, 0 where broadcast.
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t d = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    stride[o] = in[d] == 1 ? 0 : s;
    s *= in[d];
  }
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < total; ++i) {
    idx[i] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

std::shared_ptr<BroadcastMap> make_broadcast(const Shape& a, const Shape& b) {
  auto m = std::make_shared<BroadcastMap>();
  m->out = broadcast_shape(a, b);
  if (a != m->out) m->ia = broadcast_index(a, m->out);
  if (b != m->out) m->ib = broadcast_index(b, m->out);
  return m;
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA dfa, DB dfb) {
  auto map = make_broadcast(a.shape(), b.shape());
  const std::size_t total = numel(map->out);
  std::vector<double> out(total);
  const auto av = a.data();
  const auto bv = b.data();
  const bool ida = map->ia.empty();
  const bool idb = map->ib.empty();
  for (std::size_t i = 0; i < total; ++i) {
    out[i] = f(av[ida ? i : map->ia[i]], bv[idb ? i : map->ib[i]]);
  }
  return make_result(map->out, std::move(out), {&a, &b}, name, [map, dfa, dfb](Node& n) {
    Node& na = input(n, 0);
    Node& nb = input(n, 1);
    const bool ida = map->ia.empty();
    const bool idb = map->ib.empty();
    if (na.requires_grad) na.ensure_grad();
    if (nb.requires_grad) nb.ensure_grad();
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      const std::size_t ja = ida ? i : map->ia[i];
      const std::size_t jb = idb ? i : map->ib[i];
      const double x = na.value[ja];
      const double y = nb.value[jb];
      if (na.requires_grad) na.grad[ja] += n.grad[i] * dfa(x, y, n.value[i]);
      if (nb.requires_grad) nb.grad[jb] += n.grad[i] * dfb(x, y, n.value[i]);
    }
  });
}

template <class F, class DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF df) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {&a}, name, [df](Node& n) {
    Node& na = input(n, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      na.grad[i] += n.grad[i] * df(na.value[i], n.value[i]);
    }
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double wrap_value(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);  // [-pi, pi]
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(new_node({}, {0.0})) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (mdg::numel(shape) != values.size()) {
    throw ContractViolation("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
  }
  node_ = new_node(std::move(shape), std::move(values));
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = mdg::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = mdg::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

double Tensor::item() const {
  require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  require(index.size() == rank(), "index rank mismatch");
  std::size_t lin = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    require(i < node_->shape[d], "index out of range");
    lin = lin * node_->shape[d] + i;
    ++d;
  }
  return node_->value[lin];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->ensure_grad();
  } else {
    node_->grad.clear();
  }
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require(node_->requires_grad, "backward() on a tensor without gradient history");
  require(numel() == 1, "backward() needs a scalar loss, got shape " + shape_str(shape()));

  // Iterative post-order DFS yields inputs before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::clone_leaf() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Mask Mask::all(Shape shape, bool value) {
  Mask m;
  m.keep.assign(numel(shape), value ? 1 : 0);
  m.shape = std::move(shape);
  return m;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor sin(const Tensor& a) {
  return unary_op(
      a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary_op(
      a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Tensor pow(const Tensor& a, double p) {
  return unary_op(
      a, "pow_const", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor smooth_l1(const Tensor& a, double beta) {
  require(beta > 0.0, "smooth_l1 beta must be positive");
  return unary_op(
      a, "smooth_l1",
      [beta](double x) {
        const double ax = std::fabs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x, double) {
        const double ax = std::fabs(x);
        if (ax < beta) return x / beta;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Tensor wrap_angle(const Tensor& a) {
  return unary_op(
      a, "wrap_angle", [](double x) { return wrap_value(x); }, [](double, double) { return 1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, double exponent) {
  auto need_b = [&]() -> const Tensor& {
    require(b != nullptr, "binary elementwise op needs a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::div: return div(a, need_b());
    case ElementwiseOp::neg: return neg(a);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::sqrt: return sqrt(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::gelu: return gelu(a);
    case ElementwiseOp::sin: return sin(a);
    case ElementwiseOp::cos: return cos(a);
    case ElementwiseOp::pow_const: return pow(a, exponent);
  }
  throw ContractViolation("unknown elementwise op");
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2 operands");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t M = as[as.size() - 2];
  const std::size_t K = as[as.size() - 1];
  const std::size_t K2 = bs[bs.size() - 2];
  const std::size_t N = bs[bs.size() - 1];
  if (K != K2) {
    throw ContractViolation("matmul inner dimension mismatch: " + shape_str(as) + " x " +
                            shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch);
  const std::size_t nb = numel(batch);
  auto a_idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(a_batch, batch));
  auto b_idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(b_batch, batch));

  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(nb * M * N, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t p = 0; p < nb; ++p) {
    const double* Ap = A + (*a_idx)[p] * M * K;
    const double* Bp = B + (*b_idx)[p] * K * N;
    double* Cp = out.data() + p * M * N;
    for (std::size_t i = 0; i < M; ++i) {
      double* crow = Cp + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = Ap[i * K + k];
        const double* brow = Bp + k * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, "matmul",
                     [a_idx, b_idx, nb, M, K, N](Node& n) {
                       Node& na = input(n, 0);
                       Node& nbn = input(n, 1);
                       if (na.requires_grad) na.ensure_grad();
                       if (nbn.requires_grad) nbn.ensure_grad();
                       for (std::size_t p = 0; p < nb; ++p) {
                         const double* G = n.grad.data() + p * M * N;
                         const std::size_t ao = (*a_idx)[p] * M * K;
                         const std::size_t bo = (*b_idx)[p] * K * N;
                         if (na.requires_grad) {
                           const double* Bp = nbn.value.data() + bo;
                           double* dA = na.grad.data() + ao;
                           for (std::size_t i = 0; i < M; ++i) {
                             const double* grow = G + i * N;
                             for (std::size_t k = 0; k < K; ++k) {
                               const double* brow = Bp + k * N;
                               double s = 0.0;
                               for (std::size_t j = 0; j < N; ++j) s += grow[j] * brow[j];
                               dA[i * K + k] += s;
                             }
                           }
                         }
                         if (nbn.requires_grad) {
                           const double* Ap = na.value.data() + ao;
                           double* dB = nbn.grad.data() + bo;
                           for (std::size_t i = 0; i < M; ++i) {
                             const double* grow = G + i * N;
                             for (std::size_t k = 0; k < K; ++k) {
                               const double aik = Ap[i * K + k];
                               double* drow = dB + k * N;
                               for (std::size_t j = 0; j < N; ++j) drow[j] += aik * grow[j];
                             }
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Softmax / layernorm

Tensor softmax_lastdim(const Tensor& a, const Mask* mask) {
  require(a.rank() >= 1, "softmax needs rank >= 1");
  const std::size_t n = a.shape().back();
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  std::vector<std::size_t> midx;
  if (mask != nullptr) {
    if (broadcast_shape(mask->shape, a.shape()) != a.shape()) {
      throw ContractViolation("softmax mask " + shape_str(mask->shape) +
                              " does not broadcast onto " + shape_str(a.shape()));
    }
    midx = broadcast_index(mask->shape, a.shape());
  }
  const auto av = a.data();
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !mask->keep[midx[base + j]]) continue;
      mx = std::max(mx, av[base + j]);
      any = true;
    }
    if (!any) throw ContractViolation("softmax row with every entry masked");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !mask->keep[midx[base + j]]) continue;
      out[base + j] = std::exp(av[base + j] - mx);
      s += out[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= s;
  }
  return make_result(a.shape(), std::move(out), {&a}, "softmax", [n, rows](Node& node) {
    Node& na = input(node, 0);
    na.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += node.grad[base + j] * node.value[base + j];
      for (std::size_t j = 0; j < n; ++j) {
        na.grad[base + j] += node.value[base + j] * (node.grad[base + j] - dot);
      }
    }
  });
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require(eps > 0.0, "layernorm eps must be positive");
  require(a.rank() >= 1, "layernorm needs rank >= 1");
  const std::size_t n = a.shape().back();
  require(gain.numel() == n && bias.numel() == n, "layernorm gain/bias must match last dim");
  const std::size_t rows = a.numel() / n;
  const auto av = a.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(av.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += av[base + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = av[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (av[base + j] - mean) * is;
      (*xhat)[base + j] = xh;
      out[base + j] = xh * gv[j] + bv[j];
    }
  }
  return make_result(
      a.shape(), std::move(out), {&a, &gain, &bias}, "layernorm", [xhat, inv_std, n, rows](Node& node) {
        Node& na = input(node, 0);
        Node& ng = input(node, 1);
        Node& nbias = input(node, 2);
        if (na.requires_grad) na.ensure_grad();
        if (ng.requires_grad) ng.ensure_grad();
        if (nbias.requires_grad) nbias.ensure_grad();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * n;
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double g = node.grad[base + j];
            const double xh = (*xhat)[base + j];
            if (ng.requires_grad) ng.grad[j] += g * xh;
            if (nbias.requires_grad) nbias.grad[j] += g;
            const double dxh = g * ng.value[j];
            mean_d += dxh;
            mean_dx += dxh * xh;
          }
          if (!na.requires_grad) continue;
          mean_d *= inv_n;
          mean_dx *= inv_n;
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = node.grad[base + j] * ng.value[j];
            na.grad[base + j] += is * (dxh - mean_d - (*xhat)[base + j] * mean_dx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ContractViolation("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a}, "reshape", [](Node& n) {
    Node& na = input(n, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[i] += n.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  require(axes.size() == in.size(), "permute axes rank mismatch");
  std::vector<bool> used(in.size(), false);
  for (std::size_t ax : axes) {
    require(ax < in.size() && !used[ax], "permute axes must be a permutation");
    used[ax] = true;
  }
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * in[d];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = in[axes[d]];
    stride[d] = in_stride[axes[d]];
  }
  const std::size_t total = a.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*src)[i] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out_shape[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  const auto av = a.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = av[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), {&a}, "permute", [src](Node& n) {
    Node& na = input(n, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[(*src)[i]] += n.grad[i];
  });
}

Tensor transpose_last2(const Tensor& a) {
  require(a.rank() >= 2, "transpose_last2 needs rank >= 2");
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {&a}, "sum_all", [](Node& n) {
    Node& na = input(n, 0);
    na.ensure_grad();
    for (double& g : na.grad) g += n.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  require(axis < s.size(), "axis out of range");
  AxisSplit sp{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  const auto av = a.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.len; ++k) {
      const double* src = av.data() + (o * sp.len + k) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(reduced_shape(a.shape(), axis, keepdim), std::move(out), {&a}, "sum_axis",
                     [sp](Node& n) {
                       Node& na = input(n, 0);
                       na.ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t k = 0; k < sp.len; ++k) {
                           double* dst = na.grad.data() + (o * sp.len + k) * sp.inner;
                           const double* g = n.grad.data() + o * sp.inner;
                           for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
                         }
                       }
                     });
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank() && a.dim(axis) > 0, "mean over empty axis");
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor max_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  require(sp.len > 0, "max over empty axis");
  const auto av = a.data();
  std::vector<double> out(sp.outer * sp.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.len * sp.inner + i;
      for (std::size_t k = 1; k < sp.len; ++k) {
        const std::size_t idx = (o * sp.len + k) * sp.inner + i;
        if (av[idx] > av[best]) best = idx;
      }
      out[o * sp.inner + i] = av[best];
      (*arg)[o * sp.inner + i] = best;
    }
  }
  return make_result(reduced_shape(a.shape(), axis, keepdim), std::move(out), {&a}, "max_axis",
                     [arg](Node& n) {
                       Node& na = input(n, 0);
                       na.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i) na.grad[(*arg)[i]] += n.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Slicing and joining

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  require(start + length <= sp.len, "slice out of range on axis " + std::to_string(axis) +
                                        " of " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const auto av = a.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = av.data() + (o * sp.len + start) * sp.inner;
    std::copy(src, src + length * sp.inner, out.data() + o * length * sp.inner);
  }
  return make_result(std::move(out_shape), std::move(out), {&a}, "slice",
                     [sp, start, length](Node& n) {
                       Node& na = input(n, 0);
                       na.ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         double* dst = na.grad.data() + (o * sp.len + start) * sp.inner;
                         const double* g = n.grad.data() + o * length * sp.inner;
                         for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += g[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    require(s.size() == s0.size(), "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis) {
        require(s[d] == s0[d], "concat shape mismatch: " + shape_str(s) + " vs " + shape_str(s0));
      }
    }
    lens.push_back(s[axis]);
    total_len += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_len;
  const AxisSplit sp = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].data();
    const std::size_t chunk = lens[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(pv.data() + o * chunk, pv.data() + (o + 1) * chunk,
                out.data() + (o * sp.len + offset) * sp.inner);
    }
    offset += lens[p];
  }
  std::vector<const Tensor*> ins;
  for (const Tensor& t : parts) ins.push_back(&t);
  return make_result(std::move(out_shape), std::move(out), ins, "concat", [sp, lens](Node& n) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      Node& np = input(n, p);
      const std::size_t chunk = lens[p] * sp.inner;
      if (np.requires_grad) {
        np.ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* g = n.grad.data() + (o * sp.len + offset) * sp.inner;
          double* dst = np.grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
        }
      }
      offset += lens[p];
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "stack of zero tensors");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& t : parts) {
    require(axis <= t.rank(), "stack axis out of range");
    Shape s = t.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(t, s));
  }
  return concat(expanded, axis);
}

Tensor index_select(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& indices) {
  const AxisSplit sp = split_axis(a.shape(), axis);
  for (std::size_t i : indices) require(i < sp.len, "index_select index out of range");
  Shape out_shape = a.shape();
  out_shape[axis] = indices.size();
  const auto av = a.data();
  const std::size_t m = indices.size();
  std::vector<double> out(sp.outer * m * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < m; ++k) {
      const double* src = av.data() + (o * sp.len + indices[k]) * sp.inner;
      std::copy(src, src + sp.inner, out.data() + (o * m + k) * sp.inner);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {&a}, "index_select",
                     [sp, indices](Node& n) {
                       Node& na = input(n, 0);
                       na.ensure_grad();
                       const std::size_t m = indices.size();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t k = 0; k < m; ++k) {
                           double* dst = na.grad.data() + (o * sp.len + indices[k]) * sp.inner;
                           const double* g = n.grad.data() + (o * m + k) * sp.inner;
                           for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
                         }
                       }
                     });
}

Tensor mask_multiply(const Tensor& a, const Mask& mask) {
  if (broadcast_shape(mask.shape, a.shape()) != a.shape()) {
    throw ContractViolation("mask " + shape_str(mask.shape) + " does not broadcast onto " +
                            shape_str(a.shape()));
  }
  auto midx = std::make_shared<std::vector<std::size_t>>(broadcast_index(mask.shape, a.shape()));
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.keep);
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = (*keep)[(*midx)[i]] ? av[i] : 0.0;
  return make_result(a.shape(), std::move(out), {&a}, "mask_multiply", [midx, keep](Node& n) {
    Node& na = input(n, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if ((*keep)[(*midx)[i]]) na.grad[i] += n.grad[i];
    }
  });
}

}  // namespace mdg
