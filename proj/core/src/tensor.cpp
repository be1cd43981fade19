#include "dara/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace dara {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

std::vector<double>& ensure_grad(detail::TensorState& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void check_2d(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected 2-D operand, got " + shape_str(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_defined(a, op);
  check_defined(b, op);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// C[m x n] += A[m x k] . B[k x n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] . B[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
      crow[j] += s;
    }
  }
}

// C[k x n] += A[m x k]^T . B[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      double* crow = c + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

// ---- Shape helpers ----------------------------------------------------------

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

detail::TensorState& Tensor::st() {
  if (!st_) throw ContractError("use of undefined tensor");
  return *st_;
}

const detail::TensorState& Tensor::st() const {
  if (!st_) throw ContractError("use of undefined tensor");
  return *st_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  auto st = std::make_shared<detail::TensorState>();
  st->data.assign(numel(shape), value);
  st->shape = std::move(shape);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (numel(shape) != data.size())
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  auto st = std::make_shared<detail::TensorState>();
  st->shape = std::move(shape);
  st->data = std::move(data);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return st().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = st().shape;
  if (i >= s.size()) throw ShapeError("dim index out of range for " + shape_str(s));
  return s[i];
}

std::size_t Tensor::size() const { return st().data.size(); }

std::span<double> Tensor::data() { return st().data; }
std::span<const double> Tensor::data() const { return st().data; }

double Tensor::at(std::size_t flat_index) const {
  const auto& d = st().data;
  if (flat_index >= d.size()) throw ContractError("flat index out of range");
  return d[flat_index];
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a one-element tensor, got " +
                                       shape_str(shape()));
  return st().data[0];
}

bool Tensor::requires_grad() const { return st().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  st().requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !st().grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& s = st();
  if (s.grad.empty())
    throw ContractError("grad() called on a tensor with no accumulated gradient");
  return s.grad;
}

void Tensor::zero_grad() {
  auto& s = st();
  std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  const auto& s = st();
  return Tensor::from_data(s.shape, s.data, false);
}

std::size_t Tensor::node_id() const { return st().node_id; }

std::span<const double> Tensor::grad_view() const { return st().grad; }

std::span<double> Tensor::grad_accumulator() const {
  if (!st_) throw ContractError("use of undefined tensor");
  return ensure_grad(*st_);
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() : uid_(g_tape_counter.fetch_add(1)) {}

Tape* Tape::active() { return g_active_tape; }

std::size_t Tape::register_node(const Tensor& t) {
  auto& s = *t.st_;
  if (s.tape_uid == uid_) return s.node_id;
  s.tape_uid = uid_;
  s.node_id = nodes_.size();
  nodes_.push_back(t.st_);
  return s.node_id;
}

void Tape::push(const char* op, std::span<const Tensor> inputs, Tensor& output,
                std::function<void()> backward_fn) {
  Record rec;
  rec.op = op;
  rec.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) rec.inputs.push_back(register_node(in));
  rec.output = register_node(output);
  rec.backward = std::move(backward_fn);
  records_.push_back(std::move(rec));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a one-element tensor");
  if (loss.st_->tape_uid != uid_)
    throw ContractError("backward: loss is not registered on this tape");
  ensure_grad(*loss.st_)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---- recording helpers -------------------------------------------------------

namespace autodiff {

bool should_record(std::span<const Tensor> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

void record_op(const char* name, std::span<const Tensor> inputs, Tensor& out,
               std::function<void()> backward_fn) {
  if (!should_record(inputs)) return;
  out.set_requires_grad(true);
  g_active_tape->push(name, inputs, out, std::move(backward_fn));
}

}  // namespace autodiff

namespace {

void maybe_record(const char* name, std::initializer_list<Tensor> inputs, Tensor& out,
                  std::function<void()> backward_fn) {
  autodiff::record_op(name, std::span<const Tensor>(inputs.begin(), inputs.size()), out,
                      std::move(backward_fn));
}

}  // namespace

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  gemm_nn_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  maybe_record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
    auto g = out.grad_view();
    if (g.empty()) return;
    if (a.requires_grad())
      gemm_nt_acc(g.data(), b.data().data(), a.grad_accumulator().data(), m, n, k);
    if (b.requires_grad())
      gemm_tn_acc(a.data().data(), g.data(), b.grad_accumulator().data(), m, k, n);
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  check_2d(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) os[j * m + i] = xs[i * n + j];
  maybe_record("transpose", {x}, out, [x, out, m, n]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto gx = x.grad_accumulator();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += g[j * m + i];
  });
  return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  const std::size_t n = a.size();
  Tensor out = Tensor::zeros(a.shape());
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t i = 0; i < n; ++i) os[i] = fwd(as[i], bs[i]);
  maybe_record(name, {a, b}, out, [a, b, out, n, bwd]() mutable {
    auto g = out.grad_view();
    if (g.empty()) return;
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    if (!ga && !gb) return;
    auto as = a.data();
    auto bs = b.data();
    std::span<double> agrad = ga ? a.grad_accumulator() : std::span<double>{};
    std::span<double> bgrad = gb ? b.grad_accumulator() : std::span<double>{};
    for (std::size_t i = 0; i < n; ++i) {
      auto [da, db] = bwd(as[i], bs[i], g[i]);
      if (ga) agrad[i] += da;
      if (gb) bgrad[i] += db;
    }
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g) { return std::pair{g / y, -g * x / (y * y)}; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double g) {
        return x <= y ? std::pair{g, 0.0} : std::pair{0.0, g};
      });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g) {
        return x >= y ? std::pair{g, 0.0} : std::pair{0.0, g};
      });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check_2d(x, "add_bias");
  check_defined(b, "add_bias");
  if (b.ndim() != 1 || b.dim(0) != x.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match row width of " +
                     shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) os[i * cols + j] = xs[i * cols + j] + bs[j];
  maybe_record("add_bias", {x, b}, out, [x, b, out, rows, cols]() mutable {
    auto g = out.grad_view();
    if (g.empty()) return;
    if (x.requires_grad()) {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
    }
  });
  return out;
}

Tensor affine(const Tensor& x, double a, double b) {
  check_defined(x, "affine");
  const std::size_t n = x.size();
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < n; ++i) os[i] = a * xs[i] + b;
  maybe_record("affine", {x}, out, [x, out, a, n]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < n; ++i) gx[i] += a * g[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  const std::size_t n = x.size();
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < n; ++i) os[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  // Subgradient at exactly 0 is 0.
  maybe_record("relu", {x}, out, [x, out, n]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto xs = x.data();
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < n; ++i)
      if (xs[i] > 0.0) gx[i] += g[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  check_defined(x, "sigmoid");
  const std::size_t n = x.size();
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < n; ++i) os[i] = 1.0 / (1.0 + std::exp(-xs[i]));
  maybe_record("sigmoid", {x}, out, [x, out, n]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto ys = out.data();
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * ys[i] * (1.0 - ys[i]);
  });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  check_2d(x, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = xs.data() + i * cols;
    double* orow = os.data() + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < cols; ++j) orow[j] /= total;
  }
  maybe_record("softmax_rows", {x}, out, [x, out, rows, cols]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto ys = out.data();
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* y = ys.data() + i * cols;
      const double* gr = g.data() + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * y[j];
      double* gxr = gx.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) gxr[j] += y[j] * (gr[j] - dot);
    }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_2d(x, "layernorm");
  check_defined(gamma, "layernorm");
  check_defined(beta, "layernorm");
  if (eps <= 0.0) throw ContractError("layernorm: eps must be positive");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != cols || beta.ndim() != 1 || beta.dim(0) != cols)
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(cols) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));

  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  auto os = out.data();
  // Saved for backward.
  auto xhat = std::make_shared<std::vector<double>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = xs.data() + i * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = istd;
    double* xh = xhat->data() + i * cols;
    double* orow = os.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      xh[j] = (row[j] - mean) * istd;
      orow[j] = gs[j] * xh[j] + bs[j];
    }
  }
  maybe_record("layernorm", {x, gamma, beta}, out,
               [x, gamma, beta, out, rows, cols, xhat, inv_std]() mutable {
                 auto g = out.grad_view();
                 if (g.empty()) return;
                 auto gs = gamma.data();
                 if (gamma.requires_grad()) {
                   auto gg = gamma.grad_accumulator();
                   for (std::size_t i = 0; i < rows; ++i)
                     for (std::size_t j = 0; j < cols; ++j)
                       gg[j] += g[i * cols + j] * (*xhat)[i * cols + j];
                 }
                 if (beta.requires_grad()) {
                   auto gb = beta.grad_accumulator();
                   for (std::size_t i = 0; i < rows; ++i)
                     for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
                 }
                 if (x.requires_grad()) {
                   auto gx = x.grad_accumulator();
                   const double inv_n = 1.0 / static_cast<double>(cols);
                   for (std::size_t i = 0; i < rows; ++i) {
                     const double* gr = g.data() + i * cols;
                     const double* xh = xhat->data() + i * cols;
                     double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                     for (std::size_t j = 0; j < cols; ++j) {
                       const double dxh = gr[j] * gs[j];
                       mean_dxhat += dxh;
                       mean_dxhat_xhat += dxh * xh[j];
                     }
                     mean_dxhat *= inv_n;
                     mean_dxhat_xhat *= inv_n;
                     const double istd = (*inv_std)[i];
                     double* gxr = gx.data() + i * cols;
                     for (std::size_t j = 0; j < cols; ++j) {
                       const double dxh = gr[j] * gs[j];
                       gxr[j] += istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                     }
                   }
                 }
               });
  return out;
}

Tensor sum_all(const Tensor& x) {
  check_defined(x, "sum_all");
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  maybe_record("sum_all", {x}, out, [x, out]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto gx = x.grad_accumulator();
    for (double& v : gx) v += g[0];
  });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_cols");
  check_2d(b, "concat_cols");
  if (a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: row counts disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out = Tensor::zeros({rows, ca + cb});
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(as.data() + i * ca, ca, os.data() + i * (ca + cb));
    std::copy_n(bs.data() + i * cb, cb, os.data() + i * (ca + cb) + ca);
  }
  maybe_record("concat_cols", {a, b}, out, [a, b, out, rows, ca, cb]() mutable {
    auto g = out.grad_view();
    if (g.empty()) return;
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
    }
  });
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  std::size_t rows = 0;
  const std::size_t cols = parts[0].defined() ? parts[0].dim(1) : 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_rows");
    if (p.dim(1) != cols)
      throw ShapeError("concat_rows: column widths disagree, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  Tensor out = Tensor::zeros({rows, cols});
  auto os = out.data();
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data().data(), p.size(), os.data() + r * cols);
    r += p.dim(0);
  }
  std::vector<Tensor> held(parts.begin(), parts.end());
  autodiff::record_op("concat_rows", parts, out, [held, out, cols]() mutable {
    auto g = out.grad_view();
    if (g.empty()) return;
    std::size_t r = 0;
    for (Tensor& p : held) {
      const std::size_t n = p.size();
      if (p.requires_grad()) {
        auto gp = p.grad_accumulator();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[r * cols + i];
      }
      r += p.dim(0);
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  check_2d(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (c0 >= c1 || c1 > cols)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_str(x.shape()));
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  auto xs = x.data();
  auto os = out.data();
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(xs.data() + i * cols + c0, w, os.data() + i * w);
  maybe_record("slice_cols", {x}, out, [x, out, rows, cols, c0, w]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * cols + c0 + j] += g[i * w + j];
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  check_2d(x, "slice_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (r0 >= r1 || r1 > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") invalid for " + shape_str(x.shape()));
  const std::size_t h = r1 - r0;
  Tensor out = Tensor::zeros({h, cols});
  std::copy_n(x.data().data() + r0 * cols, h * cols, out.data().data());
  maybe_record("slice_rows", {x}, out, [x, out, cols, r0, h]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < h * cols; ++i) gx[r0 * cols + i] += g[i];
  });
  return out;
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  check_defined(x, "pick");
  if (flat_index >= x.size())
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     shape_str(x.shape()));
  Tensor out = Tensor::scalar(x.data()[flat_index]);
  maybe_record("pick", {x}, out, [x, out, flat_index]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !x.requires_grad()) return;
    x.grad_accumulator()[flat_index] += g[0];
  });
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  check_2d(table, "gather_rows");
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::size_t id : ids)
    if (id >= v)
      throw DataError("gather_rows: id " + std::to_string(id) + " out of range for table " +
                      shape_str(table.shape()));
  Tensor out = Tensor::zeros({ids.size(), d});
  auto ts = table.data();
  auto os = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(ts.data() + ids[i] * d, d, os.data() + i * d);
  std::vector<std::size_t> held(ids.begin(), ids.end());
  maybe_record("gather_rows", {table}, out, [table, out, held, d]() mutable {
    auto g = out.grad_view();
    if (g.empty() || !table.requires_grad()) return;
    auto gt = table.grad_accumulator();
    for (std::size_t i = 0; i < held.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[held[i] * d + j] += g[i * d + j];
  });
  return out;
}

}  // namespace dara
