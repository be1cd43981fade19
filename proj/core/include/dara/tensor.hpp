#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dara/errors.hpp"

namespace dara {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

/// Shared storage behind a Tensor handle. All elements are float64 in
/// row-major order. `grad` is empty until the first accumulation.
struct TensorState {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Registration on the most recent tape that touched this tensor.
  std::uint64_t tape_uid = 0;
  std::size_t node_id = 0;
};

}  // namespace detail

/// Dense float64 tensor. Handles share storage: copying a Tensor aliases the
/// underlying buffer. Ops executed while a tape is active record backward
/// steps for every output whose inputs require gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double at(std::size_t flat_index) const;
  /// Value of a one-element tensor.
  double value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Zero-fills an existing grad buffer (no-op when none was allocated).
  void zero_grad();

  /// Deep copy of shape and data; the clone is a detached leaf.
  Tensor clone() const;

  /// Stable identity of the underlying storage (registry keys, optimizer
  /// slots, parameter dedup).
  const void* id() const { return st_.get(); }
  std::size_t node_id() const;

  // -- autodiff extension points -------------------------------------------
  // Used by ops with hand-derived backward passes (see autodiff::record_op).
  // Tensors are shared handles, so accumulation mutates the shared state and
  // is allowed through const handles.
  std::span<const double> grad_view() const;
  /// Grad buffer for accumulation, allocated zeroed on first use.
  std::span<double> grad_accumulator() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorState> st) : st_(std::move(st)) {}
  detail::TensorState& st();
  const detail::TensorState& st() const;

  std::shared_ptr<detail::TensorState> st_;
  friend class Tape;
};

/// Recorded computation: one entry per executed op, in execution order
/// (which is topological by construction). backward() replays the records
/// once each, in reverse.
class Tape {
 public:
  struct Record {
    const char* op;
    std::vector<std::size_t> inputs;
    std::size_t output;
    std::function<void()> backward;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and sweeps the records in reverse. The loss
  /// must be a one-element tensor registered on this tape.
  void backward(const Tensor& loss);

  std::size_t num_records() const { return records_.size(); }
  const Record& record(std::size_t i) const { return records_[i]; }
  std::size_t num_nodes() const { return nodes_.size(); }

  /// Tape that ops on the current thread record to, or nullptr.
  static Tape* active();

  /// Appends a record; assigns node ids to unregistered operands.
  void push(const char* op, std::span<const Tensor> inputs, Tensor& output,
            std::function<void()> backward_fn);

 private:
  std::size_t register_node(const Tensor& t);

  std::uint64_t uid_;
  std::vector<Record> records_;
  std::vector<std::shared_ptr<detail::TensorState>> nodes_;
};

/// RAII guard making a tape the active one for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace autodiff {

/// True when a tape is active and any input requires grad. When it returns
/// true the caller must mark the output and push a backward closure via
/// record_op.
bool should_record(std::span<const Tensor> inputs);

/// Marks `out` as requiring grad and records the op on the active tape.
/// No-op when should_record(inputs) is false.
void record_op(const char* name, std::span<const Tensor> inputs, Tensor& out,
               std::function<void()> backward_fn);

}  // namespace autodiff

// ---- ops -------------------------------------------------------------------
// All ops validate shapes and throw ShapeError naming both operands on
// mismatch. 2-D operands are [rows x cols]; vectors are 1-D.

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
/// Ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

/// [N x d] + [d], the only broadcast in the engine.
Tensor add_bias(const Tensor& x, const Tensor& b);

/// a * x + b, elementwise with scalar coefficients.
Tensor affine(const Tensor& x, double a, double b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Row-wise softmax with per-row max subtraction. [m x n], n >= 1.
Tensor softmax_rows(const Tensor& x);

/// Per-row normalization of a [N x d] input to zero mean / unit variance
/// (biased variance, eps inside the square root), then gamma * xhat + beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

/// Sum of all elements -> shape {1}.
Tensor sum_all(const Tensor& x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
/// One element by flat index -> shape {1}.
Tensor pick(const Tensor& x, std::size_t flat_index);

/// Row lookup: [V x d] table gathered by ids -> [N x d]. Repeated ids
/// accumulate their gradients into the same table row.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

}  // namespace dara
