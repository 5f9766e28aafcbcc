#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clpf/autodiff/matrix.hpp"

namespace clpf::ad {

/// Raised when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// log of a non-positive value, division by zero.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of a tape: mixing tapes, non-scalar roots, reuse after backward.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kAffine,
  kSum,
  kSumRows,
  kSumCols,
  kMean,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSoftplus,
  kSquare,
  kNeg,
  kScale,
  kAddScalar,
  kClamp,
  kConcat,
  kSlice,
  kBroadcast,
  kLogAbsDet,
  kCustom,
};

const char* op_name(OpKind kind);

class Tape;

/// A value flowing through a computation. Tensors created from plain matrices
/// are constants; tensors produced from at least one taped operand are
/// recorded on that operand's tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Matrix value) : value_(std::make_shared<const Matrix>(std::move(value))) {}  // NOLINT
  explicit Tensor(std::shared_ptr<const Matrix> value) : value_(std::move(value)) {}

  static Tensor scalar(double v) { return Tensor(Matrix::scalar(v)); }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(Matrix(rows, cols)); }
  static Tensor filled(std::size_t rows, std::size_t cols, double v) {
    return Tensor(Matrix(rows, cols, v));
  }

  bool defined() const { return value_ != nullptr; }
  const Matrix& value() const { return *value_; }
  const std::shared_ptr<const Matrix>& shared_value() const { return value_; }
  std::size_t rows() const { return value_->rows(); }
  std::size_t cols() const { return value_->cols(); }
  double item() const;
  double operator()(std::size_t r, std::size_t c) const { return (*value_)(r, c); }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

  /// Same value, detached from any tape.
  Tensor detach() const { return Tensor(value_); }

 private:
  friend class Tape;
  std::shared_ptr<const Matrix> value_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Backward rule of a custom node: receives the output gradient and adds the
/// input gradients into pre-sized zero matrices.
using CustomBackward = std::function<void(const Matrix& grad_out, std::span<Matrix> grad_inputs)>;

/// Gradients of a scalar root with respect to every node of a tape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<Matrix> grads) : tape_(tape), grads_(std::move(grads)) {}

  /// Gradient of the root with respect to `t`; zeros if `t` does not influence it.
  Matrix of(const Tensor& t) const;
  /// nullptr when no gradient reached the node.
  const Matrix* find(int node) const;
  std::size_t size() const { return grads_.size(); }

 private:
  const Tape* tape_ = nullptr;
  std::vector<Matrix> grads_;
};

struct OpAux {
  double a0 = 0.0;
  double a1 = 0.0;
  std::size_t i0 = 0;
  std::size_t i1 = 0;
};

/// Define-by-run record of primitive operations. A tape is single-owner; it
/// is consumed by `backward` and can be `reset` for the next forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Tensor variable(Matrix value);
  /// Differentiable leaf bound to parameter `index` of a store.
  Tensor parameter(std::size_t index, std::shared_ptr<const Matrix> value);

  /// Reverse pass from a 1x1 root. Marks the tape consumed.
  Gradients backward(const Tensor& root);

  void reset();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<std::pair<std::size_t, int>>& parameter_nodes() const { return params_; }

  /// Records a node. Used by the primitive implementations; `inputs` are the
  /// operands (constants allowed).
  Tensor record(OpKind kind, std::shared_ptr<const Matrix> out, std::span<const Tensor> inputs,
                OpAux aux = {}, CustomBackward custom = {});

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> parents;  // -1 for constant operands
    std::shared_ptr<const Matrix> value;
    std::vector<std::shared_ptr<const Matrix>> operand_values;
    OpAux aux;
    CustomBackward custom;
  };

  void backward_node(const Node& node, const Matrix& g, std::vector<Matrix>& grads) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, int>> params_;
  bool consumed_ = false;
};

// Elementwise binary ops broadcast operands of shape 1xC, Rx1 or 1x1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + b with b of shape 1 x out.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor sum(const Tensor& x);
/// Sum over rows: R x C -> 1 x C.
Tensor sum_rows(const Tensor& x);
/// Sum over columns: R x C -> R x 1.
Tensor sum_cols(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
/// Elementwise clamp; the gradient is zero where the bound is active.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Column-wise concatenation of operands with equal row counts (1-row operands broadcast).
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor broadcast(const Tensor& x, std::size_t rows, std::size_t cols);
/// Row r of `x` holds a d x d matrix in row-major order; returns log|det| per row.
Tensor logabsdet(const Tensor& x, std::size_t d);
/// Node with a caller-supplied forward value and backward rule.
Tensor custom(Matrix out, std::span<const Tensor> inputs, CustomBackward backward);

/// Generic entry point by op kind, for ops whose only arguments are tensors.
Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }

/// True iff every element is finite.
bool all_finite(const Matrix& m);

}  // namespace clpf::ad
