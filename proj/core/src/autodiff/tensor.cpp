#include "clpf/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clpf::ad {

namespace {

using MatrixPtr = std::shared_ptr<const Matrix>;

MatrixPtr share(Matrix m) { return std::make_shared<const Matrix>(std::move(m)); }

void check_finite(const Matrix& m, OpKind kind) {
  if (!all_finite(m)) {
    throw NumericError(std::string("non-finite value produced by '") + op_name(kind) + "'");
  }
}

std::string shapes(const Matrix& a, const Matrix& b) {
  return a.shape_string() + " vs " + b.shape_string();
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const Matrix& ma, const Matrix& mb,
                          const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shapes(ma, mb));
}

template <typename F>
Matrix broadcast_binary(const Matrix& a, const Matrix& b, const char* op, F f) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), a, b, op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), a, b, op);
  Matrix out(rows, cols);
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const bool ar = a.rows() == 1, ac = a.cols() == 1, br = b.rows() == 1, bc = b.cols() == 1;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = f(a(ar ? 0 : r, ac ? 0 : c), b(br ? 0 : r, bc ? 0 : c));
    }
  }
  return out;
}

// Adds `g` (full broadcast shape) into `acc` (operand shape), reducing broadcast dims.
template <typename F>
void reduce_into(Matrix& acc, const Matrix& g, F weight) {
  if (acc.same_shape(g)) {
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += weight(i / g.cols(), i % g.cols()) * g[i];
    return;
  }
  const bool rr = acc.rows() == 1, cc = acc.cols() == 1;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      acc(rr ? 0 : r, cc ? 0 : c) += weight(r, c) * g(r, c);
    }
  }
}

double at(const Matrix& m, std::size_t r, std::size_t c) {
  return m(m.rows() == 1 ? 0 : r, m.cols() == 1 ? 0 : c);
}

Tape* find_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.defined()) throw TapeError("operation on an undefined tensor");
    if (t.tape() == nullptr) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw TapeError("operands are recorded on different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

Tensor finish(OpKind kind, Matrix out, std::span<const Tensor> inputs, OpAux aux = {}) {
  check_finite(out, kind);
  Tape* tape = find_tape(inputs);
  if (tape == nullptr) return Tensor(std::move(out));
  return tape->record(kind, share(std::move(out)), inputs, aux);
}

Tensor finish1(OpKind kind, Matrix out, const Tensor& x, OpAux aux = {}) {
  return finish(kind, std::move(out), std::span<const Tensor>(&x, 1), aux);
}

Tensor finish2(OpKind kind, Matrix out, const Tensor& a, const Tensor& b, OpAux aux = {}) {
  const Tensor in[2] = {a, b};
  return finish(kind, std::move(out), in, aux);
}

template <typename F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// In-place LU with partial pivoting of a d x d matrix; returns sign of the
// permutation, or 0 if singular.
int lu_decompose(std::vector<double>& a, std::vector<std::size_t>& piv, std::size_t d) {
  int sign = 1;
  piv.resize(d);
  for (std::size_t i = 0; i < d; ++i) piv[i] = i;
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t p = k;
    double best = std::abs(a[k * d + k]);
    for (std::size_t i = k + 1; i < d; ++i) {
      if (std::abs(a[i * d + k]) > best) {
        best = std::abs(a[i * d + k]);
        p = i;
      }
    }
    if (best == 0.0) return 0;
    if (p != k) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a[k * d + j], a[p * d + j]);
      std::swap(piv[k], piv[p]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < d; ++i) {
      a[i * d + k] /= a[k * d + k];
      for (std::size_t j = k + 1; j < d; ++j) a[i * d + j] -= a[i * d + k] * a[k * d + j];
    }
  }
  return sign;
}

// Inverse of a d x d matrix from its LU factors.
std::vector<double> lu_inverse(const std::vector<double>& lu, const std::vector<std::size_t>& piv,
                               std::size_t d) {
  std::vector<double> inv(d * d, 0.0);
  std::vector<double> col(d);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < d; ++i) col[i] = piv[i] == c ? 1.0 : 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < i; ++j) col[i] -= lu[i * d + j] * col[j];
    }
    for (std::size_t i = d; i-- > 0;) {
      for (std::size_t j = i + 1; j < d; ++j) col[i] -= lu[i * d + j] * col[j];
      col[i] /= lu[i * d + i];
    }
    for (std::size_t i = 0; i < d; ++i) inv[i * d + c] = col[i];
  }
  return inv;
}

void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a^T * g  (a: n x k, g: n x m, out: k x m)
void matmul_tn_into(const Matrix& a, const Matrix& g, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    const double* grow = g.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * grow[j];
    }
  }
}

// out += g * b^T  (g: n x m, b: k x m, out: n x k)
void matmul_nt_into(const Matrix& g, const Matrix& b, Matrix& out) {
  const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g.data() + i * m;
    double* orow = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      orow[p] += s;
    }
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAffine: return "affine";
    case OpKind::kSum: return "sum";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kMean: return "mean";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSquare: return "square";
    case OpKind::kNeg: return "neg";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kClamp: return "clamp";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kLogAbsDet: return "logabsdet";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

bool all_finite(const Matrix& m) {
  for (double v : m.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (value_->size() != 1) {
    throw ShapeError("item() on a tensor of shape " + value_->shape_string());
  }
  return (*value_)[0];
}

// ---------------------------------------------------------------------------
// Gradients

Matrix Gradients::of(const Tensor& t) const {
  if (t.tape() != tape_ || t.node() < 0) {
    throw TapeError("gradient requested for a node that is not on this tape");
  }
  const Matrix* g = find(t.node());
  return g != nullptr ? *g : Matrix(t.rows(), t.cols());
}

const Matrix* Gradients::find(int node) const {
  if (node < 0 || static_cast<std::size_t>(node) >= grads_.size()) return nullptr;
  const Matrix& g = grads_[static_cast<std::size_t>(node)];
  return g.rows() == 0 ? nullptr : &g;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::variable(Matrix value) {
  if (consumed_) throw TapeError("recording on a consumed tape; call reset()");
  Tensor t(std::move(value));
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = t.value_;
  nodes_.push_back(std::move(n));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size() - 1);
  return t;
}

Tensor Tape::parameter(std::size_t index, std::shared_ptr<const Matrix> value) {
  if (consumed_) throw TapeError("recording on a consumed tape; call reset()");
  Tensor t(std::move(value));
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = t.value_;
  nodes_.push_back(std::move(n));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size() - 1);
  params_.emplace_back(index, t.node_);
  return t;
}

Tensor Tape::record(OpKind kind, std::shared_ptr<const Matrix> out, std::span<const Tensor> inputs,
                    OpAux aux, CustomBackward custom) {
  if (consumed_) throw TapeError("recording on a consumed tape; call reset()");
  Node n;
  n.kind = kind;
  n.value = out;
  n.aux = aux;
  n.custom = std::move(custom);
  n.parents.reserve(inputs.size());
  n.operand_values.reserve(inputs.size());
  for (const auto& in : inputs) {
    n.parents.push_back(in.tape() == this ? in.node() : -1);
    n.operand_values.push_back(in.shared_value());
  }
  nodes_.push_back(std::move(n));
  Tensor t(std::move(out));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size() - 1);
  return t;
}

void Tape::reset() {
  nodes_.clear();
  params_.clear();
  consumed_ = false;
}

Gradients Tape::backward(const Tensor& root) {
  if (root.tape() != this || root.node() < 0) {
    throw TapeError("backward root is not on this tape");
  }
  if (root.rows() != 1 || root.cols() != 1) {
    throw TapeError("backward root must be scalar, got " + root.value().shape_string());
  }
  if (consumed_) throw TapeError("tape already consumed by a backward pass");
  std::vector<Matrix> grads(nodes_.size());
  grads[static_cast<std::size_t>(root.node())] = Matrix::scalar(1.0);
  for (std::size_t i = static_cast<std::size_t>(root.node()) + 1; i-- > 0;) {
    if (grads[i].rows() == 0) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::kLeaf) continue;
    backward_node(n, grads[i], grads);
  }
  consumed_ = true;
  return Gradients(this, std::move(grads));
}

void Tape::backward_node(const Node& n, const Matrix& g, std::vector<Matrix>& grads) const {
  auto slot = [&](std::size_t k) -> Matrix* {
    const int p = n.parents[k];
    if (p < 0) return nullptr;
    Matrix& m = grads[static_cast<std::size_t>(p)];
    if (m.rows() == 0) {
      const Matrix& v = *n.operand_values[k];
      m = Matrix(v.rows(), v.cols());
    }
    return &m;
  };
  const Matrix& out = *n.value;
  auto operand = [&](std::size_t k) -> const Matrix& { return *n.operand_values[k]; };

  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      if (Matrix* ga = slot(0)) reduce_into(*ga, g, [](std::size_t, std::size_t) { return 1.0; });
      if (Matrix* gb = slot(1)) reduce_into(*gb, g, [](std::size_t, std::size_t) { return 1.0; });
      break;
    case OpKind::kSub:
      if (Matrix* ga = slot(0)) reduce_into(*ga, g, [](std::size_t, std::size_t) { return 1.0; });
      if (Matrix* gb = slot(1)) reduce_into(*gb, g, [](std::size_t, std::size_t) { return -1.0; });
      break;
    case OpKind::kMul: {
      const Matrix& a = operand(0);
      const Matrix& b = operand(1);
      if (Matrix* ga = slot(0))
        reduce_into(*ga, g, [&](std::size_t r, std::size_t c) { return at(b, r, c); });
      if (Matrix* gb = slot(1))
        reduce_into(*gb, g, [&](std::size_t r, std::size_t c) { return at(a, r, c); });
      break;
    }
    case OpKind::kDiv: {
      const Matrix& a = operand(0);
      const Matrix& b = operand(1);
      if (Matrix* ga = slot(0))
        reduce_into(*ga, g, [&](std::size_t r, std::size_t c) { return 1.0 / at(b, r, c); });
      if (Matrix* gb = slot(1))
        reduce_into(*gb, g, [&](std::size_t r, std::size_t c) {
          const double bv = at(b, r, c);
          return -at(a, r, c) / (bv * bv);
        });
      break;
    }
    case OpKind::kMatMul: {
      if (Matrix* ga = slot(0)) matmul_nt_into(g, operand(1), *ga);
      if (Matrix* gb = slot(1)) matmul_tn_into(operand(0), g, *gb);
      break;
    }
    case OpKind::kAffine: {
      if (Matrix* gx = slot(0)) matmul_nt_into(g, operand(1), *gx);
      if (Matrix* gw = slot(1)) matmul_tn_into(operand(0), g, *gw);
      if (Matrix* gb = slot(2)) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g(r, c);
        }
      }
      break;
    }
    case OpKind::kSum:
      if (Matrix* gx = slot(0)) {
        for (auto& v : gx->values()) v += g[0];
      }
      break;
    case OpKind::kMean:
      if (Matrix* gx = slot(0)) {
        const double w = g[0] / static_cast<double>(gx->size());
        for (auto& v : gx->values()) v += w;
      }
      break;
    case OpKind::kSumRows:
      if (Matrix* gx = slot(0)) {
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += g[c];
        }
      }
      break;
    case OpKind::kSumCols:
      if (Matrix* gx = slot(0)) {
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += g[r];
        }
      }
      break;
    case OpKind::kExp:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * out[i];
      }
      break;
    case OpKind::kLog:
      if (Matrix* gx = slot(0)) {
        const Matrix& x = operand(0);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / x[i];
      }
      break;
    case OpKind::kTanh:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - out[i] * out[i]);
      }
      break;
    case OpKind::kSigmoid:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * out[i] * (1.0 - out[i]);
      }
      break;
    case OpKind::kSoftplus:
      if (Matrix* gx = slot(0)) {
        const Matrix& x = operand(0);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sigmoid_value(x[i]);
      }
      break;
    case OpKind::kSquare:
      if (Matrix* gx = slot(0)) {
        const Matrix& x = operand(0);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * x[i] * g[i];
      }
      break;
    case OpKind::kNeg:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] -= g[i];
      }
      break;
    case OpKind::kScale:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += n.aux.a0 * g[i];
      }
      break;
    case OpKind::kAddScalar:
      if (Matrix* gx = slot(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      }
      break;
    case OpKind::kClamp:
      if (Matrix* gx = slot(0)) {
        const Matrix& x = operand(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > n.aux.a0 && x[i] < n.aux.a1) (*gx)[i] += g[i];
        }
      }
      break;
    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        const Matrix& part = operand(k);
        if (Matrix* gp = slot(k)) {
          const bool bcast = part.rows() == 1 && g.rows() != 1;
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < part.cols(); ++c) {
              (*gp)(bcast ? 0 : r, c) += g(r, offset + c);
            }
          }
        }
        offset += part.cols();
      }
      break;
    }
    case OpKind::kSlice:
      if (Matrix* gx = slot(0)) {
        // aux.i0: row offset, aux.i1: col offset
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r + n.aux.i0, c + n.aux.i1) += g(r, c);
        }
      }
      break;
    case OpKind::kBroadcast:
      if (Matrix* gx = slot(0)) reduce_into(*gx, g, [](std::size_t, std::size_t) { return 1.0; });
      break;
    case OpKind::kLogAbsDet:
      if (Matrix* gx = slot(0)) {
        const Matrix& x = operand(0);
        const std::size_t d = n.aux.i0;
        std::vector<double> lu(d * d);
        std::vector<std::size_t> piv;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          std::copy_n(x.data() + r * d * d, d * d, lu.begin());
          lu_decompose(lu, piv, d);
          const std::vector<double> inv = lu_inverse(lu, piv, d);
          // d log|det A| / dA = A^{-T}
          for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) (*gx)(r, i * d + j) += g[r] * inv[j * d + i];
          }
        }
      }
      break;
    case OpKind::kCustom: {
      std::vector<Matrix> gin;
      gin.reserve(n.parents.size());
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        gin.emplace_back(operand(k).rows(), operand(k).cols());
      }
      n.custom(g, gin);
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        if (Matrix* gp = slot(k)) {
          for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += gin[k][i];
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

Tensor add(const Tensor& a, const Tensor& b) {
  return finish2(OpKind::kAdd,
                 broadcast_binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }),
                 a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return finish2(OpKind::kSub,
                 broadcast_binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }),
                 a, b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return finish2(OpKind::kMul,
                 broadcast_binary(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }),
                 a, b);
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return finish2(OpKind::kDiv,
                 broadcast_binary(a.value(), b.value(), "div", [](double x, double y) { return x / y; }),
                 a, b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shapes(a.value(), b.value()));
  }
  Matrix out(a.rows(), b.cols());
  matmul_into(a.value(), b.value(), out);
  return finish2(OpKind::kMatMul, std::move(out), a, b);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: shapes x " + x.value().shape_string() + ", w " +
                     w.value().shape_string() + ", b " + b.value().shape_string());
  }
  Matrix out(x.rows(), w.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::copy_n(b.value().data(), w.cols(), out.data() + r * w.cols());
  }
  matmul_into(x.value(), w.value(), out);
  const Tensor in[3] = {x, w, b};
  return finish(OpKind::kAffine, std::move(out), in);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return finish1(OpKind::kSum, Matrix::scalar(s), x);
}

Tensor sum_rows(const Tensor& x) {
  const Matrix& v = x.value();
  Matrix out(1, v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += v(r, c);
  }
  return finish1(OpKind::kSumRows, std::move(out), x);
}

Tensor sum_cols(const Tensor& x) {
  const Matrix& v = x.value();
  Matrix out(v.rows(), 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) s += v(r, c);
    out[r] = s;
  }
  return finish1(OpKind::kSumCols, std::move(out), x);
}

Tensor mean(const Tensor& x) {
  if (x.value().size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return finish1(OpKind::kMean, Matrix::scalar(s / static_cast<double>(x.value().size())), x);
}

Tensor exp(const Tensor& x) {
  return finish1(OpKind::kExp, map(x.value(), [](double v) { return std::exp(v); }), x);
}

Tensor log(const Tensor& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return finish1(OpKind::kLog, map(x.value(), [](double v) { return std::log(v); }), x);
}

Tensor tanh(const Tensor& x) {
  return finish1(OpKind::kTanh, map(x.value(), [](double v) { return std::tanh(v); }), x);
}

Tensor sigmoid(const Tensor& x) {
  return finish1(OpKind::kSigmoid, map(x.value(), sigmoid_value), x);
}

Tensor softplus(const Tensor& x) {
  return finish1(OpKind::kSoftplus, map(x.value(), softplus_value), x);
}

Tensor square(const Tensor& x) {
  return finish1(OpKind::kSquare, map(x.value(), [](double v) { return v * v; }), x);
}

Tensor neg(const Tensor& x) {
  return finish1(OpKind::kNeg, map(x.value(), [](double v) { return -v; }), x);
}

Tensor scale(const Tensor& x, double s) {
  return finish1(OpKind::kScale, map(x.value(), [s](double v) { return s * v; }), x, {.a0 = s});
}

Tensor add_scalar(const Tensor& x, double s) {
  return finish1(OpKind::kAddScalar, map(x.value(), [s](double v) { return v + s; }), x, {.a0 = s});
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return finish1(OpKind::kClamp, map(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
                 x, {.a0 = lo, .a1 = hi});
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::size_t rows = 1, cols = 0;
  for (const auto& p : parts) {
    if (!p.defined()) throw TapeError("concat: undefined operand");
    if (p.rows() != 1) {
      if (rows != 1 && rows != p.rows()) throw ShapeError("concat: row counts differ");
      rows = p.rows();
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t src = v.rows() == 1 ? 0 : r;
      std::copy_n(v.data() + src * v.cols(), v.cols(), out.data() + r * cols + offset);
    }
    offset += v.cols();
  }
  return finish(OpKind::kConcat, std::move(out), parts);
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + x.value().shape_string());
  }
  const Matrix& v = x.value();
  Matrix out(v.rows(), end - begin);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    std::copy_n(v.data() + r * v.cols() + begin, end - begin, out.data() + r * (end - begin));
  }
  return finish1(OpKind::kSlice, std::move(out), x, {.i0 = 0, .i1 = begin});
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    throw ShapeError("slice_rows: range out of " + x.value().shape_string());
  }
  const Matrix& v = x.value();
  Matrix out(end - begin, v.cols());
  std::copy_n(v.data() + begin * v.cols(), (end - begin) * v.cols(), out.data());
  return finish1(OpKind::kSlice, std::move(out), x, {.i0 = begin, .i1 = 0});
}

Tensor broadcast(const Tensor& x, std::size_t rows, std::size_t cols) {
  const Matrix& v = x.value();
  if ((v.rows() != rows && v.rows() != 1) || (v.cols() != cols && v.cols() != 1)) {
    throw ShapeError("broadcast: cannot expand " + v.shape_string() + " to " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = at(v, r, c);
  }
  return finish1(OpKind::kBroadcast, std::move(out), x);
}

Tensor logabsdet(const Tensor& x, std::size_t d) {
  if (d == 0 || x.cols() != d * d) {
    throw ShapeError("logabsdet: expected rows of " + std::to_string(d * d) + " entries, got " +
                     x.value().shape_string());
  }
  const Matrix& v = x.value();
  Matrix out(v.rows(), 1);
  std::vector<double> lu(d * d);
  std::vector<std::size_t> piv;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    std::copy_n(v.data() + r * d * d, d * d, lu.begin());
    if (lu_decompose(lu, piv, d) == 0) throw DomainError("logabsdet: singular matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += std::log(std::abs(lu[i * d + i]));
    out[r] = s;
  }
  return finish1(OpKind::kLogAbsDet, std::move(out), x, {.i0 = d});
}

Tensor custom(Matrix out, std::span<const Tensor> inputs, CustomBackward backward) {
  check_finite(out, OpKind::kCustom);
  Tape* tape = find_tape(inputs);
  if (tape == nullptr) return Tensor(std::move(out));
  return tape->record(OpKind::kCustom, share(std::move(out)), inputs, {}, std::move(backward));
}

Tensor apply_primitive(OpKind kind, std::span<const Tensor> in) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " operands, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::kAdd: need(2); return add(in[0], in[1]);
    case OpKind::kSub: need(2); return sub(in[0], in[1]);
    case OpKind::kMul: need(2); return mul(in[0], in[1]);
    case OpKind::kDiv: need(2); return div(in[0], in[1]);
    case OpKind::kMatMul: need(2); return matmul(in[0], in[1]);
    case OpKind::kAffine: need(3); return affine(in[0], in[1], in[2]);
    case OpKind::kSum: need(1); return sum(in[0]);
    case OpKind::kSumRows: need(1); return sum_rows(in[0]);
    case OpKind::kSumCols: need(1); return sum_cols(in[0]);
    case OpKind::kMean: need(1); return mean(in[0]);
    case OpKind::kExp: need(1); return exp(in[0]);
    case OpKind::kLog: need(1); return log(in[0]);
    case OpKind::kTanh: need(1); return tanh(in[0]);
    case OpKind::kSigmoid: need(1); return sigmoid(in[0]);
    case OpKind::kSoftplus: need(1); return softplus(in[0]);
    case OpKind::kSquare: need(1); return square(in[0]);
    case OpKind::kNeg: need(1); return neg(in[0]);
    case OpKind::kConcat: return concat(in);
    default:
      throw std::invalid_argument(std::string("apply_primitive: '") + op_name(kind) +
                                  "' needs non-tensor arguments");
  }
}

}  // namespace clpf::ad
