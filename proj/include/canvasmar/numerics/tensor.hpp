#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace canvasmar {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// Raised when a forward or backward pass produces NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// True when every entry is finite: x * 0 is 0 for finite x and NaN otherwise.
/// Vectorizes, unlike DenseBase::allFinite.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (x.derived().array() * Scalar(0)).sum() == Scalar(0);
}

template <typename Scalar>
class GradTape;

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::string name;
  std::function<void(const Matrix<Scalar>&, GradTape<Scalar>&)> backward;
};

/// Handle to a dense row-major value in the autodiff graph. Copies share the
/// underlying node. Every tensor is two-dimensional; vectors are 1 x n or n x 1.
template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(Matrix<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  /// Trainable leaf. Its gradient is reported by backward() under this handle.
  static Tensor parameter(Matrix<Scalar> value, std::string name) {
    Tensor t(std::move(value), true);
    t.node_->name = std::move(name);
    t.node_->op = "parameter";
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix<Scalar>& value() const { return node_->value; }
  /// Only meaningful on leaves (optimizer updates, checkpoint loading).
  Matrix<Scalar>& mutable_value() { return node_->value; }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const char* op() const { return node_->op; }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return node_->value(0, 0);
  }

  const Node<Scalar>* id() const { return node_.get(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Gradients produced by one backward pass, keyed by tensor identity.
template <typename Scalar>
class Gradients {
 public:
  /// dLoss/dt; an all-zero matrix when t did not participate.
  Matrix<Scalar> of(const Tensor<Scalar>& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return Matrix<Scalar>::Zero(t.rows(), t.cols());
    return it->second;
  }
  bool contains(const Tensor<Scalar>& t) const { return grads_.count(t.id()) != 0; }

 private:
  friend class GradTape<Scalar>;
  std::unordered_map<const Node<Scalar>*, Matrix<Scalar>> grads_;
};

/// Ordered record of differentiable ops. Creation order is a topological
/// order, so backward walks the record in reverse and visits each node once.
/// A tape is used by one thread; activate it with TapeScope.
template <typename Scalar>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::shared_ptr<Node<Scalar>> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    grads_.clear();
  }

  template <typename Derived>
  void accumulate(const Node<Scalar>* node, const Eigen::MatrixBase<Derived>& contribution) {
    if (!node->requires_grad) return;
    Matrix<Scalar> c = contribution;
    if (!all_finite(c)) {
      throw NumericError(std::string("non-finite gradient produced in backward of '") + current_op_ + "'");
    }
    auto it = grads_.find(node);
    if (it == grads_.end()) {
      grads_.emplace(node, std::move(c));
    } else {
      it->second += c;
    }
  }

  /// Reverse sweep from a scalar loss.
  Gradients<Scalar> backward(const Tensor<Scalar>& loss);

 private:
  std::vector<std::shared_ptr<Node<Scalar>>> nodes_;
  std::unordered_map<const Node<Scalar>*, Matrix<Scalar>> grads_;
  const char* current_op_ = "";
};

template <typename Scalar>
GradTape<Scalar>*& active_tape() {
  thread_local GradTape<Scalar>* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording tape of the calling thread for this scope.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(GradTape<Scalar>& tape) : previous_(active_tape<Scalar>()) { active_tape<Scalar>() = &tape; }
  ~TapeScope() { active_tape<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<Scalar>* previous_;
};

/// Suspends recording (inference, sampling).
template <typename Scalar>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape<Scalar>()) { active_tape<Scalar>() = nullptr; }
  ~NoGradScope() { active_tape<Scalar>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<Scalar>* previous_;
};

template <typename Scalar>
Gradients<Scalar> GradTape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar (1x1) tensor");
  Gradients<Scalar> out;
  if (!loss.requires_grad()) {
    return out;
  }
  grads_.clear();
  grads_.emplace(loss.id(), Matrix<Scalar>::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<Scalar>* node = it->get();
    auto g = grads_.find(node);
    if (g == grads_.end()) continue;
    current_op_ = node->op;
    Matrix<Scalar> grad = std::move(g->second);
    grads_.erase(g);
    if (node->backward) node->backward(grad, *this);
  }
  current_op_ = "";
  // Whatever remains belongs to leaves.
  out.grads_ = std::move(grads_);
  grads_.clear();
  return out;
}

/// Free-function form: dLoss/dParam for every requires_grad leaf reached.
template <typename Scalar>
Gradients<Scalar> backward(GradTape<Scalar>& tape, const Tensor<Scalar>& loss) {
  return tape.backward(loss);
}

}  // namespace canvasmar
