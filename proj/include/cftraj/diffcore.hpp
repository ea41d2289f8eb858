#pragma once

// Reverse-mode automatic differentiation over small dense tensors (rank <= 2, double precision).
//
// Every op appends a node to a Tape. Nodes are created in topological order, so backward is a
// single reverse sweep. Rank-0 tensors are scalars; rank-1 tensors behave as 1 x n rows.

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cftraj::diff {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.size() < 2 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<const double> values() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients produced by one backward sweep, indexed by node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  /// Gradient of the loss w.r.t. `v`; zeros of v's shape when v did not influence the loss.
  Tensor of(const Var& v) const;

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var leaf(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends a node; `fn` is kept only when some parent requires a gradient.
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  Gradients backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adds `g` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// ---- Ops -------------------------------------------------------------------------------------
// Shape errors throw std::invalid_argument naming the op and shapes.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_bias(const Var& a, const Var& bias);  // a: m x n, bias: 1 x n (or length n)
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var softmax(const Var& a);      // over the last axis (per row)
Var log_softmax(const Var& a);  // over the last axis (per row)
Var sum(const Var& a);          // -> scalar
Var mean(const Var& a);         // -> scalar
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var transpose(const Var& a);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- Parameters and optimisation --------------------------------------------------------------

/// Named parameter tensors in a fixed order.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init);
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  std::size_t index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return values_[index_of(name)]; }

  /// Puts every parameter on the tape as a gradient-receiving leaf.
  std::vector<Var> bind(Tape& tape) const;
  /// Puts every parameter on the tape as a constant (inference).
  std::vector<Var> bind_constant(Tape& tape) const;

  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json& j);

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Glorot-uniform initialisation.
Tensor xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg);
  void step(ParamStore& params, const std::vector<Tensor>& grads);
  long steps() const { return t_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// Worst per-coordinate relative error between backward() and central differences.
/// Error per coordinate is |a - n| / max(|a|, |n|, floor).
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& at, double h = 1e-5,
                  double floor = 1e-6);

}  // namespace cftraj::diff
