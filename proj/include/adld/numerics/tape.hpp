#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "adld/numerics/tensor.hpp"

namespace adld {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kAddScalar,
  kMatmul,
  kLinear,
  kAddRow,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSoftplus,
  kSquare,
  kSum,
  kMean,
  kSumCols,
  kConcat,
  kSlice,
  kStopGradient,
  kClamp,
};

// Whether parameters bound during a forward pass receive gradients.
enum class Grad { kTrack, kFrozen };

class Gradients {
 public:
  Gradients() = default;

  // Gradient of the root with respect to a recorded value. Values that the
  // root does not depend on get zeros of their own shape.
  Tensor operator[](Var v) const;
  // Gradient with respect to a parameter tensor bound with Tape::param.
  // Unbound or frozen parameters get zeros.
  Tensor of(const Tensor& param) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

// Reverse-mode recording of one forward computation. A tape lives for one
// training step. Bound parameter tensors are referenced, not copied, so they
// must outlive the tape and stay unmodified until backward has run.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var param(const Tensor& p);
  Var frozen(const Tensor& p);
  Var bind(const Tensor& p, Grad g) {
    return g == Grad::kTrack ? param(p) : frozen(p);
  }

  Var record(Op op, std::vector<int> inputs, Tensor value, double a = 0.0,
             double b = 0.0, std::size_t i0 = 0, std::size_t i1 = 0);

  const Tensor& value(Var v) const { return nodes_[v.id].get(); }
  std::size_t size() const { return nodes_.size(); }

  Gradients backward(Var root) const;

  // Outputs of stop_gradient and frozen-parameter nodes, in recording order.
  std::vector<Tensor> held_values() const;
  // Replays a computation with those outputs pinned: the i-th stop_gradient
  // or frozen binding returns values[i] instead of its live input. Finite
  // differences of a replayed loss give the gradient that flows through the
  // tracked paths only.
  void hold(std::vector<Tensor> values);
  bool holding() const { return holding_; }
  Tensor next_held(const Tensor& live);
  void mark_held(Var v) { nodes_[v.id].held = true; }

 private:
  friend class Gradients;
  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor value;
    const Tensor* ref = nullptr;
    bool held = false;
    double a = 0.0;
    double b = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    const Tensor& get() const { return ref != nullptr ? *ref : value; }
  };
  Var bind_ref(Op op, const Tensor& p,
               std::unordered_map<const Tensor*, int>& cache);
  void propagate(const Node& node, const Tensor& g,
                 std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> params_;
  std::unordered_map<const Tensor*, int> frozen_;
  std::vector<Tensor> held_;
  std::size_t held_cursor_ = 0;
  bool holding_ = false;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator-(Var a, double s);

Var matmul(Var a, Var b);
// x (n x in) times weight^T (in x out) plus bias row (out).
Var linear(Var x, Var weight, Var bias);
// Adds a (1 x c) or length-c row to every row of x.
Var add_row(Var x, Var row);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
// Per-row sum, (n x c) -> (n x 1).
Var sum_cols(Var x);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
// Columns [begin, end).
Var slice(Var x, std::size_t begin, std::size_t end);
Var stop_gradient(Var x);
// Value clamp; gradient passes only where the input lies inside [lo, hi].
Var clamp(Var x, double lo, double hi);

}  // namespace adld
