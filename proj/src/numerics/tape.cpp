#include "adld/numerics/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "adld/numerics/errors.hpp"

namespace adld {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap view(Tensor& t) {
  return MutMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError("operands recorded on different tapes");
  }
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() +
                     " vs " + b.shape_string());
  }
}

Tensor like(const Tensor& t) { return Tensor({t.rows(), t.cols()}); }

template <class F>
Var unary(Var x, Op op, F f) {
  const Tensor& in = x.value();
  Tensor out = like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape->record(op, {x.id}, std::move(out));
}

template <class F>
Var binary(Var a, Var b, Op op, const char* name, F f) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, name);
  Tensor out = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return tape.record(op, {a.id, b.id}, std::move(out));
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

void accumulate(std::vector<Tensor>& grads, int id, const Tensor& g) {
  Tensor& slot = grads[id];
  if (slot.empty()) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

Tensor column_sums(const Tensor& g, const std::vector<std::size_t>& shape) {
  Tensor out(shape);
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += g.at(r, c);
  }
  return out;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value) {
  return record(Op::kLeaf, {}, std::move(value));
}

Var Tape::constant(Tensor value) {
  return record(Op::kConstant, {}, std::move(value));
}

Var Tape::bind_ref(Op op, const Tensor& p,
                   std::unordered_map<const Tensor*, int>& cache) {
  if (auto it = cache.find(&p); it != cache.end()) return Var{this, it->second};
  if (!p.all_finite()) throw NumericError("non-finite parameter bound to tape");
  Node n{op, {}, Tensor(), &p};
  if (op == Op::kConstant) {
    n.held = true;
    if (holding_) {
      n.value = next_held(p);
      n.ref = nullptr;
    }
  }
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  cache.emplace(&p, id);
  return Var{this, id};
}

Var Tape::param(const Tensor& p) { return bind_ref(Op::kLeaf, p, params_); }

Var Tape::frozen(const Tensor& p) { return bind_ref(Op::kConstant, p, frozen_); }

Var Tape::record(Op op, std::vector<int> inputs, Tensor value, double a,
                 double b, std::size_t i0, std::size_t i1) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by tape op " +
                       std::to_string(static_cast<int>(op)));
  }
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), nullptr, false, a, b, i0, i1});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

std::vector<Tensor> Tape::held_values() const {
  std::vector<Tensor> out;
  for (const auto& n : nodes_) {
    if (n.held) out.push_back(n.get());
  }
  return out;
}

void Tape::hold(std::vector<Tensor> values) {
  held_ = std::move(values);
  held_cursor_ = 0;
  holding_ = true;
}

Tensor Tape::next_held(const Tensor& live) {
  if (held_cursor_ >= held_.size()) throw ContractError("replay ran past the held values");
  Tensor v = held_[held_cursor_++];
  if (v.rows() != live.rows() || v.cols() != live.cols()) {
    throw ContractError("replay diverged: held value shape " + v.shape_string() +
                        " vs live " + live.shape_string());
  }
  return v;
}

Tensor Gradients::operator[](Var v) const {
  if (v.id >= 0 && static_cast<std::size_t>(v.id) < grads_.size() &&
      !grads_[v.id].empty()) {
    return grads_[v.id];
  }
  return Tensor::zeros_like(v.value());
}

Tensor Gradients::of(const Tensor& param) const {
  if (tape_ != nullptr) {
    if (auto it = tape_->params_.find(&param); it != tape_->params_.end()) {
      const Tensor& g = grads_[it->second];
      if (!g.empty()) return Tensor(param.shape(), std::vector<double>(g.values().begin(), g.values().end()));
    }
  }
  return Tensor::zeros_like(param);
}

Gradients Tape::backward(Var root) const {
  if (root.tape != this) throw ContractError("backward root is not on this tape");
  const Tensor& rv = nodes_[root.id].get();
  if (rv.size() != 1) {
    throw ContractError("backward root must be scalar, got " + rv.shape_string());
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  out.grads_[root.id] = Tensor(rv.shape(), 1.0);
  for (int id = root.id; id >= 0; --id) {
    const Tensor& g = out.grads_[id];
    if (g.empty()) continue;
    propagate(nodes_[id], g, out.grads_);
  }
  return out;
}

void Tape::propagate(const Node& n, const Tensor& g,
                     std::vector<Tensor>& grads) const {
  auto in = [&](std::size_t k) -> const Tensor& {
    return nodes_[n.inputs[k]].get();
  };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
    case Op::kStopGradient:
      return;
    case Op::kAdd:
      accumulate(grads, n.inputs[0], g);
      accumulate(grads, n.inputs[1], g);
      return;
    case Op::kSub: {
      accumulate(grads, n.inputs[0], g);
      Tensor neg = g;
      for (auto& v : neg.values()) v = -v;
      accumulate(grads, n.inputs[1], neg);
      return;
    }
    case Op::kMul: {
      Tensor ga = g, gb = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] *= in(1)[i];
        gb[i] *= in(0)[i];
      }
      accumulate(grads, n.inputs[0], ga);
      accumulate(grads, n.inputs[1], gb);
      return;
    }
    case Op::kNeg:
    case Op::kScale: {
      const double s = n.op == Op::kNeg ? -1.0 : n.a;
      Tensor gx = g;
      for (auto& v : gx.values()) v *= s;
      accumulate(grads, n.inputs[0], gx);
      return;
    }
    case Op::kAddScalar:
      accumulate(grads, n.inputs[0], g);
      return;
    case Op::kMatmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor ga({a.rows(), a.cols()});
      Tensor gb({b.rows(), b.cols()});
      view(ga).noalias() = view(g) * view(b).transpose();
      view(gb).noalias() = view(a).transpose() * view(g);
      accumulate(grads, n.inputs[0], ga);
      accumulate(grads, n.inputs[1], gb);
      return;
    }
    case Op::kLinear: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      Tensor gx({x.rows(), x.cols()});
      Tensor gw(w.shape());
      view(gx).noalias() = view(g) * view(w);
      view(gw).noalias() = view(g).transpose() * view(x);
      accumulate(grads, n.inputs[0], gx);
      accumulate(grads, n.inputs[1], gw);
      accumulate(grads, n.inputs[2], column_sums(g, in(2).shape()));
      return;
    }
    case Op::kAddRow:
      accumulate(grads, n.inputs[0], g);
      accumulate(grads, n.inputs[1], column_sums(g, in(1).shape()));
      return;
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kExp: {
      Tensor gx = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        const double d = n.op == Op::kTanh      ? 1.0 - y * y
                         : n.op == Op::kSigmoid ? y * (1.0 - y)
                                                : y;
        gx[i] *= d;
      }
      accumulate(grads, n.inputs[0], gx);
      return;
    }
    case Op::kRelu:
    case Op::kLog:
    case Op::kSoftplus:
    case Op::kSquare:
    case Op::kClamp: {
      const Tensor& x = in(0);
      Tensor gx = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x[i];
        double d = 0.0;
        switch (n.op) {
          case Op::kRelu: d = v > 0 ? 1.0 : 0.0; break;
          case Op::kLog: d = 1.0 / v; break;
          case Op::kSoftplus: d = stable_sigmoid(v); break;
          case Op::kSquare: d = 2.0 * v; break;
          default: d = (v >= n.a && v <= n.b) ? 1.0 : 0.0; break;
        }
        gx[i] *= d;
      }
      accumulate(grads, n.inputs[0], gx);
      return;
    }
    case Op::kSum:
    case Op::kMean: {
      const Tensor& x = in(0);
      const double s = n.op == Op::kSum ? g[0] : g[0] / static_cast<double>(x.size());
      accumulate(grads, n.inputs[0], Tensor(x.shape(), s));
      return;
    }
    case Op::kSumCols: {
      const Tensor& x = in(0);
      Tensor gx(x.shape());
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = g[r];
      }
      accumulate(grads, n.inputs[0], gx);
      return;
    }
    case Op::kConcat: {
      const std::size_t rows = g.rows(), total = g.cols();
      std::size_t offset = 0;
      for (int id : n.inputs) {
        const Tensor& part = nodes_[id].get();
        const std::size_t c = part.cols();
        Tensor gp(part.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) gp[r * c + j] = g[r * total + offset + j];
        }
        accumulate(grads, id, gp);
        offset += c;
      }
      return;
    }
    case Op::kSlice: {
      const Tensor& x = in(0);
      Tensor gx(x.shape());
      const std::size_t cols = x.cols(), width = n.i1 - n.i0;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t j = 0; j < width; ++j) gx[r * cols + n.i0 + j] = g[r * width + j];
      }
      accumulate(grads, n.inputs[0], gx);
      return;
    }
  }
}

Var operator+(Var a, Var b) {
  return binary(a, b, Op::kAdd, "add", [](double x, double y) { return x + y; });
}
Var operator-(Var a, Var b) {
  return binary(a, b, Op::kSub, "sub", [](double x, double y) { return x - y; });
}
Var operator*(Var a, Var b) {
  return binary(a, b, Op::kMul, "mul", [](double x, double y) { return x * y; });
}
Var operator-(Var a) {
  return unary(a, Op::kNeg, [](double x) { return -x; });
}

Var operator*(double s, Var a) {
  const Tensor& in = a.value();
  Tensor out = like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = s * in[i];
  return a.tape->record(Op::kScale, {a.id}, std::move(out), s);
}
Var operator*(Var a, double s) { return s * a; }

Var operator+(Var a, double s) {
  return unary(a, Op::kAddScalar, [s](double x) { return x + s; });
}
Var operator-(Var a, double s) { return a + (-s); }

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: " + x.shape_string() + " x " + y.shape_string());
  }
  Tensor out({x.rows(), y.cols()});
  view(out).noalias() = view(x) * view(y);
  return tape.record(Op::kMatmul, {a.id, b.id}, std::move(out));
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (w.rank() != 2 || xv.cols() != w.cols() || b.size() != w.rows()) {
    throw ShapeError("linear: input " + xv.shape_string() + ", weight " +
                     w.shape_string() + ", bias " + b.shape_string());
  }
  Tensor out({xv.rows(), w.rows()});
  auto o = view(out);
  o.noalias() = view(xv) * view(w).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> brow(b.values().data(),
                                                  static_cast<Eigen::Index>(b.size()));
  o.rowwise() += brow;
  return tape.record(Op::kLinear, {x.id, weight.id, bias.id}, std::move(out));
}

Var add_row(Var x, Var row) {
  Tape& tape = same_tape(x, row);
  const Tensor& xv = x.value();
  const Tensor& r = row.value();
  if (r.size() != xv.cols()) {
    throw ShapeError("add_row: " + xv.shape_string() + " + " + r.shape_string());
  }
  Tensor out = like(xv);
  const std::size_t cols = xv.cols();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + r[i % cols];
  return tape.record(Op::kAddRow, {x.id, row.id}, std::move(out));
}

Var tanh(Var x) {
  return unary(x, Op::kTanh, [](double v) { return std::tanh(v); });
}
Var sigmoid(Var x) { return unary(x, Op::kSigmoid, stable_sigmoid); }
Var relu(Var x) {
  return unary(x, Op::kRelu, [](double v) { return v > 0 ? v : 0.0; });
}

Var exp(Var x) {
  return unary(x, Op::kExp, [](double v) {
    const double e = std::exp(v);
    if (!std::isfinite(e)) throw DomainError("exp overflow at " + std::to_string(v));
    return e;
  });
}

Var log(Var x) {
  return unary(x, Op::kLog, [](double v) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    return std::log(v);
  });
}

Var softplus(Var x) { return unary(x, Op::kSoftplus, stable_softplus); }
Var square(Var x) {
  return unary(x, Op::kSquare, [](double v) { return v * v; });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape->record(Op::kSum, {x.id}, Tensor::scalar(s));
}

Var mean(Var x) {
  const Tensor& in = x.value();
  double s = 0.0;
  for (double v : in.values()) s += v;
  return x.tape->record(Op::kMean, {x.id},
                        Tensor::scalar(s / static_cast<double>(in.size())));
}

Var sum_cols(Var x) {
  const Tensor& in = x.value();
  Tensor out({in.rows(), 1});
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double s = 0.0;
    for (double v : in.row_span(r)) s += v;
    out[r] = s;
  }
  return x.tape->record(Op::kSumCols, {x.id}, std::move(out));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Tape* tape = parts[0].tape;
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.tape != tape) throw ContractError("concat operands on different tapes");
    if (p.rows() != rows) {
      throw ShapeError("concat: row mismatch " + std::to_string(p.rows()) +
                       " vs " + std::to_string(rows));
    }
    total += p.cols();
    ids.push_back(p.id);
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.values().data() + r * c, c, out.values().data() + r * total + offset);
    }
    offset += c;
  }
  return tape->record(Op::kConcat, std::move(ids), std::move(out));
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice(Var x, std::size_t begin, std::size_t end) {
  const Tensor& in = x.value();
  if (begin >= end || end > in.cols()) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + in.shape_string());
  }
  const std::size_t width = end - begin, cols = in.cols();
  Tensor out({in.rows(), width});
  for (std::size_t r = 0; r < in.rows(); ++r) {
    std::copy_n(in.values().data() + r * cols + begin, width,
                out.values().data() + r * width);
  }
  return x.tape->record(Op::kSlice, {x.id}, std::move(out), 0.0, 0.0, begin, end);
}

Var stop_gradient(Var x) {
  Tape& tape = *x.tape;
  Tensor v = tape.holding() ? tape.next_held(x.value()) : x.value();
  Var out = tape.record(Op::kStopGradient, {x.id}, std::move(v));
  tape.mark_held(out);
  return out;
}

Var clamp(Var x, double lo, double hi) {
  const Tensor& in = x.value();
  Tensor out = like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::clamp(in[i], lo, hi);
  return x.tape->record(Op::kClamp, {x.id}, std::move(out), lo, hi);
}

}  // namespace adld
