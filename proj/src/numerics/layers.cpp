#include "adld/numerics/layers.hpp"

#include <cmath>

#include "adld/numerics/errors.hpp"

namespace adld {

Dense::Dense(std::size_t in, std::size_t out, Rng& rng)
    : weight({out, in}), bias(std::vector<std::size_t>{out}) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& w : weight.values()) w = rng.uniform(-limit, limit);
}

Dense Dense::zeros(std::size_t in, std::size_t out) {
  Dense d;
  d.weight = Tensor({out, in});
  d.bias = Tensor(std::vector<std::size_t>{out});
  return d;
}

Var Dense::forward(Tape& tape, Var x, Grad g) const {
  if (x.cols() != in_dim()) {
    throw ShapeError("dense input has " + std::to_string(x.cols()) +
                     " columns, expected " + std::to_string(in_dim()));
  }
  return linear(x, tape.bind(weight, g), tape.bind(bias, g));
}

void Dense::collect(const std::string& prefix, ParamRefs& out) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

Mlp::Mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
         Rng& rng, Activation act)
    : activation(act) {
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.emplace_back(prev, h, rng);
    prev = h;
  }
  layers.emplace_back(prev, out, rng);
}

Var Mlp::forward(Tape& tape, Var x, Grad g) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(tape, x, g);
    if (i + 1 < layers.size()) {
      x = activation == Activation::kRelu ? relu(x) : tanh(x);
    }
  }
  return x;
}

void Mlp::collect(const std::string& prefix, ParamRefs& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + std::to_string(i) + ".", out);
  }
}

Gru::Gru(std::size_t in, std::size_t hidden, Rng& rng)
    : in_reset(in, hidden, rng),
      in_update(in, hidden, rng),
      in_cand(in, hidden, rng),
      hid_reset(hidden, hidden, rng),
      hid_update(hidden, hidden, rng),
      hid_cand(hidden, hidden, rng) {}

Gru Gru::zeros(std::size_t in, std::size_t hidden) {
  Gru g;
  g.in_reset = g.in_update = g.in_cand = Dense::zeros(in, hidden);
  g.hid_reset = g.hid_update = g.hid_cand = Dense::zeros(hidden, hidden);
  return g;
}

Var Gru::step(Tape& tape, Var x, Var h, Grad g) const {
  if (h.cols() != hidden_dim()) {
    throw ShapeError("gru hidden state has " + std::to_string(h.cols()) +
                     " columns, expected " + std::to_string(hidden_dim()));
  }
  if (x.rows() != h.rows()) throw ShapeError("gru batch mismatch");
  Var r = sigmoid(in_reset.forward(tape, x, g) + hid_reset.forward(tape, h, g));
  Var z = sigmoid(in_update.forward(tape, x, g) + hid_update.forward(tape, h, g));
  Var n = tanh(in_cand.forward(tape, x, g) + r * hid_cand.forward(tape, h, g));
  return n + z * (h - n);
}

std::vector<Var> Gru::forward(Tape& tape, std::span<const Var> xs, Var h0,
                              Grad g) const {
  std::vector<Var> out;
  out.reserve(xs.size());
  Var h = h0;
  for (Var x : xs) {
    h = step(tape, x, h, g);
    out.push_back(h);
  }
  return out;
}

void Gru::collect(const std::string& prefix, ParamRefs& out) {
  in_reset.collect(prefix + "in_reset.", out);
  in_update.collect(prefix + "in_update.", out);
  in_cand.collect(prefix + "in_cand.", out);
  hid_reset.collect(prefix + "hid_reset.", out);
  hid_update.collect(prefix + "hid_update.", out);
  hid_cand.collect(prefix + "hid_cand.", out);
}

}  // namespace adld
