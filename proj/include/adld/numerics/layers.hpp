#pragma once

#include <span>
#include <string>
#include <vector>

#include "adld/numerics/rng.hpp"
#include "adld/numerics/tape.hpp"
#include "adld/numerics/tensor.hpp"

namespace adld {

// Named, mutable view of a parameter tensor owned by some network.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};
using ParamRefs = std::vector<ParamRef>;

enum class Activation { kRelu, kTanh };

struct Dense {
  Tensor weight;  // out x in
  Tensor bias;    // out

  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng);
  static Dense zeros(std::size_t in, std::size_t out);

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  Var forward(Tape& tape, Var x, Grad g) const;
  void collect(const std::string& prefix, ParamRefs& out);
};

// Hidden layers use the activation; the last layer is linear.
struct Mlp {
  std::vector<Dense> layers;
  Activation activation = Activation::kRelu;

  Mlp() = default;
  Mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t out, Rng& rng,
      Activation act = Activation::kRelu);

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  Var forward(Tape& tape, Var x, Grad g) const;
  void collect(const std::string& prefix, ParamRefs& out);
};

// Gated recurrent cell:
//   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
struct Gru {
  Dense in_reset, in_update, in_cand;
  Dense hid_reset, hid_update, hid_cand;

  Gru() = default;
  Gru(std::size_t in, std::size_t hidden, Rng& rng);
  static Gru zeros(std::size_t in, std::size_t hidden);

  std::size_t in_dim() const { return in_reset.in_dim(); }
  std::size_t hidden_dim() const { return hid_reset.out_dim(); }

  Var step(Tape& tape, Var x, Var h, Grad g) const;
  // Hidden state after each frame, oldest first. Empty input gives empty output.
  std::vector<Var> forward(Tape& tape, std::span<const Var> xs, Var h0,
                           Grad g) const;
  void collect(const std::string& prefix, ParamRefs& out);
};

}  // namespace adld
