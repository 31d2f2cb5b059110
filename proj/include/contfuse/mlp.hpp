#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "contfuse/ops.hpp"

namespace contfuse {

/// Xavier/Glorot-uniform fill for a weight with the given fan-in/fan-out.
inline void xavier_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const Real bound = std::sqrt(6.0 / static_cast<Real>(fan_in + fan_out));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  for (Real& v : w.data()) v = dist(rng);
}

/// Fully connected stack on row batches: ReLU between layers, linear output.
class Mlp {
 public:
  Mlp() = default;

  /// widths = {in, hidden..., out}
  Mlp(std::vector<std::size_t> widths, std::mt19937_64& rng) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw DimensionError("Mlp needs at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      Tensor w({widths_[l], widths_[l + 1]});
      xavier_uniform(w, widths_[l], widths_[l + 1], rng);
      weights_.push_back(w.set_requires_grad());
      biases_.push_back(Tensor({widths_[l + 1]}, 0.0).set_requires_grad());
    }
  }

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }

  Tensor& weight(std::size_t layer) { return weights_.at(layer); }
  Tensor& bias(std::size_t layer) { return biases_.at(layer); }
  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }

  /// x [M×in] → [M×out]
  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != input_dim())
      throw DimensionError("Mlp input " + to_string(x.shape()) + ", expected width " +
                           std::to_string(input_dim()));
    Tensor h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = add_bias_rows(matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = relu(h);
    }
    return h;
  }

  void zero_output_layer() {
    for (Real& v : weights_.back().data()) v = 0.0;
    for (Real& v : biases_.back().data()) v = 0.0;
  }

  void append_parameters(const std::string& prefix, NamedTensors& out) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.emplace_back(prefix + ".w" + std::to_string(l), weights_[l]);
      out.emplace_back(prefix + ".b" + std::to_string(l), biases_[l]);
    }
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Tensor> weights_;  // [in×out]
  std::vector<Tensor> biases_;
};

}  // namespace contfuse
