#pragma once

#include <Eigen/Core>

#include <vector>

#include "cisrl/rng.hpp"

namespace cisrl {

/// Fully connected network with tanh hidden layers and a linear output.
/// Weights are (out, in); the batched API keeps one sample per row.
struct Mlp {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static Mlp create(const std::vector<int>& sizes, Rng& rng,
                    double last_layer_scale = 1.0);

  std::vector<int> layer_sizes() const;
  int param_count() const;

  double forward_scalar(const Eigen::Vector2d& input) const;

  /// Forward pass caching activations for backward_batch.
  struct Cache {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> hidden;  // post-tanh activations per layer
  };
  Eigen::VectorXd forward_batch(const Eigen::MatrixXd& inputs,
                                Cache& cache) const;

  /// Accumulates dL/dw, dL/db into grad given per-sample output gradients.
  struct Grad {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;

    static Grad zeros_like(const Mlp& net);
    void set_zero();
  };
  void backward_batch(const Cache& cache, const Eigen::VectorXd& dout,
                      Grad& grad) const;

  // Flat layout: per layer, weights row-major then bias. Shared by the
  // optimizer, the finite-difference checks, and the weights file.
  void write_flat(double* dst) const;
  void read_flat(const double* src);
};

void write_flat_grad(const Mlp::Grad& grad, double* dst);

}  // namespace cisrl
