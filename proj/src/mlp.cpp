#include "cisrl/mlp.hpp"

#include <cmath>

namespace cisrl {

Mlp Mlp::create(const std::vector<int>& sizes, Rng& rng,
                double last_layer_scale) {
  Mlp net;
  const std::size_t layers = sizes.size() - 1;
  net.w.reserve(layers);
  net.b.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const double scale = (l + 1 == layers) ? last_layer_scale : 1.0;
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        w(r, c) = scale * rng.uniform(-limit, limit);
      }
    }
    net.w.push_back(std::move(w));
    net.b.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return net;
}

std::vector<int> Mlp::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(w.front().cols()));
  for (const auto& m : w) sizes.push_back(static_cast<int>(m.rows()));
  return sizes;
}

int Mlp::param_count() const {
  int n = 0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    n += static_cast<int>(w[l].size() + b[l].size());
  }
  return n;
}

double Mlp::forward_scalar(const Eigen::Vector2d& input) const {
  Eigen::VectorXd h = input;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    h = (w[l] * h + b[l]).array().tanh();
  }
  return (w.back() * h + b.back())(0);
}

Eigen::VectorXd Mlp::forward_batch(const Eigen::MatrixXd& inputs,
                                   Cache& cache) const {
  cache.input = inputs;
  cache.hidden.resize(w.size() - 1);
  const Eigen::MatrixXd* prev = &cache.input;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    cache.hidden[l] =
        ((*prev * w[l].transpose()).rowwise() + b[l].transpose())
            .array()
            .tanh();
    prev = &cache.hidden[l];
  }
  return (*prev * w.back().transpose()).rowwise() + b.back().transpose();
}

Mlp::Grad Mlp::Grad::zeros_like(const Mlp& net) {
  Grad g;
  g.w.reserve(net.w.size());
  g.b.reserve(net.b.size());
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    g.w.push_back(Eigen::MatrixXd::Zero(net.w[l].rows(), net.w[l].cols()));
    g.b.push_back(Eigen::VectorXd::Zero(net.b[l].size()));
  }
  return g;
}

void Mlp::Grad::set_zero() {
  for (auto& m : w) m.setZero();
  for (auto& v : b) v.setZero();
}

void Mlp::backward_batch(const Cache& cache, const Eigen::VectorXd& dout,
                         Grad& grad) const {
  const std::size_t last = w.size() - 1;
  const Eigen::MatrixXd& top =
      last == 0 ? cache.input : cache.hidden[last - 1];

  // output layer is linear with a single unit
  grad.w[last].noalias() += dout.transpose() * top;
  grad.b[last](0) += dout.sum();

  Eigen::MatrixXd dh = dout * w[last];  // (B, hidden)
  for (std::size_t l = last; l-- > 0;) {
    const Eigen::MatrixXd& act = cache.hidden[l];
    const Eigen::MatrixXd dz =
        dh.array() * (1.0 - act.array().square());
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.hidden[l - 1];
    grad.w[l].noalias() += dz.transpose() * below;
    grad.b[l].noalias() += dz.colwise().sum().transpose();
    if (l > 0) dh.noalias() = dz * w[l];
  }
}

void Mlp::write_flat(double* dst) const {
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (Eigen::Index r = 0; r < w[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < w[l].cols(); ++c) *dst++ = w[l](r, c);
    }
    for (Eigen::Index i = 0; i < b[l].size(); ++i) *dst++ = b[l](i);
  }
}

void Mlp::read_flat(const double* src) {
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (Eigen::Index r = 0; r < w[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < w[l].cols(); ++c) w[l](r, c) = *src++;
    }
    for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l](i) = *src++;
  }
}

void write_flat_grad(const Mlp::Grad& grad, double* dst) {
  for (std::size_t l = 0; l < grad.w.size(); ++l) {
    for (Eigen::Index r = 0; r < grad.w[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < grad.w[l].cols(); ++c) {
        *dst++ = grad.w[l](r, c);
      }
    }
    for (Eigen::Index i = 0; i < grad.b[l].size(); ++i) *dst++ = grad.b[l](i);
  }
}

}  // namespace cisrl
