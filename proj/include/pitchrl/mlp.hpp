#pragma once

// Dense feed-forward network: tanh hidden layers, identity output layer.
// All parameters live in one contiguous buffer, layer by layer, each layer as
// a row-major (out x in) weight block followed by its bias, so optimizers and
// checkpoints see a flat vector.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pitchrl/errors.hpp"
#include "pitchrl/rng.hpp"

namespace pitchrl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
// Eigen's double tanh is scalar; its exp vectorizes. The padding keeps every
// element on the packet path, so a value's result does not depend on where
// it sits (a batch column equals the single-sample pass). Near zero the
// series avoids the 1 - e cancellation.
template <typename Derived>
void tanh_in_place(Eigen::PlainObjectBase<Derived>& z) {
  const Eigen::Index n = z.size();
  Eigen::ArrayXd e = Eigen::ArrayXd::Zero((n + 15) / 16 * 16);
  e.head(n) = -2.0 * Eigen::Map<const Eigen::ArrayXd>(z.data(), n).abs();
  e = e.exp();
  Eigen::Map<Eigen::ArrayXd> out(z.data(), n);
  const auto x2 = out.square();
  const auto series = out * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 - x2 * (17.0 / 315.0))));
  out = (out.abs() < 0.01).select(series, (1.0 - e.head(n)) / (1.0 + e.head(n)) * out.sign());
}
}  // namespace detail

class Mlp {
 public:
  /// Activations of every layer for one batched forward pass; column j is sample j.
  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // [0] = input, back() = output
    const Mlp* owner = nullptr;
    std::uint64_t generation = 0;
  };

  Mlp() = default;

  /// Zero-initialized network with the given layer widths.
  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw InvalidArgument("Mlp needs at least input and output widths");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] <= 0 || dims_[l + 1] <= 0) throw InvalidArgument("Mlp widths must be > 0");
      offsets_.push_back(total);
      total += static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
    }
    params_.assign(total, 0.0);
  }

  /// Xavier-uniform weights, zero biases. The last layer's weights are
  /// multiplied by `output_gain`.
  static Mlp xavier(std::vector<int> dims, std::uint64_t seed, double output_gain = 1.0) {
    Mlp net(std::move(dims));
    Rng rng(seed);
    for (int l = 0; l < net.layer_count(); ++l) {
      const int in = net.dims_[l], out = net.dims_[l + 1];
      const double limit = std::sqrt(6.0 / (in + out)) * (l + 1 == net.layer_count() ? output_gain : 1.0);
      auto w = net.weight(l);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    return net;
  }

  /// Hidden widths (10 n_in, round(sqrt(h1 h3)), 10 n_out).
  static std::vector<int> default_dims(int n_in, int n_out) {
    const int h1 = 10 * n_in;
    const int h3 = 10 * n_out;
    const int h2 = static_cast<int>(std::lround(std::sqrt(static_cast<double>(h1) * h3)));
    return {n_in, h1, h2, h3, n_out};
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_size() const { return dims_.empty() ? 0 : dims_.front(); }
  int output_size() const { return dims_.empty() ? 0 : dims_.back(); }
  int layer_count() const { return static_cast<int>(dims_.size()) - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() {
    ++generation_;
    return params_;
  }

  Eigen::Map<RowMatrix> weight(int l) {
    ++generation_;
    return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  Eigen::Map<const RowMatrix> weight(int l) const {
    return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) {
    ++generation_;
    return {params_.data() + offsets_[l] + weight_size(l), dims_[l + 1]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const {
    return {params_.data() + offsets_[l] + weight_size(l), dims_[l + 1]};
  }

  /// Batched forward; `input` is n_in x batch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const {
    if (input.rows() != input_size())
      throw InvalidArgument("Mlp::forward: expected " + std::to_string(input_size()) +
                            " inputs, got " + std::to_string(input.rows()));
    if (cache) {
      cache->activations.clear();
      cache->activations.push_back(input);
      cache->owner = this;
      cache->generation = generation_;
    }
    Eigen::MatrixXd a = input;
    for (int l = 0; l < layer_count(); ++l) {
      Eigen::MatrixXd z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < layer_count()) detail::tanh_in_place(z);
      a = std::move(z);
      if (cache) cache->activations.push_back(a);
    }
    return a;
  }

  Eigen::VectorXd forward(std::span<const double> input) const {
    if (static_cast<int>(input.size()) != input_size())
      throw InvalidArgument("Mlp::forward: expected " + std::to_string(input_size()) +
                            " inputs, got " + std::to_string(input.size()));
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(input.data(), input_size());
    for (int l = 0; l < layer_count(); ++l) {
      Eigen::VectorXd z = weight(l) * a + bias(l);
      if (l + 1 < layer_count()) detail::tanh_in_place(z);
      a = std::move(z);
    }
    return a;
  }

  /// Reverse-mode gradient of sum_j <grad_output(:, j), f(x_j)> w.r.t. every
  /// parameter, laid out like parameters().
  std::vector<double> backward(const Eigen::MatrixXd& grad_output, const Cache& cache) const {
    if (cache.owner != this || cache.generation != generation_ ||
        static_cast<int>(cache.activations.size()) != layer_count() + 1)
      throw InvalidArgument("Mlp::backward: stale or foreign forward cache");
    const Eigen::Index batch = cache.activations.front().cols();
    if (grad_output.rows() != output_size() || grad_output.cols() != batch)
      throw InvalidArgument("Mlp::backward: output gradient shape mismatch");
    std::vector<double> grad(params_.size(), 0.0);
    Eigen::MatrixXd delta = grad_output;
    for (int l = layer_count() - 1; l >= 0; --l) {
      const Eigen::MatrixXd& a_in = cache.activations[l];
      Eigen::Map<RowMatrix> gw(grad.data() + offsets_[l], dims_[l + 1], dims_[l]);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + weight_size(l), dims_[l + 1]);
      // Evaluated into aligned storage first: Eigen sums peeled coefficients in
      // a different order, so writing straight into `grad` would tie results
      // to its address.
      const RowMatrix w_grad = delta * a_in.transpose();
      const Eigen::VectorXd b_grad = delta.rowwise().sum();
      gw = w_grad;
      gb = b_grad;
      if (l > 0) {
        Eigen::MatrixXd back = weight(l).transpose() * delta;
        delta = (back.array() * (1.0 - a_in.array().square())).matrix();
      }
    }
    return grad;
  }

  bool finite() const {
    for (double p : params_)
      if (!std::isfinite(p)) return false;
    return true;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  std::size_t weight_size(int l) const {
    return static_cast<std::size_t>(dims_[l + 1]) * dims_[l];
  }

  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;
  // Aligned so the Eigen kernels over the layer maps take the same path
  // wherever the buffer lands; otherwise results drift by an ulp between copies.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
  std::uint64_t generation_ = 0;
};

}  // namespace pitchrl
