#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pitchrl/errors.hpp"

namespace pitchrl {

/// Per-feature running mean/variance over every observation seen in a training
/// run. Identity until the first update. Batches are folded in with the
/// pairwise (Chan et al.) merge so one update per episode matches a single pass
/// over the concatenated data.
class Normalizer {
 public:
  explicit Normalizer(std::size_t features = 0, double std_floor = 1e-8)
      : mean_(features, 0.0), m2_(features, 0.0), std_floor_(std_floor) {}

  std::size_t features() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }
  double std_floor() const { return std_floor_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }

  /// Population variance of feature i.
  double variance(std::size_t i) const {
    return count_ == 0 ? 1.0 : std::max(0.0, m2_[i] / static_cast<double>(count_));
  }

  /// `rows` is a row-major block of n x features() observations.
  void update(std::span<const double> rows) {
    const std::size_t f = features();
    if (f == 0 || rows.empty()) return;
    if (rows.size() % f != 0) throw InvalidArgument("Normalizer::update: ragged observation block");
    const std::size_t n = rows.size() / f;
    std::vector<double> batch_mean(f, 0.0), batch_m2(f, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double k = static_cast<double>(r + 1);
      for (std::size_t i = 0; i < f; ++i) {
        const double x = rows[r * f + i];
        const double d = x - batch_mean[i];
        batch_mean[i] += d / k;
        batch_m2[i] += d * (x - batch_mean[i]);
      }
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(n);
    const double total = na + nb;
    for (std::size_t i = 0; i < f; ++i) {
      const double delta = batch_mean[i] - mean_[i];
      mean_[i] += delta * nb / total;
      m2_[i] += batch_m2[i] + delta * delta * na * nb / total;
    }
    count_ += n;
  }

  void normalize(std::span<const double> in, std::span<double> out) const {
    if (in.size() != features() || out.size() != features())
      throw InvalidArgument("Normalizer::normalize: feature count mismatch");
    if (count_ == 0) {
      std::copy(in.begin(), in.end(), out.begin());
      return;
    }
    for (std::size_t i = 0; i < features(); ++i)
      out[i] = (in[i] - mean_[i]) / std::max(std::sqrt(variance(i)), std_floor_);
  }

  /// Restores exact statistics (checkpoint load).
  void restore(std::vector<double> mean, std::vector<double> m2, std::uint64_t count) {
    if (mean.size() != m2.size()) throw InvalidArgument("Normalizer::restore: size mismatch");
    mean_ = std::move(mean);
    m2_ = std::move(m2);
    count_ = count;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  std::uint64_t count_ = 0;
  double std_floor_ = 1e-8;
};

}  // namespace pitchrl
