#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace spos {

enum class BandwidthMode { Fixed, MedianHeuristic };

// RBF kernel K(u) = exp(-|u|^2 / (2 eta^2)). The zero_kernel flag forces
// K == 0 and gradK == 0, which reduces SPOS to independent SGLD chains.
struct KernelConfig {
  double bandwidth = 1.0;
  BandwidthMode mode = BandwidthMode::Fixed;
  bool zero_kernel = false;

  void validate() const {
    if (!zero_kernel && !(bandwidth > 0.0))
      throw std::invalid_argument("KernelConfig: bandwidth must be > 0");
  }
};

inline double kernel_eval(const KernelConfig& cfg, const Eigen::VectorXd& u) {
  if (cfg.zero_kernel) return 0.0;
  return std::exp(-u.squaredNorm() / (2.0 * cfg.bandwidth * cfg.bandwidth));
}

// gradK(u) = -(u / eta^2) K(u); odd, so gradK(0) = 0.
inline Eigen::VectorXd kernel_grad(const KernelConfig& cfg, const Eigen::VectorXd& u) {
  if (cfg.zero_kernel) return Eigen::VectorXd::Zero(u.size());
  const double k = kernel_eval(cfg, u);
  return (-k / (cfg.bandwidth * cfg.bandwidth)) * u;
}

// eta = sqrt(median of pairwise squared distances / (2 ln(M+1))), floored.
inline double median_bandwidth(const Eigen::MatrixXd& positions) {
  const Eigen::Index m = positions.rows();
  if (m < 2) throw std::invalid_argument("median_bandwidth: need M >= 2 particles");
  std::vector<double> sq_dists;
  sq_dists.reserve(static_cast<size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      sq_dists.push_back((positions.row(i) - positions.row(j)).squaredNorm());
  const size_t mid = sq_dists.size() / 2;
  std::nth_element(sq_dists.begin(), sq_dists.begin() + mid, sq_dists.end());
  const double eta =
      std::sqrt(sq_dists[mid] / (2.0 * std::log(static_cast<double>(m) + 1.0)));
  return std::max(eta, 1e-6);
}

}  // namespace spos
