#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spos/dataset.hpp"
#include "spos/estimator.hpp"
#include "spos/model.hpp"

namespace spos {

// One row of experiment output.
struct MetricRecord {
  int64_t step = 0;
  double data_passes = 0.0;
  double wall_time_s = 0.0;
  std::vector<std::pair<std::string, double>> values;
};

// ln of the coordinate-averaged squared error, clamped below at ln(1e-300).
inline double log_mse_mean(const Eigen::VectorXd& particle_mean, const Eigen::VectorXd& reference) {
  if (particle_mean.size() != reference.size())
    throw std::invalid_argument("log_mse_mean: dimension mismatch");
  const double mse =
      (particle_mean - reference).squaredNorm() / static_cast<double>(particle_mean.size());
  return std::log(std::max(mse, 1e-300));
}

// Exact minimal-cost assignment (Jonker-Volgenant style shortest augmenting
// paths) on a square cost matrix. Returns the optimal total cost.
inline double solve_assignment(const Eigen::MatrixXd& cost, std::vector<int>* row_to_col = nullptr) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n || n < 1) throw std::invalid_argument("solve_assignment: square matrix required");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  if (row_to_col) row_to_col->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (match[j] == 0) continue;
    total += cost(match[j] - 1, j - 1);
    if (row_to_col) (*row_to_col)[match[j] - 1] = j - 1;
  }
  return total;
}

namespace metrics_detail {

inline void check_w2_inputs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("w2_empirical: sample count/dimension mismatch");
  if (a.rows() < 1) throw std::invalid_argument("w2_empirical: empty samples");
  if (a.rows() > 512)
    throw std::invalid_argument(
        "w2_empirical: n > 512; use the 1-D path or subsample explicitly");
}

}  // namespace metrics_detail

// Exact empirical W2 via optimal assignment on the squared-distance matrix.
inline double w2_empirical_assignment(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  metrics_detail::check_w2_inputs(a, b);
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  const double total = solve_assignment(cost);
  return std::sqrt(std::max(total, 0.0) / static_cast<double>(n));
}

// 1-D W2 by sorting both samples.
inline double w2_empirical_sorted(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("w2_empirical: sample count mismatch");
  std::vector<double> sa(a.data(), a.data() + a.size());
  std::vector<double> sb(b.data(), b.data() + b.size());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double total = 0.0;
  for (size_t i = 0; i < sa.size(); ++i) total += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(total / static_cast<double>(sa.size()));
}

inline double w2_empirical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  metrics_detail::check_w2_inputs(a, b);
  if (a.cols() == 1) return w2_empirical_sorted(a.col(0), b.col(0));
  return w2_empirical_assignment(a, b);
}

namespace metrics_detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const std::string& what) {
  if (!s.isApprox(s.transpose(), 1e-10))
    throw std::invalid_argument(what + ": matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-10 * scale) throw std::invalid_argument(what + ": matrix not PSD");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace metrics_detail

// Closed-form W2 between Gaussians:
// sqrt(|mu1-mu2|^2 + tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2})).
inline double w2_gaussian(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                          const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2) {
  if (mean1.size() != mean2.size() || cov1.rows() != mean1.size() || cov2.rows() != mean2.size())
    throw std::invalid_argument("w2_gaussian: dimension mismatch");
  const Eigen::MatrixXd s2h = metrics_detail::psd_sqrt(cov2, "w2_gaussian(cov2)");
  const Eigen::MatrixXd inner = s2h * cov1 * s2h;
  const Eigen::MatrixXd cross = metrics_detail::psd_sqrt(
      Eigen::MatrixXd(0.5 * (inner + inner.transpose())), "w2_gaussian(cross)");
  if (!cov1.isApprox(cov1.transpose(), 1e-10))
    throw std::invalid_argument("w2_gaussian(cov1): matrix not symmetric");
  const double trace_term = (cov1 + cov2 - 2.0 * cross).trace();
  return std::sqrt((mean1 - mean2).squaredNorm() + std::max(trace_term, 0.0));
}

// Test accuracy (ties at p = 0.5 predict class 1) and average predictive
// log-likelihood for Bayesian logistic regression.
inline std::pair<double, double> blr_test_metrics(const Eigen::MatrixXd& alpha_samples,
                                                  const Dataset& test) {
  if (!test.labels) throw std::invalid_argument("blr_test_metrics: labels required");
  if (test.n() < 1) throw std::invalid_argument("blr_test_metrics: empty test set");
  const Eigen::VectorXd p = blr_predict(alpha_samples, test.features);
  double correct = 0.0;
  double loglik = 0.0;
  for (Eigen::Index i = 0; i < test.n(); ++i) {
    const double y = (*test.labels)(i);
    const double predicted = p(i) >= 0.5 ? 1.0 : 0.0;
    if (predicted == y) correct += 1.0;
    const double lp = y == 1.0 ? std::log(std::max(p(i), 1e-300))
                               : std::log(std::max(1.0 - p(i), 1e-300));
    loglik += lp;
  }
  const auto n = static_cast<double>(test.n());
  return {correct / n, loglik / n};
}

// ---------------------------------------------------------------------------
// Theory calculator: the constants C1..C5 and the per-variant W2 bounds,
// evaluated literally from user-supplied assumption-level constants.
// ---------------------------------------------------------------------------

struct TheoryInputs {
  // model constants
  double m_F = 0, L_F = 0, H_F = 0, D_F = 0;
  // kernel constants
  double m_K = 0, L_K = 0, H_K = 0, L_gradK = 0, H_gradK = 0, D_hessK = 0;
  double sigma = 0;      // bounded-variance constant
  double beta_inv = 1;   // beta^{-1}
  double M = 1;          // particle count
  double alpha = 0.25;   // exponent in (0, 1/2]
  double h = 0;          // step size
  double B = 1;          // minibatch size
  double b = 1;          // anchor batch (SVRG+)
  double tau = 1;        // epoch length
  double T = 0;          // iterations
  double W2_0 = 0;       // initial W2 distance
  double d = 1;          // dimension
  double N = 1;          // dataset size

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("TheoryInputs: ") + name + " must be >= 0");
    };
    nonneg(m_F, "m_F"); nonneg(L_F, "L_F"); nonneg(H_F, "H_F"); nonneg(D_F, "D_F");
    nonneg(m_K, "m_K"); nonneg(L_K, "L_K"); nonneg(H_K, "H_K");
    nonneg(L_gradK, "L_gradK"); nonneg(H_gradK, "H_gradK"); nonneg(D_hessK, "D_hessK");
    nonneg(sigma, "sigma"); nonneg(W2_0, "W2_0"); nonneg(T, "T");
    if (!(beta_inv > 0)) throw std::invalid_argument("TheoryInputs: beta_inv must be > 0");
    if (!(h > 0)) throw std::invalid_argument("TheoryInputs: h must be > 0");
    if (!(alpha > 0 && alpha <= 0.5))
      throw std::invalid_argument("TheoryInputs: alpha must be in (0, 1/2]");
    for (auto [v, name] : {std::pair<double, const char*>{M, "M"}, {B, "B"}, {b, "b"},
                           {tau, "tau"}, {d, "d"}, {N, "N"}})
      if (!(v >= 1)) throw std::invalid_argument(std::string("TheoryInputs: ") + name + " must be >= 1");
    if (!(beta_inv > 3.0 * H_F * L_K + 2.0 * L_F))
      throw std::invalid_argument(
          "TheoryInputs: require beta_inv > 3*H_F*L_K + 2*L_F (C1 denominator positive)");
    if (!(beta_inv * m_F - 2.0 * L_F - 3.0 * H_F * L_K > 0))
      throw std::invalid_argument(
          "TheoryInputs: require beta_inv*m_F - 2*L_F - 3*H_F*L_K > 0 (C3 positive)");
  }
};

struct TheoryConstants {
  double c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0;
};

inline TheoryConstants theory_constants(const TheoryInputs& in) {
  in.validate();
  TheoryConstants c;
  c.c1 = (in.H_gradK + in.H_F) /
         (std::sqrt(2.0) * (in.beta_inv - 3.0 * in.H_F * in.L_K - 2.0 * in.L_F));
  const double lip = in.beta_inv * in.L_F + 2.0 * in.L_K * in.H_F + in.H_K * in.L_F + in.L_gradK;
  c.c2 = std::sqrt(2.0 * lip * lip + 2.0);
  c.c3 = in.beta_inv * in.m_F - 2.0 * in.L_F - 3.0 * in.H_F * in.L_K;
  c.c4 = in.beta_inv * in.D_F + 4.0 * in.D_hessK + 4.0 * in.H_F * in.L_gradK +
         2.0 * in.L_F * in.H_gradK + 2.0 * in.H_F * in.L_K + in.L_F * in.H_K;
  c.c5 = 2.0 * in.beta_inv * in.sigma * in.sigma + 2.0 * in.H_K * in.H_K * in.sigma * in.sigma;
  return c;
}

struct BoundTerm {
  std::string label;
  double value = 0.0;
};

struct BoundBreakdown {
  std::vector<BoundTerm> terms;
  double total = 0.0;
  std::string note;
};

// Thrown when a theorem's stated step-size/batch preconditions fail; the
// message carries the violated inequality.
class PreconditionError : public std::invalid_argument {
 public:
  explicit PreconditionError(const std::string& inequality)
      : std::invalid_argument("precondition violated: " + inequality) {}
};

inline BoundBreakdown bound_eval(EstimatorKind variant, const TheoryInputs& in) {
  const TheoryConstants c = theory_constants(in);
  BoundBreakdown out;
  const double sqrt_m = std::sqrt(in.M);
  const double m_alpha = std::pow(in.M, in.alpha);
  const double sqrt_d = std::sqrt(in.d);
  auto push = [&out](const std::string& label, double value) {
    out.terms.push_back({label, value});
    out.total += value;
  };

  switch (variant) {
    case EstimatorKind::SAGA: {
      if (!(in.h < in.B / (8.0 * c.c2 * in.N))) throw PreconditionError("h < B/(8 C2 N)");
      if (!(in.B >= 9.0)) throw PreconditionError("B >= 9");
      push("C1/sqrt(M)", c.c1 / sqrt_m);
      push("5 exp(-C3 h T/4) W2_0", 5.0 * std::exp(-c.c3 * in.h * in.T / 4.0) * in.W2_0);
      push("2 h C4 d M^(1/2-a)/C3",
           2.0 * in.h * c.c4 * in.d * std::pow(in.M, 0.5 - in.alpha) / c.c3);
      push("2 h C2^(3/2) sqrt(d)/(C3 M^a)",
           2.0 * in.h * std::pow(c.c2, 1.5) * sqrt_d / (c.c3 * m_alpha));
      push("24 h C2 sqrt(dN)/(M^a sqrt(C3) B)",
           24.0 * in.h * c.c2 * std::sqrt(in.d * in.N) / (m_alpha * std::sqrt(c.c3) * in.B));
      break;
    }
    case EstimatorKind::SVRG_I: {
      if (!(in.h < 1.0 / (8.0 * c.c2))) throw PreconditionError("h < 1/(8 C2)");
      if (!(in.B >= 2.0)) throw PreconditionError("B >= 2");
      const double tau_factor = 1.0 - 2.0 * in.h * c.c2 * (1.0 + 2.0 / in.B);
      if (tau_factor > 0.0)
        out.note = "theorem-stated epoch length tau* = " +
                   std::to_string(4.0 / (in.h * c.c3 * tau_factor)) +
                   " (bound stated for T mod tau = 0)";
      push("C1/sqrt(M)", c.c1 / sqrt_m);
      push("exp(-C3 h T/56) sqrt(C2/C3) W2_0",
           std::exp(-c.c3 * in.h * in.T / 56.0) * std::sqrt(c.c2 / c.c3) * in.W2_0);
      push("2 h C4 d M^(1/2-a)/C3",
           2.0 * in.h * c.c4 * in.d * std::pow(in.M, 0.5 - in.alpha) / c.c3);
      push("2 h C2^(3/2) sqrt(d)/(C3 M^a)",
           2.0 * in.h * std::pow(c.c2, 1.5) * sqrt_d / (c.c3 * m_alpha));
      push("64 C2^(3/2) sqrt(h d)/(M^a sqrt(B) C3)",
           64.0 * std::pow(c.c2, 1.5) * std::sqrt(in.h * in.d) /
               (m_alpha * std::sqrt(in.B) * c.c3));
      break;
    }
    case EstimatorKind::SVRG_II: {
      if (!(in.h < std::sqrt(in.B) / (4.0 * in.tau * c.c2)))
        throw PreconditionError("h < sqrt(B)/(4 tau C2)");
      push("C1/sqrt(M)", c.c1 / sqrt_m);
      push("exp(-C3 h T/4) W2_0", std::exp(-c.c3 * in.h * in.T / 4.0) * in.W2_0);
      push("sqrt(2) h C4 d M^(1/2-a)/C3",
           std::sqrt(2.0) * in.h * c.c4 * in.d * std::pow(in.M, 0.5 - in.alpha) / c.c3);
      push("5 h C2^(3/2) sqrt(d)/(C3 M^a)",
           5.0 * in.h * std::pow(c.c2, 1.5) * sqrt_d / (c.c3 * m_alpha));
      push("9 h C2 tau sqrt(d)/(M^a sqrt(B C3))",
           9.0 * in.h * c.c2 * in.tau * sqrt_d / (m_alpha * std::sqrt(in.B * c.c3)));
      break;
    }
    case EstimatorKind::SVRGPlus: {
      const double cap1 = std::cbrt(in.B * c.c3 / (24.0 * std::pow(c.c2, 4.0) * in.tau * in.tau));
      const double cap2 = 1.0 / (6.0 * in.tau * (c.c5 * c.c5 / in.b + c.c2));
      if (!(in.h <= std::min(cap1, cap2)))
        throw PreconditionError("h <= min{(B C3/(24 C2^4 tau^2))^(1/3), 1/(6 tau (C5^2/b + C2))}");
      push("C1/sqrt(M)", c.c1 / sqrt_m);
      const double contraction = in.h * c.c3 / 4.0;
      const double geom = contraction < 1.0 ? std::exp(in.T * std::log1p(-contraction))
                                            : std::pow(1.0 - contraction, in.T);
      push("(1 - h C3/4)^T W2_0", geom * in.W2_0);
      const double indicator = in.b <= in.N ? 1.0 : 0.0;
      push("3 C5 sqrt(d) 1(b<=N)/(M^a C3 sqrt(b))",
           3.0 * c.c5 * sqrt_d * indicator / (m_alpha * c.c3 * std::sqrt(in.b)));
      push("2 h C4 d M^(1/2-a)/C3",
           2.0 * in.h * c.c4 * in.d * std::pow(in.M, 0.5 - in.alpha) / c.c3);
      push("2 h C2^(3/2) sqrt(d)/(C3 M^a)",
           2.0 * in.h * std::pow(c.c2, 1.5) * sqrt_d / (c.c3 * m_alpha));
      push("min(4 h C2 sqrt(tau d), 3 sqrt(h d) C5)/(M^a sqrt(B C3))",
           std::min(4.0 * in.h * c.c2 * std::sqrt(in.tau * in.d),
                    3.0 * std::sqrt(in.h * in.d) * c.c5) /
               (m_alpha * std::sqrt(in.B * c.c3)));
      break;
    }
    case EstimatorKind::Plain:
      throw std::invalid_argument("bound_eval: no theorem bound for the plain estimator");
  }
  return out;
}

}  // namespace spos
