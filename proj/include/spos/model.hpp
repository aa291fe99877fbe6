#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

#include "spos/dataset.hpp"
#include "spos/rng.hpp"

namespace spos {

enum class ModelKind { GaussianMean, LogNormalMean, LogisticRegression };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GaussianMean: return "gaussian_mean";
    case ModelKind::LogNormalMean: return "lognormal_mean";
    case ModelKind::LogisticRegression: return "logistic_regression";
  }
  return "?";
}

struct ClosedFormPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

// Sum-decomposable potential U(theta) = sum_j U_j(theta), with per-datum
// gradients F_j(theta) = -grad log p(x_j|theta) + (lambda/N) theta for the
// Gaussian prior N(0, lambda^{-1} I); lambda = 0 means a flat prior.
//
// U keeps the likelihood quadratic / log-loss terms intact and drops only
// normalizing constants, so U(theta)=0 at theta=x for a single Gaussian datum.
class Model {
 public:
  Model(ModelKind kind, Dataset dataset, double prior_precision)
      : kind_(kind), data_(std::move(dataset)), lambda_(prior_precision) {
    data_.validate();
    if (lambda_ < 0.0) throw std::invalid_argument("Model: prior_precision must be >= 0");
    const bool wants_labels = kind_ == ModelKind::LogisticRegression;
    if (wants_labels != data_.labels.has_value())
      throw std::invalid_argument(
          "Model: labels must be present iff the model is logistic regression");
    if (kind_ == ModelKind::LogNormalMean && (data_.features.array() <= 0.0).any())
      throw std::invalid_argument("Model: log-normal data must be strictly positive");

    if (kind_ == ModelKind::LogNormalMean)
      targets_ = data_.features.array().log().matrix();
    else if (kind_ == ModelKind::GaussianMean)
      targets_ = data_.features;
    if (targets_.size() > 0) target_sum_ = targets_.colwise().sum();
  }

  ModelKind kind() const { return kind_; }
  const Dataset& data() const { return data_; }
  double prior_precision() const { return lambda_; }
  Eigen::Index n() const { return data_.n(); }
  Eigen::Index dim() const { return data_.dim(); }

  // F_j(theta); `out` accumulates (+=) so estimator inner loops stay
  // allocation-free.
  void add_grad_component(Eigen::Index j, const Eigen::VectorXd& theta,
                          Eigen::VectorXd& out) const {
    check_theta(theta);
    if (j < 0 || j >= n()) throw std::out_of_range("grad_component: index out of range");
    const double prior_scale = lambda_ / static_cast<double>(n());
    switch (kind_) {
      case ModelKind::GaussianMean:
      case ModelKind::LogNormalMean:
        out += theta - targets_.row(j).transpose() + prior_scale * theta;
        break;
      case ModelKind::LogisticRegression: {
        const double z = data_.features.row(j).dot(theta);
        const double residual = sigmoid(z) - (*data_.labels)(j);
        out += residual * data_.features.row(j).transpose() + prior_scale * theta;
        break;
      }
    }
  }

  Eigen::VectorXd grad_component(Eigen::Index j, const Eigen::VectorXd& theta) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    add_grad_component(j, theta, out);
    return out;
  }

  // F(theta) = sum_j F_j(theta).
  Eigen::VectorXd full_grad(const Eigen::VectorXd& theta) const {
    check_theta(theta);
    const auto n_d = static_cast<double>(n());
    switch (kind_) {
      case ModelKind::GaussianMean:
      case ModelKind::LogNormalMean:
        return (n_d + lambda_) * theta - target_sum_.transpose();
      case ModelKind::LogisticRegression: {
        const Eigen::VectorXd z = data_.features * theta;
        Eigen::VectorXd residual(n());
        for (Eigen::Index j = 0; j < n(); ++j) residual(j) = sigmoid(z(j)) - (*data_.labels)(j);
        return data_.features.transpose() * residual + lambda_ * theta;
      }
    }
    throw std::logic_error("unreachable");
  }

  double potential(const Eigen::VectorXd& theta) const {
    check_theta(theta);
    const double prior = 0.5 * lambda_ * theta.squaredNorm();
    switch (kind_) {
      case ModelKind::GaussianMean:
      case ModelKind::LogNormalMean: {
        const Eigen::MatrixXd diff = targets_.rowwise() - theta.transpose();
        return 0.5 * diff.squaredNorm() + prior;
      }
      case ModelKind::LogisticRegression: {
        const Eigen::VectorXd z = data_.features * theta;
        double u = 0.0;
        for (Eigen::Index j = 0; j < n(); ++j) u += softplus(z(j)) - (*data_.labels)(j) * z(j);
        return u + prior;
      }
    }
    throw std::logic_error("unreachable");
  }

  // Conjugate ground truth: N(sum(targets)/(N+lambda), I/(N+lambda)).
  ClosedFormPosterior closed_form_posterior() const {
    if (kind_ == ModelKind::LogisticRegression)
      throw std::invalid_argument("closed_form_posterior: unsupported for logistic regression");
    const double denom = static_cast<double>(n()) + lambda_;
    ClosedFormPosterior post;
    post.mean = target_sum_.transpose() / denom;
    post.covariance = Eigen::MatrixXd::Identity(dim(), dim()) / denom;
    return post;
  }

 private:
  void check_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != dim()) throw std::invalid_argument("Model: theta dimension mismatch");
    if (!theta.allFinite()) throw std::invalid_argument("Model: non-finite theta");
  }

  ModelKind kind_;
  Dataset data_;
  double lambda_;
  Eigen::MatrixXd targets_;    // x_j (Gaussian) or ln x_j (log-normal)
  Eigen::RowVectorXd target_sum_;
};

// Posterior-predictive p_i = (1/M) sum_m sigmoid(alpha_m . x_i).
inline Eigen::VectorXd blr_predict(const Eigen::MatrixXd& alpha_samples,
                                   const Eigen::MatrixXd& x_test) {
  if (alpha_samples.rows() < 1) throw std::invalid_argument("blr_predict: need M >= 1 samples");
  if (alpha_samples.cols() != x_test.cols())
    throw std::invalid_argument("blr_predict: dimension mismatch");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(x_test.rows());
  for (Eigen::Index m = 0; m < alpha_samples.rows(); ++m) {
    const Eigen::VectorXd z = x_test * alpha_samples.row(m).transpose();
    for (Eigen::Index i = 0; i < z.size(); ++i) p(i) += sigmoid(z(i));
  }
  return p / static_cast<double>(alpha_samples.rows());
}

// x_j = exp(mu_true + z_j), z_j ~ N(0, I), from the seeded stream.
inline Dataset make_lognormal_data(const Eigen::VectorXd& mu_true, Eigen::Index n_rows,
                                   uint64_t seed) {
  if (n_rows < 1) throw std::invalid_argument("make_lognormal_data: need N >= 1");
  RngStream stream(seed, 0, StreamPurpose::Data);
  Dataset ds;
  ds.name = "lognormal-synthetic";
  ds.features.resize(n_rows, mu_true.size());
  for (Eigen::Index j = 0; j < n_rows; ++j)
    for (Eigen::Index c = 0; c < mu_true.size(); ++c)
      ds.features(j, c) = std::exp(mu_true(c) + stream.normal());
  return ds;
}

}  // namespace spos
