#pragma once

#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace spos {

// Immutable after construction; models hold it by value.
struct Dataset {
  Eigen::MatrixXd features;                // N x d
  std::optional<Eigen::VectorXd> labels;   // length N, entries in {0, 1}
  std::string name;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  void validate() const {
    if (features.rows() < 1 || features.cols() < 1)
      throw std::invalid_argument("Dataset '" + name + "': need N >= 1 and d >= 1");
    if (!features.allFinite())
      throw std::invalid_argument("Dataset '" + name + "': non-finite feature entry");
    if (labels) {
      if (labels->size() != features.rows())
        throw std::invalid_argument("Dataset '" + name + "': label count != row count");
      for (Eigen::Index i = 0; i < labels->size(); ++i) {
        const double y = (*labels)(i);
        if (y != 0.0 && y != 1.0)
          throw std::invalid_argument("Dataset '" + name + "': label not in {0,1} at row " +
                                      std::to_string(i));
      }
    }
  }
};

}  // namespace spos
