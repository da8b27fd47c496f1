#pragma once

#include <Eigen/Dense>

namespace cicbm {

// All in-memory numerics are float64; files store float32.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Deterministic compensated sum; the order of accumulation is the order of
// the input range.
class KahanSum {
 public:
  void add(double value) {
    const double y = value - carry_;
    const double t = sum_ + y;
    carry_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace cicbm
