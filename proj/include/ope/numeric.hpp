#pragma once

#include <cmath>
#include <span>

namespace ope {

// Neumaier compensated summation. Every reduction over trajectories goes
// through this in index order so results are reproducible bit for bit.
class Accumulator {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  Accumulator acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

inline double compensated_mean(std::span<const double> xs) {
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace ope
