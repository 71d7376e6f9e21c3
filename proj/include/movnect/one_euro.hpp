// 1 Euro filter: adaptive first-order low-pass whose cutoff rises with the
// smoothed derivative (fc = fc_min + beta * |dx|), smoothing factor
// a = 1 / (1 + tau / dt) with tau = 1 / (2 pi fc).
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace movnect {

struct OneEuroParams {
  double min_cutoff = 1.0;  // Hz
  double beta = 0.007;      // slope gain
  double d_cutoff = 1.0;    // Hz, derivative smoothing

  void validate() const {
    if (min_cutoff <= 0 || d_cutoff <= 0 || beta < 0)
      throw std::invalid_argument("one-euro parameters: cutoffs > 0, beta >= 0");
  }
};

class OneEuroFilter {
 public:
  explicit OneEuroFilter(OneEuroParams params = {}) : p_(params) { p_.validate(); }

  bool initialized() const { return init_; }
  void reset() { init_ = false; }

  // First sample passes through unchanged.
  double step(double x, double t) {
    if (!init_) {
      x_prev_ = x;
      dx_prev_ = 0;
      t_prev_ = t;
      init_ = true;
      return x;
    }
    const double dt = t - t_prev_;
    if (dt <= 0)
      throw std::invalid_argument("one-euro filter: timestamps must strictly increase");
    const double dx = (x - x_prev_) / dt;
    const double ad = alpha(p_.d_cutoff, dt);
    const double dx_hat = ad * dx + (1 - ad) * dx_prev_;
    const double cutoff = p_.min_cutoff + p_.beta * std::abs(dx_hat);
    const double a = alpha(cutoff, dt);
    const double x_hat = a * x + (1 - a) * x_prev_;
    x_prev_ = x_hat;
    dx_prev_ = dx_hat;
    t_prev_ = t;
    return x_hat;
  }

 private:
  static double alpha(double cutoff, double dt) {
    const double tau = 1.0 / (2.0 * 3.14159265358979323846 * cutoff);
    return 1.0 / (1.0 + tau / dt);
  }

  OneEuroParams p_;
  bool init_ = false;
  double x_prev_ = 0, dx_prev_ = 0, t_prev_ = 0;
};

// Bank of independent scalar filters sharing one parameter set.
class OneEuroBank {
 public:
  OneEuroBank(size_t channels, OneEuroParams params)
      : filters_(channels, OneEuroFilter(params)) {}

  double step(size_t ch, double x, double t) { return filters_[ch].step(x, t); }
  OneEuroFilter& at(size_t ch) { return filters_[ch]; }
  size_t size() const { return filters_.size(); }

 private:
  std::vector<OneEuroFilter> filters_;
};

}  // namespace movnect
