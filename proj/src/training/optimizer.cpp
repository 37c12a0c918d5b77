#include <cmath>
#include <limits>

#include "retseg/training.hpp"

namespace retseg::training {

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(const std::vector<model::Parameter*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  ++step_count_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    const auto& grad = params[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

ReduceOnPlateau::ReduceOnPlateau(double lr, double factor, int patience)
    : lr_(lr), factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {}

double ReduceOnPlateau::observe(double loss) {
  if (loss < best_ - 1e-4 * std::abs(best_) || std::isinf(best_)) {
    best_ = loss;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ *= factor_;
    wait_ = 0;
  }
  return lr_;
}

}  // namespace retseg::training
