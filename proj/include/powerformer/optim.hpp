#pragma once

#include "powerformer/autodiff.hpp"

#include <cmath>
#include <vector>

namespace powerformer::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // global-norm clipping, 0 = off
};

// Adam with bias correction. Moments live here, keyed by parameter position in the store.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }

  // Applies one update in store order and clears the gradients.
  void step(ParameterStore<Scalar>& store) {
    if (first_.size() != store.size()) {
      first_.clear();
      second_.clear();
      for (const auto& p : store) {
        first_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
        second_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    Scalar clip = Scalar(1);
    if (options_.max_grad_norm > 0.0) {
      Scalar sq = 0;
      for (const auto& p : store) sq += p.grad.squaredNorm();
      const Scalar norm = std::sqrt(sq);
      if (norm > options_.max_grad_norm) clip = Scalar(options_.max_grad_norm) / norm;
    }

    ++store.step;
    const auto t = static_cast<Scalar>(store.step);
    const Scalar c1 = Scalar(1) - std::pow(Scalar(options_.beta1), t);
    const Scalar c2 = Scalar(1) - std::pow(Scalar(options_.beta2), t);
    std::size_t i = 0;
    for (auto& p : store) {
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        throw Error(ErrorCode::MissingGrad, "parameter " + p.name + " has no gradient of matching shape");
      }
      auto& m = first_[i];
      auto& v = second_[i];
      const Matrix<Scalar> g = p.grad * clip;
      m = options_.beta1 * m + (1.0 - options_.beta1) * g;
      v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseAbs2();
      p.value.array() -= Scalar(options_.lr) * (m.array() / c1) / ((v.array() / c2).sqrt() + Scalar(options_.eps));
      p.grad.setZero();
      ++i;
    }
  }

 private:
  AdamOptions options_;
  std::vector<Matrix<Scalar>> first_;
  std::vector<Matrix<Scalar>> second_;
};

}  // namespace powerformer::ad
