#pragma once

#include <cmath>
#include <map>
#include <string>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/nn/params.hpp"

namespace pclf::train {

struct LrSchedule {
  double initial = 1e-3;
  long long drop_step = 1500;
  double after_drop = 1e-4;

  double at(long long step) const { return step < drop_step ? initial : after_drop; }
};

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "' (sgd | adam)");
}

// SGD with heavy-ball momentum (v = mu * v + g; w -= lr * v) or Adam with
// bias correction. State tensors are keyed by parameter name; Adam's second
// moment uses "<name>#v" and the step count "#t".
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::sgd, double momentum = 0.9, double weight_decay = 0.0,
                     double clip_norm = 0.0)
      : kind_(kind), momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {}

  // Returns the gradient norm before clipping.
  double step(nn::ParamStore<T>& params, double lr) {
    double sq = 0;
    for (auto& p : params)
      if (p->trainable)
        for (T g : p->grad.values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    const double scale = clip_norm_ > 0 && norm > clip_norm_ ? clip_norm_ / norm : 1.0;
    double c1 = 1, c2 = 1;
    if (kind_ == OptimizerKind::adam) {
      auto& t = slot("#t", {1});
      const double n = t.values()[0] + 1;
      t.values()[0] = static_cast<T>(n);
      c1 = 1 - std::pow(kBeta1, n);
      c2 = 1 - std::pow(kBeta2, n);
    }
    for (auto& p : params) {
      if (!p->trainable) continue;
      auto w = p->value.values();
      auto g = p->grad.values();
      auto m = slot(p->name, p->value.shape()).values();
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double grad = scale * g[i] + weight_decay_ * w[i];
          m[i] = static_cast<T>(momentum_ * m[i] + grad);
          w[i] = static_cast<T>(w[i] - lr * m[i]);
        }
      } else {
        auto v = slot(p->name + "#v", p->value.shape()).values();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double grad = scale * g[i] + weight_decay_ * w[i];
          m[i] = static_cast<T>(kBeta1 * m[i] + (1 - kBeta1) * grad);
          v[i] = static_cast<T>(kBeta2 * v[i] + (1 - kBeta2) * grad * grad);
          w[i] = static_cast<T>(w[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps));
        }
      }
    }
    return norm;
  }

  Tensor<T>& velocity(const nn::Param<T>& p) { return slot(p.name, p.value.shape()); }

  std::map<std::string, Tensor<T>>& state() { return state_; }
  const std::map<std::string, Tensor<T>>& state() const { return state_; }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Tensor<T>& slot(const std::string& key, const std::vector<int>& shape) {
    auto it = state_.find(key);
    if (it == state_.end()) it = state_.emplace(key, Tensor<T>(shape)).first;
    return it->second;
  }

  OptimizerKind kind_;
  double momentum_, weight_decay_, clip_norm_;
  std::map<std::string, Tensor<T>> state_;
};

}  // namespace pclf::train
