#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/common/tensor.hpp"

namespace pclf::nn {

// A named tensor. Non-trainable params are buffers (BN running statistics)
// that are checkpointed but never touched by the optimizer.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

enum class Init { zeros, ones, he_normal, normal };

template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  // Each parameter draws from its own stream keyed on (seed, name), so adding
  // or removing a module never shifts the initialization of the others.
  Param<T>& add(const std::string& name, std::vector<int> shape, Init init, std::uint64_t seed, double stddev = 0.0,
                bool trainable = true) {
    PCLF_REQUIRE(find(name) == nullptr, InvalidArgument, "duplicate parameter " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    p->grad = Tensor<T>(shape);
    p->trainable = trainable;
    Rng rng(hash_seed(seed, hash_name(name)));
    switch (init) {
      case Init::zeros: break;
      case Init::ones: p->value.fill(T(1)); break;
      case Init::he_normal: {
        const std::size_t fan_in = p->value.size() / static_cast<std::size_t>(shape[0]);
        stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        [[fallthrough]];
      }
      case Init::normal: {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : p->value.values()) v = static_cast<T>(dist(rng));
        break;
      }
    }
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Param<T>* find(const std::string& name) const { return const_cast<ParamStore*>(this)->find(name); }

  Param<T>& get(const std::string& name) {
    auto* p = find(name);
    PCLF_REQUIRE(p != nullptr, InvalidArgument, "unknown parameter " + name);
    return *p;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.zero();
  }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p->trainable) n += p->value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p->value.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
};

}  // namespace pclf::nn
