#pragma once

#include <string>
#include <vector>

#include "pcl_forge/nn/layers.hpp"

namespace pclf::detect {

// Four conv-BN-ReLU blocks, 3x3 kernels, stride 2 in the first three: an
// H x W input becomes a ceil(H/8) x ceil(W/8) map.
template <typename T>
struct Backbone {
  std::vector<nn::Conv2d<T>> convs;
  std::vector<nn::BatchNorm<T>> norms;

  struct Cache {
    std::vector<typename nn::Conv2d<T>::Cache> conv;
    std::vector<typename nn::BatchNorm<T>::Cache> bn;
    std::vector<typename nn::Relu<T>::Cache> relu;
  };

  static constexpr int kStrides[4] = {2, 2, 2, 1};

  Backbone() = default;
  Backbone(nn::ParamStore<T>& store, const std::string& prefix, int in_channels, const std::vector<int>& channels,
           std::uint64_t seed) {
    PCLF_REQUIRE(channels.size() == 4, InvalidArgument, "backbone: expected 4 block widths");
    int in = in_channels;
    for (std::size_t b = 0; b < channels.size(); ++b) {
      const std::string name = prefix + ".block" + std::to_string(b + 1);
      convs.emplace_back(store, name + ".conv", in, channels[b], 3, kStrides[b], 1, seed, false);
      norms.emplace_back(store, name + ".bn", channels[b], seed);
      in = channels[b];
    }
  }

  int out_channels() const { return convs.back().out_channels; }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode, Cache& cache) const {
    PCLF_REQUIRE(x.rank() == 4 && x.dim(1) == convs.front().in_channels, InvalidArgument,
                 "backbone: expected [N," + std::to_string(convs.front().in_channels) + ",H,W], got " + x.shape_string());
    cache.conv.resize(convs.size());
    cache.bn.resize(convs.size());
    cache.relu.resize(convs.size());
    Tensor<T> h = x;
    for (std::size_t b = 0; b < convs.size(); ++b) {
      h = norms[b].forward(convs[b].forward(h, cache.conv[b]), mode, cache.bn[b]);
      nn::Relu<T>::forward_inplace(h, cache.relu[b]);
    }
    return h;
  }

  Tensor<T> backward(Tensor<T> g, const Cache& cache, bool need_input_grad) const {
    for (std::size_t b = convs.size(); b-- > 0;) {
      nn::Relu<T>::backward_inplace(g, cache.relu[b]);
      g = norms[b].backward(g, cache.bn[b]);
      g = convs[b].backward(g, cache.conv[b], b > 0 || need_input_grad);
    }
    return g;
  }
};

}  // namespace pclf::detect
