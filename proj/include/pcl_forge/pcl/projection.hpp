#pragma once

#include <string>

#include "pcl_forge/nn/layers.hpp"

namespace pclf::pcl {

enum class Stream { rgb, noise };

inline const char* stream_name(Stream s) { return s == Stream::rgb ? "rgb" : "noise"; }

// z = W2 * relu(BN(W1 * h)). No normalization of z; the loss uses cosine similarity.
template <typename T>
struct ProjectionHead {
  nn::Linear<T> fc1;
  nn::BatchNorm<T> bn;
  nn::Linear<T> fc2;

  struct Cache {
    Tensor<T> input;
    Tensor<T> hidden;  // post-ReLU
    typename nn::BatchNorm<T>::Cache bn;
    typename nn::Relu<T>::Cache relu;
  };

  ProjectionHead() = default;
  ProjectionHead(nn::ParamStore<T>& store, Stream stream, int in_dim, int hidden_dim, int out_dim, std::uint64_t seed) {
    const std::string base = std::string("pcl.") + stream_name(stream);
    fc1 = nn::Linear<T>(store, base + ".fc1", in_dim, hidden_dim, seed, false);
    bn = nn::BatchNorm<T>(store, base + ".bn", hidden_dim, seed);
    fc2 = nn::Linear<T>(store, base + ".fc2", hidden_dim, out_dim, seed, false);
  }

  Tensor<T> forward(const Tensor<T>& h, nn::Mode mode, Cache& cache) const {
    cache.input = h;
    Tensor<T> a = bn.forward(fc1.forward(h), mode, cache.bn);
    nn::Relu<T>::forward_inplace(a, cache.relu);
    cache.hidden = a;
    return fc2.forward(a);
  }

  Tensor<T> backward(const Tensor<T>& grad_z, const Cache& cache) const {
    Tensor<T> g = fc2.backward(cache.hidden, grad_z);
    nn::Relu<T>::backward_inplace(g, cache.relu);
    g = bn.backward(g, cache.bn);
    return fc1.backward(cache.input, g);
  }
};

}  // namespace pclf::pcl
