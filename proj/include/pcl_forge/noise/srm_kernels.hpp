#pragma once

#include <array>

namespace pclf::noise {

// Fixed SRM residual kernels used by the noise stream of the RGB-N two-stream
// detector (Zhou et al., "Learning Rich Features for Image Manipulation
// Detection", CVPR 2018), taken from the spatial rich model of Fridrich &
// Kodovsky (2012). Integer numerators, each kernel divided by its divisor.
// Each kernel is applied to all three colour channels and the responses summed.
inline constexpr int kSrmKernelCount = 3;
inline constexpr int kSrmKernelSize = 5;

using SrmNumerators = std::array<std::array<int, kSrmKernelSize>, kSrmKernelSize>;

inline constexpr std::array<SrmNumerators, kSrmKernelCount> kSrmNumerators{{
    // KV / "SQUARE 5x5", divisor 12
    {{{-1, 2, -2, 2, -1}, {2, -6, 8, -6, 2}, {-2, 8, -12, 8, -2}, {2, -6, 8, -6, 2}, {-1, 2, -2, 2, -1}}},
    // second-order "SQUARE 3x3", divisor 4
    {{{0, 0, 0, 0, 0}, {0, -1, 2, -1, 0}, {0, 2, -4, 2, 0}, {0, -1, 2, -1, 0}, {0, 0, 0, 0, 0}}},
    // horizontal second-order line, divisor 2
    {{{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 1, -2, 1, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}}},
}};

inline constexpr std::array<int, kSrmKernelCount> kSrmDivisors{12, 4, 2};

inline constexpr double srm_coefficient(int k, int i, int j) {
  return static_cast<double>(kSrmNumerators[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]
                                          [static_cast<std::size_t>(j)]) /
         kSrmDivisors[static_cast<std::size_t>(k)];
}

}  // namespace pclf::noise
