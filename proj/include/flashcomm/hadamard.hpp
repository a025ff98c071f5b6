// Copyright 2026 The FlashComm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flashcomm/codec.hpp"
#include "flashcomm/errors.hpp"

namespace flashcomm {

// Walsh-Hadamard rotation applied independently to consecutive blocks of
// `dimension` elements. With sign_seed set, a seeded +-1 diagonal is applied
// before the transform (randomized Hadamard).
struct HadamardBlock {
  std::size_t dimension = 128;
  bool normalize = true;
  std::optional<std::uint64_t> sign_seed;

  void validate() const {
    if (dimension == 0 || (dimension & (dimension - 1)) != 0) {
      throw ConfigError("Hadamard dimension must be a power of two, got " + std::to_string(dimension));
    }
  }
};

namespace detail {

inline void fwht_inplace(std::span<float> v) {
  for (std::size_t h = 1; h < v.size(); h <<= 1) {
    for (std::size_t i = 0; i < v.size(); i += 2 * h) {
      for (std::size_t j = i; j < i + h; ++j) {
        const float a = v[j];
        const float b = v[j + h];
        v[j] = a + b;
        v[j + h] = a - b;
      }
    }
  }
}

inline std::vector<float> hadamard_signs(const HadamardBlock& block) {
  std::vector<float> signs(block.dimension, 1.0f);
  if (!block.sign_seed) return signs;
  std::mt19937_64 rng(*block.sign_seed);
  for (auto& s : signs) s = (rng() & 1u) ? -1.0f : 1.0f;
  return signs;
}

inline void check_blocks(std::span<const float> x, const HadamardBlock& block) {
  block.validate();
  if (x.size() % block.dimension != 0) {
    throw DomainError("length " + std::to_string(x.size()) + " is not a multiple of Hadamard dimension " +
                      std::to_string(block.dimension));
  }
}

}  // namespace detail

inline FloatTensor hadamard_apply(std::span<const float> x, const HadamardBlock& block) {
  detail::check_blocks(x, block);
  FloatTensor out(x.begin(), x.end());
  const auto signs = detail::hadamard_signs(block);
  const float norm = block.normalize ? 1.0f / std::sqrt(static_cast<float>(block.dimension)) : 1.0f;
  for (std::size_t b = 0; b < out.size(); b += block.dimension) {
    std::span<float> v(out.data() + b, block.dimension);
    if (block.sign_seed) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= signs[i];
    }
    detail::fwht_inplace(v);
    if (block.normalize) {
      for (auto& e : v) e *= norm;
    }
  }
  return out;
}

// Inverse of hadamard_apply. Without a sign diagonal the normalized transform
// is its own inverse; the unnormalized one needs a 1/dimension factor.
inline FloatTensor hadamard_inverse(std::span<const float> x, const HadamardBlock& block) {
  detail::check_blocks(x, block);
  FloatTensor out(x.begin(), x.end());
  const auto signs = detail::hadamard_signs(block);
  const float norm = block.normalize ? 1.0f / std::sqrt(static_cast<float>(block.dimension))
                                     : 1.0f / static_cast<float>(block.dimension);
  for (std::size_t b = 0; b < out.size(); b += block.dimension) {
    std::span<float> v(out.data() + b, block.dimension);
    detail::fwht_inplace(v);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= norm * signs[i];
  }
  return out;
}

}  // namespace flashcomm
