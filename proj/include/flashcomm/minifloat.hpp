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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace flashcomm {

// Low-bit floating formats used for group-scaled FP quantization.
//   E4M3: OCP "FN" variant, bias 7, no infinities, S.1111.111 is NaN, max 448.
//   E5M2: IEEE-like, bias 15, max finite 57344.
//   E2M1: 4-bit, bias 1, values {0, 0.5, 1, 1.5, 2, 3, 4, 6}.
enum class MiniFloat { kE4M3, kE5M2, kE2M1 };

struct MiniFloatTraits {
  int exponent_bits;
  int mantissa_bits;
  int bias;
  int code_bits;
  float max_finite;
};

constexpr MiniFloatTraits minifloat_traits(MiniFloat f) {
  switch (f) {
    case MiniFloat::kE4M3: return {4, 3, 7, 8, 448.0f};
    case MiniFloat::kE5M2: return {5, 2, 15, 8, 57344.0f};
    case MiniFloat::kE2M1: return {2, 1, 1, 4, 6.0f};
  }
  return {0, 0, 0, 0, 0.0f};
}

// True for bit patterns that do not encode a finite number.
constexpr bool minifloat_is_special(std::uint32_t code, MiniFloat f) {
  switch (f) {
    case MiniFloat::kE4M3: return (code & 0x7Fu) == 0x7Fu;
    case MiniFloat::kE5M2: return (code & 0x7Cu) == 0x7Cu;
    case MiniFloat::kE2M1: return false;
  }
  return true;
}

inline float minifloat_decode(std::uint32_t code, MiniFloat f) {
  const MiniFloatTraits t = minifloat_traits(f);
  const std::uint32_t sign_bit = 1u << (t.code_bits - 1);
  const std::uint32_t man_mask = (1u << t.mantissa_bits) - 1u;
  const std::uint32_t exp_mask = (1u << t.exponent_bits) - 1u;
  const bool negative = (code & sign_bit) != 0;
  const std::uint32_t e = (code >> t.mantissa_bits) & exp_mask;
  const std::uint32_t m = code & man_mask;
  if (minifloat_is_special(code, f)) {
    if (f == MiniFloat::kE5M2 && m == 0) {
      return negative ? -std::numeric_limits<float>::infinity()
                      : std::numeric_limits<float>::infinity();
    }
    return std::numeric_limits<float>::quiet_NaN();
  }
  const float frac = static_cast<float>(m) / static_cast<float>(1u << t.mantissa_bits);
  const float mag = e == 0 ? std::ldexp(frac, 1 - t.bias)
                           : std::ldexp(1.0f + frac, static_cast<int>(e) - t.bias);
  return negative ? -mag : mag;
}

namespace detail {

struct MiniFloatEntry {
  float value;
  std::uint32_t code;
};

// Non-negative finite values of a format in ascending order.
inline const std::vector<MiniFloatEntry>& minifloat_table(MiniFloat f) {
  static const auto build = [](MiniFloat fmt) {
    const MiniFloatTraits t = minifloat_traits(fmt);
    std::vector<MiniFloatEntry> out;
    for (std::uint32_t c = 0; c < (1u << (t.code_bits - 1)); ++c) {
      if (minifloat_is_special(c, fmt)) continue;
      out.push_back({minifloat_decode(c, fmt), c});
    }
    std::sort(out.begin(), out.end(),
              [](const MiniFloatEntry& a, const MiniFloatEntry& b) { return a.value < b.value; });
    return out;
  };
  static const std::vector<MiniFloatEntry> e4m3 = build(MiniFloat::kE4M3);
  static const std::vector<MiniFloatEntry> e5m2 = build(MiniFloat::kE5M2);
  static const std::vector<MiniFloatEntry> e2m1 = build(MiniFloat::kE2M1);
  switch (f) {
    case MiniFloat::kE4M3: return e4m3;
    case MiniFloat::kE5M2: return e5m2;
    case MiniFloat::kE2M1: break;
  }
  return e2m1;
}

}  // namespace detail

// Nearest representable value, ties to the even mantissa, saturating at the
// largest finite magnitude. Input must be finite.
inline std::uint32_t minifloat_encode(double v, MiniFloat f) {
  const MiniFloatTraits t = minifloat_traits(f);
  const std::uint32_t sign = std::signbit(v) ? (1u << (t.code_bits - 1)) : 0u;
  const auto& table = detail::minifloat_table(f);
  const double a = std::fabs(v);
  if (a >= table.back().value) return sign | table.back().code;
  auto hi = std::upper_bound(table.begin(), table.end(), a,
                             [](double x, const detail::MiniFloatEntry& e) { return x < e.value; });
  auto lo = hi - 1;
  const double below = a - lo->value;
  const double above = hi->value - a;
  std::uint32_t code;
  if (below < above) {
    code = lo->code;
  } else if (above < below) {
    code = hi->code;
  } else {
    code = (lo->code & 1u) == 0 ? lo->code : hi->code;
  }
  return sign | code;
}

inline float minifloat_round(float v, MiniFloat f) {
  return minifloat_decode(minifloat_encode(v, f), f);
}

}  // namespace flashcomm
