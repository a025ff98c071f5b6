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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flashcomm/bitpack.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/fp16.hpp"
#include "flashcomm/minifloat.hpp"

namespace flashcomm {

using FloatTensor = std::vector<float>;

// kInt is group-wise affine (asymmetric) or scale-only (symmetric) integer
// quantization; the minifloat formats are absmax-scaled per group; kFp16
// sends raw FP16 values with no metadata.
enum class NumberFormat { kInt, kE4M3, kE5M2, kE2M1, kFp16 };

enum class Rounding { kNearestEven, kCeil };

struct CodecConfig {
  NumberFormat format = NumberFormat::kInt;
  int bits = 8;  // only meaningful for kInt
  std::size_t group_size = 128;
  bool symmetric = false;  // only meaningful for kInt
  Rounding rounding = Rounding::kNearestEven;
  float scale_floor = 1e-8f;

  static CodecConfig int_asym(int bits, std::size_t group = 128) {
    return {NumberFormat::kInt, bits, group, false, Rounding::kNearestEven, 1e-8f};
  }
  static CodecConfig int_sym(int bits, std::size_t group = 128) {
    return {NumberFormat::kInt, bits, group, true, Rounding::kNearestEven, 1e-8f};
  }
  static CodecConfig minifloat(NumberFormat f, std::size_t group = 128) {
    return {f, 8, group, true, Rounding::kNearestEven, 1e-8f};
  }
  static CodecConfig fp16() { return {NumberFormat::kFp16, 16, 128, false, Rounding::kNearestEven, 1e-8f}; }

  bool is_passthrough() const { return format == NumberFormat::kFp16; }
  bool has_scales() const { return format != NumberFormat::kFp16; }
  bool has_zeros() const { return format == NumberFormat::kInt && !symmetric; }

  // Width of one packed code on the wire.
  int code_bits() const {
    switch (format) {
      case NumberFormat::kInt: return bits;
      case NumberFormat::kE4M3:
      case NumberFormat::kE5M2: return 8;
      case NumberFormat::kE2M1: return 4;
      case NumberFormat::kFp16: return 16;
    }
    return 0;
  }

  std::size_t group_count(std::size_t elements) const {
    if (!has_scales()) return 0;
    return (elements + group_size - 1) / group_size;
  }

  std::string label() const {
    switch (format) {
      case NumberFormat::kInt:
        return "int" + std::to_string(bits) + (symmetric ? "_sym" : "_asym") +
               (rounding == Rounding::kCeil ? "_ceil" : "");
      case NumberFormat::kE4M3: return "fp8_e4m3";
      case NumberFormat::kE5M2: return "fp8_e5m2";
      case NumberFormat::kE2M1: return "fp4_e2m1";
      case NumberFormat::kFp16: return "fp16";
    }
    return "unknown";
  }

  void validate() const {
    if (format == NumberFormat::kInt && (bits < 2 || bits > 8)) {
      throw ConfigError("integer codes must be 2..8 bits, got " + std::to_string(bits));
    }
    if (group_size < 1) throw ConfigError("group_size must be at least 1");
    if (!(scale_floor > 0.0f) || !std::isfinite(scale_floor) || scale_floor > 65504.0f) {
      throw ConfigError("scale_floor must be positive and FP16-representable in range");
    }
  }

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

inline std::optional<MiniFloat> as_minifloat(NumberFormat f) {
  switch (f) {
    case NumberFormat::kE4M3: return MiniFloat::kE4M3;
    case NumberFormat::kE5M2: return MiniFloat::kE5M2;
    case NumberFormat::kE2M1: return MiniFloat::kE2M1;
    default: return std::nullopt;
  }
}

// Wire representation of a quantized tensor. Groups are consecutive runs of
// group_size elements; the last group may be shorter.
struct QuantizedTensor {
  PackedBuffer codes;
  std::vector<float> scales;
  std::vector<std::uint32_t> zeros;  // empty unless asymmetric INT
  std::size_t element_count = 0;
  CodecConfig config;
};

struct AsymParams {
  float scale;
  std::uint32_t zero;
};

namespace detail {

inline void check_finite(std::span<const float> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DomainError("non-finite value at index " + std::to_string(i));
  }
}

// Group range widened to include 0 so the zero point is always a legal code.
inline std::pair<float, float> range_with_zero(std::span<const float> g) {
  const auto [mn, mx] = std::minmax_element(g.begin(), g.end());
  return {std::min(*mn, 0.0f), std::max(*mx, 0.0f)};
}

inline float absmax(std::span<const float> g) {
  float m = 0.0f;
  for (float v : g) m = std::max(m, std::fabs(v));
  return m;
}

inline std::uint32_t zero_point(float lo, float scale, int bits) {
  const double qmax = static_cast<double>((1u << bits) - 1u);
  const double z = std::ceil(-static_cast<double>(lo) / static_cast<double>(scale));
  return static_cast<std::uint32_t>(std::clamp(z, 0.0, qmax));
}

inline double round_code(double v, Rounding r) {
  return r == Rounding::kCeil ? std::ceil(v) : std::nearbyint(v);
}

// Scales travel as FP16: round to nearest-even, never below the floor.
inline float wire_scale(float raw, float floor) {
  const float s = std::max(raw, floor);
  std::uint16_t h = float_to_half_bits(s);
  if ((h & 0x7C00u) == 0x7C00u) throw DomainError("group scale overflows the FP16 wire range");
  if (half_bits_to_float(h) < floor) ++h;
  return half_bits_to_float(h);
}

inline std::uint32_t sign_extend_mask(std::int64_t code, int bits) {
  return static_cast<std::uint32_t>(code) & ((1u << bits) - 1u);
}

inline std::int64_t sign_extend(std::uint32_t code, int bits) {
  const std::uint32_t half = 1u << (bits - 1);
  return code >= half ? static_cast<std::int64_t>(code) - (std::int64_t{1} << bits)
                      : static_cast<std::int64_t>(code);
}

}  // namespace detail

// Asymmetric parameters of one group: scale = range / (2^bits - 1) floored at
// scale_floor, zero = ceil(-min / scale). The range always includes 0.
inline AsymParams group_params_asym(std::span<const float> group, int bits, float scale_floor = 1e-8f) {
  if (group.empty()) throw DomainError("empty quantization group");
  if (bits < 2 || bits > 8) throw ConfigError("integer codes must be 2..8 bits");
  detail::check_finite(group);
  const auto [lo, hi] = detail::range_with_zero(group);
  const float qmax = static_cast<float>((1u << bits) - 1u);
  const float scale = std::max((hi - lo) / qmax, scale_floor);
  return {scale, detail::zero_point(lo, scale, bits)};
}

inline float group_params_sym(std::span<const float> group, int bits, float scale_floor = 1e-8f) {
  if (group.empty()) throw DomainError("empty quantization group");
  if (bits < 2 || bits > 8) throw ConfigError("integer codes must be 2..8 bits");
  detail::check_finite(group);
  const float qmax = static_cast<float>((1u << (bits - 1)) - 1u);
  return std::max(detail::absmax(group) / qmax, scale_floor);
}

inline QuantizedTensor quantize(std::span<const float> x, const CodecConfig& cfg) {
  cfg.validate();
  if (x.empty()) throw DomainError("cannot quantize an empty tensor");
  detail::check_finite(x);

  QuantizedTensor q;
  q.config = cfg;
  q.element_count = x.size();
  std::vector<std::uint32_t> codes(x.size());

  if (cfg.format == NumberFormat::kFp16) {
    for (std::size_t i = 0; i < x.size(); ++i) codes[i] = float_to_half_bits(x[i]);
    q.codes = pack(codes, 16);
    return q;
  }

  const std::size_t groups = cfg.group_count(x.size());
  q.scales.reserve(groups);
  if (cfg.has_zeros()) q.zeros.reserve(groups);
  const auto mini = as_minifloat(cfg.format);

  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t begin = gi * cfg.group_size;
    const std::size_t end = std::min(begin + cfg.group_size, x.size());
    const auto g = x.subspan(begin, end - begin);

    if (mini) {
      const float s = detail::wire_scale(detail::absmax(g) / minifloat_traits(*mini).max_finite, cfg.scale_floor);
      q.scales.push_back(s);
      for (std::size_t i = begin; i < end; ++i) {
        codes[i] = minifloat_encode(static_cast<double>(x[i]) / s, *mini);
      }
    } else if (cfg.symmetric) {
      const double qmax = static_cast<double>((1u << (cfg.bits - 1)) - 1u);
      const double qmin = -qmax - 1.0;
      const float s = detail::wire_scale(detail::absmax(g) / static_cast<float>(qmax), cfg.scale_floor);
      q.scales.push_back(s);
      for (std::size_t i = begin; i < end; ++i) {
        const double c = std::clamp(detail::round_code(static_cast<double>(x[i]) / s, cfg.rounding), qmin, qmax);
        codes[i] = detail::sign_extend_mask(static_cast<std::int64_t>(c), cfg.bits);
      }
    } else {
      const double qmax = static_cast<double>((1u << cfg.bits) - 1u);
      const auto [lo, hi] = detail::range_with_zero(g);
      const float s = detail::wire_scale((hi - lo) / static_cast<float>(qmax), cfg.scale_floor);
      const std::uint32_t z = detail::zero_point(lo, s, cfg.bits);
      q.scales.push_back(s);
      q.zeros.push_back(z);
      for (std::size_t i = begin; i < end; ++i) {
        const double c = detail::round_code(static_cast<double>(x[i]) / s, cfg.rounding) + z;
        codes[i] = static_cast<std::uint32_t>(std::clamp(c, 0.0, qmax));
      }
    }
  }
  q.codes = pack(codes, cfg.code_bits());
  return q;
}

inline QuantizedTensor quantize_fp(std::span<const float> x, NumberFormat format, std::size_t group_size,
                                   float scale_floor = 1e-8f) {
  if (!as_minifloat(format)) throw ConfigError("quantize_fp needs an E4M3, E5M2 or E2M1 format");
  CodecConfig cfg = CodecConfig::minifloat(format, group_size);
  cfg.scale_floor = scale_floor;
  return quantize(x, cfg);
}

inline void check_well_formed(const QuantizedTensor& q) {
  const CodecConfig& cfg = q.config;
  cfg.validate();
  if (q.codes.bits_per_code != cfg.code_bits()) {
    throw IntegrityError("code width " + std::to_string(q.codes.bits_per_code) + " does not match " + cfg.label());
  }
  if (q.codes.code_count != q.element_count) throw IntegrityError("code count does not match element count");
  if (q.codes.bytes.size() != packed_size(q.element_count, cfg.code_bits())) {
    throw IntegrityError("packed code bytes do not match element count");
  }
  const std::size_t groups = cfg.group_count(q.element_count);
  if (q.scales.size() != groups) throw IntegrityError("scale count does not match group count");
  if (q.zeros.size() != (cfg.has_zeros() ? groups : 0)) throw IntegrityError("zero count does not match group count");
  for (float s : q.scales) {
    if (!std::isfinite(s) || s < cfg.scale_floor) throw IntegrityError("scale below floor or non-finite");
  }
  const std::uint32_t qmax = cfg.format == NumberFormat::kInt ? (1u << cfg.bits) - 1u : 0u;
  for (std::uint32_t z : q.zeros) {
    if (z > qmax) throw IntegrityError("zero point " + std::to_string(z) + " outside code range");
  }
}

inline FloatTensor dequantize(const QuantizedTensor& q) {
  check_well_formed(q);
  const CodecConfig& cfg = q.config;
  const std::vector<std::uint32_t> codes = unpack(q.codes);
  FloatTensor out(q.element_count);

  if (cfg.format == NumberFormat::kFp16) {
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = half_bits_to_float(static_cast<std::uint16_t>(codes[i]));
    return out;
  }

  const auto mini = as_minifloat(cfg.format);
  const std::size_t groups = cfg.group_count(q.element_count);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t begin = gi * cfg.group_size;
    const std::size_t end = std::min(begin + cfg.group_size, q.element_count);
    const double s = q.scales[gi];
    if (mini) {
      for (std::size_t i = begin; i < end; ++i) {
        if (minifloat_is_special(codes[i], *mini)) {
          throw IntegrityError("non-finite " + cfg.label() + " code at index " + std::to_string(i));
        }
        out[i] = static_cast<float>(minifloat_decode(codes[i], *mini) * s);
      }
    } else if (cfg.symmetric) {
      for (std::size_t i = begin; i < end; ++i) {
        out[i] = static_cast<float>(static_cast<double>(detail::sign_extend(codes[i], cfg.bits)) * s);
      }
    } else {
      const double z = q.zeros[gi];
      for (std::size_t i = begin; i < end; ++i) out[i] = static_cast<float>((codes[i] - z) * s);
    }
  }
  return out;
}

// Bytes one quantized segment of `elements` values occupies on the wire:
// packed codes, then one FP16 scale per group, then one zero byte per group
// for asymmetric INT.
inline std::size_t wire_size(std::size_t elements, const CodecConfig& cfg) {
  const std::size_t per_group = cfg.has_scales() ? 2u + (cfg.has_zeros() ? 1u : 0u) : 0u;
  return packed_size(elements, cfg.code_bits()) + cfg.group_count(elements) * per_group;
}

inline std::vector<std::uint8_t> to_wire(const QuantizedTensor& q) {
  check_well_formed(q);
  std::vector<std::uint8_t> out;
  out.reserve(wire_size(q.element_count, q.config));
  out.insert(out.end(), q.codes.bytes.begin(), q.codes.bytes.end());
  for (float s : q.scales) {
    const std::uint16_t h = float_to_half_bits(s);
    out.push_back(static_cast<std::uint8_t>(h & 0xFFu));
    out.push_back(static_cast<std::uint8_t>(h >> 8));
  }
  for (std::uint32_t z : q.zeros) out.push_back(static_cast<std::uint8_t>(z));
  return out;
}

inline QuantizedTensor from_wire(std::span<const std::uint8_t> bytes, std::size_t elements, const CodecConfig& cfg) {
  cfg.validate();
  const std::size_t expected = wire_size(elements, cfg);
  if (bytes.size() != expected) {
    throw IntegrityError("wire payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected) + " for " + std::to_string(elements) + " elements of " +
                         cfg.label());
  }
  QuantizedTensor q;
  q.config = cfg;
  q.element_count = elements;
  const std::size_t code_bytes = packed_size(elements, cfg.code_bits());
  q.codes.bits_per_code = cfg.code_bits();
  q.codes.code_count = elements;
  q.codes.bytes.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(code_bytes));
  const std::size_t groups = cfg.group_count(elements);
  std::size_t pos = code_bytes;
  q.scales.resize(groups);
  for (std::size_t g = 0; g < groups; ++g, pos += 2) {
    q.scales[g] = half_bits_to_float(static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8)));
  }
  if (cfg.has_zeros()) {
    q.zeros.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) q.zeros[g] = bytes[pos++];
  }
  check_well_formed(q);
  return q;
}

inline double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DomainError("mse of tensors with " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                      " elements");
  }
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double max_abs_error(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DomainError("max_abs_error of tensors with different lengths");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

// JSON config block: {"bits": 4} or {"format": "e4m3"}, plus group_size,
// symmetric, rounding ("nearest-even" | "ceil") and scale_floor. bits = 16
// selects FP16 passthrough.
inline void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = nlohmann::json::object();
  switch (c.format) {
    case NumberFormat::kInt: j["bits"] = c.bits; break;
    case NumberFormat::kE4M3: j["format"] = "e4m3"; break;
    case NumberFormat::kE5M2: j["format"] = "e5m2"; break;
    case NumberFormat::kE2M1: j["format"] = "e2m1"; break;
    case NumberFormat::kFp16: j["format"] = "fp16"; break;
  }
  j["group_size"] = c.group_size;
  j["symmetric"] = c.symmetric;
  j["rounding"] = c.rounding == Rounding::kCeil ? "ceil" : "nearest-even";
  j["scale_floor"] = c.scale_floor;
}

inline void from_json(const nlohmann::json& j, CodecConfig& c) {
  if (!j.is_object()) throw ConfigError("codec config must be a JSON object");
  c = CodecConfig{};
  const bool has_bits = j.contains("bits");
  const bool has_format = j.contains("format");
  if (has_bits == has_format) throw ConfigError("codec config needs exactly one of 'bits' or 'format'");
  try {
    if (has_bits) {
      const int bits = j.at("bits").get<int>();
      if (bits == 16) {
        c.format = NumberFormat::kFp16;
        c.bits = 16;
      } else {
        c.bits = bits;
      }
    } else {
      const std::string f = j.at("format").get<std::string>();
      if (f == "e4m3") c.format = NumberFormat::kE4M3;
      else if (f == "e5m2") c.format = NumberFormat::kE5M2;
      else if (f == "e2m1") c.format = NumberFormat::kE2M1;
      else if (f == "fp16") c.format = NumberFormat::kFp16, c.bits = 16;
      else throw ConfigError("unknown number format '" + f + "'");
      c.symmetric = c.format != NumberFormat::kFp16;
    }
    if (j.contains("group_size")) {
      const auto g = j.at("group_size").get<std::int64_t>();
      if (g < 1) throw ConfigError("group_size must be at least 1");
      c.group_size = static_cast<std::size_t>(g);
    }
    if (j.contains("symmetric")) c.symmetric = j.at("symmetric").get<bool>();
    if (j.contains("rounding")) {
      const std::string r = j.at("rounding").get<std::string>();
      if (r == "nearest-even") c.rounding = Rounding::kNearestEven;
      else if (r == "ceil") c.rounding = Rounding::kCeil;
      else throw ConfigError("unknown rounding mode '" + r + "'");
    }
    if (j.contains("scale_floor")) c.scale_floor = j.at("scale_floor").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad codec config: ") + e.what());
  }
  c.validate();
}

}  // namespace flashcomm
