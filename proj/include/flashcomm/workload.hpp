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
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flashcomm/codec.hpp"
#include "flashcomm/collectives.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/fp16.hpp"
#include "flashcomm/hadamard.hpp"

namespace flashcomm {

// Synthetic activations: token-major [tokens x hidden_dim] Gaussian values
// with a seeded subset of outlier channels scaled by outlier_scale. `mean`
// shifts every element; values are rounded to FP16.
struct ActivationProfile {
  std::size_t hidden_dim = 4096;
  std::size_t tokens = 16;
  float base_std = 1.0f;
  double outlier_channel_frac = 0.01;
  float outlier_scale = 30.0f;
  float mean = 0.0f;
  std::uint64_t seed = 0;

  std::size_t elements() const { return hidden_dim * tokens; }

  void validate() const {
    if (hidden_dim == 0 || tokens == 0) throw ConfigError("profile needs positive hidden_dim and tokens");
    if (!(outlier_channel_frac >= 0.0 && outlier_channel_frac <= 1.0)) {
      throw ConfigError("outlier_channel_frac must lie in [0, 1]");
    }
    if (!(outlier_scale >= 1.0f)) throw ConfigError("outlier_scale must be at least 1");
    if (!(base_std > 0.0f) || !std::isfinite(base_std)) throw ConfigError("base_std must be positive");
    if (!std::isfinite(mean)) throw ConfigError("mean must be finite");
  }
};

inline void to_json(nlohmann::json& j, const ActivationProfile& p) {
  j = {{"hidden_dim", p.hidden_dim},
       {"tokens", p.tokens},
       {"base_std", p.base_std},
       {"outlier_channel_frac", p.outlier_channel_frac},
       {"outlier_scale", p.outlier_scale},
       {"mean", p.mean},
       {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, ActivationProfile& p) {
  if (!j.is_object()) throw ConfigError("profile must be a JSON object");
  p = ActivationProfile{};
  try {
    p.hidden_dim = j.value("hidden_dim", p.hidden_dim);
    p.tokens = j.value("tokens", p.tokens);
    p.base_std = j.value("base_std", p.base_std);
    p.outlier_channel_frac = j.value("outlier_channel_frac", p.outlier_channel_frac);
    p.outlier_scale = j.value("outlier_scale", p.outlier_scale);
    p.mean = j.value("mean", p.mean);
    p.seed = j.value("seed", p.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad activation profile: ") + e.what());
  }
  p.validate();
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Sorted outlier channel indices; depends only on seed, hidden_dim and frac.
inline std::vector<std::size_t> outlier_channels(const ActivationProfile& p) {
  p.validate();
  const auto count = static_cast<std::size_t>(std::llround(p.outlier_channel_frac * static_cast<double>(p.hidden_dim)));
  std::vector<std::size_t> idx(p.hidden_dim);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(detail::splitmix64(p.seed));
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, p.hidden_dim - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// `stream` selects an independent value stream sharing the same outlier
// channels, e.g. one per tensor-parallel rank.
inline FloatTensor gen_activations(const ActivationProfile& p, std::uint64_t stream = 0) {
  p.validate();
  std::vector<float> channel_scale(p.hidden_dim, 1.0f);
  for (std::size_t c : outlier_channels(p)) channel_scale[c] = p.outlier_scale;
  std::mt19937_64 rng(detail::splitmix64(p.seed ^ detail::splitmix64(stream + 1)));
  std::normal_distribution<float> normal(0.0f, p.base_std);
  FloatTensor x(p.elements());
  for (std::size_t t = 0; t < p.tokens; ++t) {
    for (std::size_t c = 0; c < p.hidden_dim; ++c) {
      x[t * p.hidden_dim + c] = round_to_half(p.mean + normal(rng) * channel_scale[c]);
    }
  }
  return x;
}

inline FloatTensor quantize_roundtrip(std::span<const float> x, const CodecConfig& codec) {
  return dequantize(quantize(x, codec));
}

struct GroupSweepRow {
  std::size_t group_size;
  double mse;
};

// Round-trip MSE per group size, largest group first. `codec` supplies bits,
// format and symmetry; its group_size is overridden.
inline std::vector<GroupSweepRow> sweep_group_sizes(const ActivationProfile& p, const CodecConfig& codec,
                                                    std::span<const std::size_t> group_sizes) {
  const FloatTensor x = gen_activations(p);
  std::vector<GroupSweepRow> rows;
  for (std::size_t g : group_sizes) {
    if (g == 0 || p.hidden_dim % g != 0) {
      throw ConfigError("group size " + std::to_string(g) + " does not divide hidden_dim " + std::to_string(p.hidden_dim));
    }
    CodecConfig c = codec;
    c.group_size = g;
    rows.push_back({g, mse(quantize_roundtrip(x, c), x)});
  }
  std::sort(rows.begin(), rows.end(), [](const GroupSweepRow& a, const GroupSweepRow& b) { return a.group_size > b.group_size; });
  return rows;
}

struct FormatRow {
  std::string codec;
  double mse;
};

// Default INT vs FP comparison set at one group size.
inline std::vector<CodecConfig> format_comparison_set(std::size_t group = 128) {
  return {CodecConfig::int_sym(8, group),
          CodecConfig::int_asym(8, group),
          CodecConfig::minifloat(NumberFormat::kE4M3, group),
          CodecConfig::minifloat(NumberFormat::kE5M2, group),
          CodecConfig::int_sym(4, group),
          CodecConfig::int_asym(4, group),
          CodecConfig::minifloat(NumberFormat::kE2M1, group)};
}

inline std::vector<FormatRow> format_comparison(const ActivationProfile& p, std::span<const CodecConfig> codecs) {
  const FloatTensor x = gen_activations(p);
  std::vector<FormatRow> rows;
  for (const auto& c : codecs) rows.push_back({c.label(), mse(quantize_roundtrip(x, c), x)});
  return rows;
}

struct RsAgResult {
  double mse_stage1_only;
  double mse_both_stages;
};

// Flash All-Reduce over `world` ranks of seeded activations, once with only
// the reduce-side quantization and once with both stages quantized. MSEs are
// against the exact all-reduce.
inline RsAgResult rs_vs_ag_experiment(const ActivationProfile& p, int world, const CodecConfig& codec) {
  if (world < 2) throw ConfigError("RS vs AG experiment needs at least two ranks");
  std::vector<FloatTensor> inputs;
  for (int r = 0; r < world; ++r) inputs.push_back(gen_activations(p, static_cast<std::uint64_t>(r)));
  const FloatTensor exact = all_reduce_exact(inputs)[0];
  const FlashConfig stage1_only{codec, CodecConfig::fp16(), 0, std::nullopt};
  const FlashConfig both = FlashConfig::uniform(codec);
  const FloatTensor a = flash_all_reduce(inputs, stage1_only).outputs[0];
  const FloatTensor b = flash_all_reduce(inputs, both).outputs[0];
  return {mse(a, exact), mse(b, exact)};
}

struct RotationRow {
  std::size_t group_size;
  double mse_plain;
  double mse_rotated;
};

// Round-trip MSE with and without a Hadamard rotation over each token's full
// hidden vector before grouping.
inline std::vector<RotationRow> rotation_experiment(const ActivationProfile& p, const CodecConfig& codec,
                                                    std::span<const std::size_t> group_sizes) {
  const HadamardBlock block{p.hidden_dim, true, std::nullopt};
  block.validate();
  const FloatTensor x = gen_activations(p);
  const FloatTensor rotated = hadamard_apply(x, block);
  std::vector<RotationRow> rows;
  for (std::size_t g : group_sizes) {
    if (g == 0 || p.hidden_dim % g != 0) {
      throw ConfigError("group size " + std::to_string(g) + " does not divide hidden_dim " + std::to_string(p.hidden_dim));
    }
    CodecConfig c = codec;
    c.group_size = g;
    const double plain = mse(quantize_roundtrip(x, c), x);
    const double rot = mse(hadamard_inverse(quantize_roundtrip(rotated, c), block), x);
    rows.push_back({g, plain, rot});
  }
  return rows;
}

}  // namespace flashcomm
