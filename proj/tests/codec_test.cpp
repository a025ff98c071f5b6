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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "flashcomm/codec.hpp"
#include "flashcomm/fp16.hpp"
#include "flashcomm/workload.hpp"

namespace flashcomm {
namespace {

QuantizedTensor make_tensor(std::vector<std::uint32_t> codes, std::vector<float> scales, std::vector<std::uint32_t> zeros,
                            const CodecConfig& cfg) {
  QuantizedTensor q;
  q.element_count = codes.size();
  q.codes = pack(codes, cfg.code_bits());
  q.scales = std::move(scales);
  q.zeros = std::move(zeros);
  q.config = cfg;
  return q;
}

TEST(GroupParamsTest, HandEvaluatedExamples) {
  const std::vector<float> a = {0.0f, 3.0f, 6.0f, 15.0f};
  const auto pa = group_params_asym(a, 4);
  EXPECT_EQ(pa.scale, 1.0f);
  EXPECT_EQ(pa.zero, 0u);

  const std::vector<float> b = {0.0f, 0.0f, 0.0f};
  const auto pb = group_params_asym(b, 8, 1e-8f);
  EXPECT_EQ(pb.scale, 1e-8f);
  EXPECT_EQ(pb.zero, 0u);

  const std::vector<float> c = {-2.0f, 2.0f};
  const auto pc = group_params_asym(c, 4);
  EXPECT_FLOAT_EQ(pc.scale, 4.0f / 15.0f);
  EXPECT_EQ(pc.zero, 8u);

  const std::vector<float> d = {-1.0f, 0.5f};
  EXPECT_FLOAT_EQ(group_params_sym(d, 4), 1.0f / 7.0f);
}

TEST(GroupParamsTest, Errors) {
  EXPECT_THROW(group_params_asym(std::vector<float>{}, 4), DomainError);
  EXPECT_THROW(group_params_asym(std::vector<float>{1.0f, NAN}, 4), DomainError);
  EXPECT_THROW(group_params_asym(std::vector<float>{1.0f, INFINITY}, 4), DomainError);
  EXPECT_THROW(group_params_asym(std::vector<float>{1.0f}, 9), ConfigError);
  EXPECT_THROW(group_params_asym(std::vector<float>{1.0f}, 1), ConfigError);
}

TEST(QuantizeTest, RampMapsToIdentityCodes) {
  std::vector<float> x(16);
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  const auto q = quantize(x, CodecConfig::int_asym(4, 16));
  std::vector<std::uint32_t> expect(16);
  for (std::uint32_t i = 0; i < 16; ++i) expect[i] = i;
  EXPECT_EQ(unpack(q.codes), expect);
  ASSERT_EQ(q.scales.size(), 1u);
  EXPECT_EQ(q.scales[0], 1.0f);
  EXPECT_EQ(q.zeros[0], 0u);
  EXPECT_EQ(dequantize(q), x);
}

TEST(QuantizeTest, SymmetricRangeClampsAtTop) {
  const std::vector<float> x = {-2.0f, 2.0f};
  const auto q = quantize(x, CodecConfig::int_asym(4));
  EXPECT_EQ(unpack(q.codes), (std::vector<std::uint32_t>{0, 15}));
  EXPECT_EQ(q.zeros[0], 8u);
}

TEST(QuantizeTest, CeilModeRoundsUp) {
  std::vector<float> x = {0.0f, 0.2f, 1.2f, 15.0f};
  CodecConfig cfg = CodecConfig::int_asym(4, 4);
  cfg.rounding = Rounding::kCeil;
  EXPECT_EQ(unpack(quantize(x, cfg).codes), (std::vector<std::uint32_t>{0, 1, 2, 15}));
  cfg.rounding = Rounding::kNearestEven;
  EXPECT_EQ(unpack(quantize(x, cfg).codes), (std::vector<std::uint32_t>{0, 0, 1, 15}));
}

TEST(QuantizeTest, PartialTailGroup) {
  std::vector<float> x(10);
  for (int i = 0; i < 10; ++i) x[i] = static_cast<float>(i * (i < 8 ? 1 : 100));
  const auto q = quantize(x, CodecConfig::int_asym(8, 4));
  EXPECT_EQ(q.scales.size(), 3u);
  EXPECT_EQ(q.zeros.size(), 3u);
  EXPECT_EQ(q.element_count, 10u);
  EXPECT_EQ(dequantize(q).size(), 10u);
}

TEST(QuantizeTest, Errors) {
  EXPECT_THROW(quantize(std::vector<float>{}, CodecConfig::int_asym(4)), DomainError);
  EXPECT_THROW(quantize(std::vector<float>{1.0f, NAN}, CodecConfig::int_asym(4)), DomainError);
  EXPECT_THROW(quantize(std::vector<float>{1.0f}, CodecConfig::int_asym(9)), ConfigError);
  CodecConfig bad = CodecConfig::int_asym(4);
  bad.group_size = 0;
  EXPECT_THROW(quantize(std::vector<float>{1.0f}, bad), ConfigError);
  bad = CodecConfig::int_asym(4);
  bad.scale_floor = 0.0f;
  EXPECT_THROW(quantize(std::vector<float>{1.0f}, bad), ConfigError);
  EXPECT_THROW(quantize_fp(std::vector<float>{1.0f}, NumberFormat::kInt, 128), ConfigError);
}

TEST(DequantizeTest, HandEvaluatedExamples) {
  std::vector<std::uint32_t> ramp(16);
  for (std::uint32_t i = 0; i < 16; ++i) ramp[i] = i;
  const auto r = dequantize(make_tensor(ramp, {1.0f}, {0}, CodecConfig::int_asym(4, 16)));
  for (int i = 0; i < 16; ++i) EXPECT_EQ(r[i], static_cast<float>(i));

  const auto a = dequantize(make_tensor({0, 15}, {4.0f / 15.0f}, {8}, CodecConfig::int_asym(4)));
  EXPECT_FLOAT_EQ(a[0], -32.0f / 15.0f);
  EXPECT_FLOAT_EQ(a[1], 28.0f / 15.0f);

  // -8 and 7 as 4-bit two's complement.
  const auto s = dequantize(make_tensor({0x8, 0x7}, {0.5f}, {}, CodecConfig::int_sym(4)));
  EXPECT_EQ(s, (std::vector<float>{-4.0f, 3.5f}));
}

TEST(DequantizeTest, MalformedTensorsAreIntegrityErrors) {
  auto q = make_tensor({0, 15}, {1.0f}, {8}, CodecConfig::int_asym(4));
  q.scales.clear();
  EXPECT_THROW(dequantize(q), IntegrityError);
  q = make_tensor({0, 15}, {1.0f}, {16}, CodecConfig::int_asym(4));
  EXPECT_THROW(dequantize(q), IntegrityError);
  q = make_tensor({0, 15}, {1.0f}, {8}, CodecConfig::int_asym(4));
  q.codes.bytes.push_back(0);
  EXPECT_THROW(dequantize(q), IntegrityError);
  q = make_tensor({0x7F}, {1.0f}, {}, CodecConfig::minifloat(NumberFormat::kE4M3));
  EXPECT_THROW(dequantize(q), IntegrityError);
  q = make_tensor({1}, {0.0f}, {}, CodecConfig::int_sym(4));
  EXPECT_THROW(dequantize(q), IntegrityError);
}

TEST(MseTest, Examples) {
  const std::vector<float> a = {0.0f, 0.0f};
  const std::vector<float> b = {1.0f, 3.0f};
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_EQ(mse(a, b), 5.0);
  EXPECT_EQ(mse(std::vector<float>{2.0f}, std::vector<float>{-2.0f}), 16.0);
  EXPECT_THROW(mse(a, std::vector<float>{1.0f}), DomainError);
  EXPECT_EQ(max_abs_error(a, b), 3.0);
}

TEST(MiniFloatCodecTest, Examples) {
  // A group absmax of 448 pins the scale at 1.
  const auto one = quantize_fp(std::vector<float>{1.0f, 448.0f}, NumberFormat::kE4M3, 128);
  EXPECT_EQ(one.scales[0], 1.0f);
  EXPECT_EQ(unpack(one.codes)[0], minifloat_encode(1.0, MiniFloat::kE4M3));
  EXPECT_EQ(dequantize(one)[0], 1.0f);
  EXPECT_NEAR(dequantize(quantize_fp(std::vector<float>{1.0f}, NumberFormat::kE4M3, 128))[0], 1.0f, 1e-3f);
  const auto big = quantize_fp(std::vector<float>{448.0f}, NumberFormat::kE4M3, 128);
  EXPECT_EQ(big.scales[0], 1.0f);
  EXPECT_EQ(dequantize(big)[0], 448.0f);
  const auto e5 = quantize_fp(std::vector<float>{-57344.0f, 1.0f}, NumberFormat::kE5M2, 128);
  EXPECT_EQ(dequantize(e5)[0], -57344.0f);
}

TEST(MiniFloatCodecTest, E2M1ErrorInDenseRegion) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> x(128 * 64);
  for (auto& v : x) v = u(rng);
  const auto q = quantize_fp(x, NumberFormat::kE2M1, 128);
  const auto y = dequantize(q);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = q.scales[i / 128];
    if (std::fabs(x[i] / s) > 2.0) continue;
    ++checked;
    ASSERT_LE(std::fabs(static_cast<double>(y[i]) - x[i]), 0.25 * s) << i;
  }
  EXPECT_GT(checked, x.size() / 4);
}

// Oracle for the asymmetric code before clamping.
double raw_code(float x, float s, std::uint32_t z, Rounding r) {
  const double v = static_cast<double>(x) / s;
  return (r == Rounding::kCeil ? std::ceil(v) : std::nearbyint(v)) + z;
}

TEST(ErrorBoundTest, AsymmetricNonClampedElements) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> bits_d(2, 8);
  std::uniform_int_distribution<int> len_d(1, 64);
  std::uniform_real_distribution<float> span_d(-6.0f, 6.0f);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (Rounding mode : {Rounding::kNearestEven, Rounding::kCeil}) {
    std::size_t violations = 0;
    std::size_t clamped = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      const int bits = bits_d(rng);
      const float mag = std::exp2(span_d(rng));
      const float shift = n(rng) * mag;
      std::vector<float> g(static_cast<std::size_t>(len_d(rng)));
      for (auto& v : g) v = shift + n(rng) * mag;
      CodecConfig cfg = CodecConfig::int_asym(bits, g.size());
      cfg.rounding = mode;
      const auto q = quantize(g, cfg);
      const auto y = dequantize(q);
      const float s = q.scales[0];
      const std::uint32_t z = q.zeros[0];
      const double qmax = (1u << bits) - 1u;
      const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
      // Range overshoot when the FP16 scale rounds below the exact one.
      const double overshoot = std::max(0.0, static_cast<double>(std::max(*hi, 0.0f)) -
                                                 std::min(*lo, 0.0f) - qmax * s);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double c = raw_code(g[i], s, z, mode);
        const double err = std::fabs(static_cast<double>(y[i]) - g[i]);
        EXPECT_LE(err, s + overshoot);
        if (c < 0 || c > qmax) {
          ++clamped;
          continue;
        }
        const bool ok = mode == Rounding::kCeil ? err < s : err <= s / 2.0;
        if (!ok) ++violations;
      }
    }
    EXPECT_EQ(violations, 0u);
    EXPECT_GT(clamped, 0u);
  }
}

TEST(ErrorBoundTest, SymmetricNonClampedElements) {
  std::mt19937_64 rng(99);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int bits = 2; bits <= 8; ++bits) {
    std::vector<float> x(128 * 32);
    for (auto& v : x) v = n(rng);
    const auto q = quantize(x, CodecConfig::int_sym(bits, 128));
    const auto y = dequantize(q);
    const double qmax = (1u << (bits - 1)) - 1u;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float s = q.scales[i / 128];
      const double c = std::nearbyint(static_cast<double>(x[i]) / s);
      if (c < -qmax - 1 || c > qmax) continue;
      ASSERT_LE(std::fabs(static_cast<double>(y[i]) - x[i]), s / 2.0);
    }
  }
}

TEST(CodeRangeTest, AllEmittedCodesAreLegal) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 10.0f);
  for (int bits = 2; bits <= 8; ++bits) {
    for (bool sym : {false, true}) {
      std::vector<float> x(1000);
      for (auto& v : x) v = n(rng) + (sym ? 0.0f : 7.0f);
      const auto cfg = sym ? CodecConfig::int_sym(bits, 100) : CodecConfig::int_asym(bits, 100);
      const auto q = quantize(x, cfg);
      for (std::uint32_t c : unpack(q.codes)) {
        if (sym) {
          const auto v = static_cast<std::int64_t>(c) - ((c >> (bits - 1)) ? (std::int64_t{1} << bits) : 0);
          ASSERT_GE(v, -(std::int64_t{1} << (bits - 1)));
          ASSERT_LE(v, (std::int64_t{1} << (bits - 1)) - 1);
        } else {
          ASSERT_LE(c, (1u << bits) - 1u);
        }
      }
      for (float s : q.scales) ASSERT_GE(s, cfg.scale_floor);
    }
  }
}

TEST(FidelityTest, MoreBitsNeverHurtStatistically) {
  ActivationProfile p;
  p.hidden_dim = 512;
  p.tokens = 4;
  p.outlier_channel_frac = 0.02;
  int ok = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    p.seed = static_cast<std::uint64_t>(t);
    const auto x = gen_activations(p);
    const double m8 = mse(quantize_roundtrip(x, CodecConfig::int_asym(8)), x);
    const double m6 = mse(quantize_roundtrip(x, CodecConfig::int_asym(6)), x);
    const double m4 = mse(quantize_roundtrip(x, CodecConfig::int_asym(4)), x);
    if (m8 <= m6 && m6 <= m4) ++ok;
  }
  EXPECT_GE(ok, trials * 99 / 100);
}

TEST(FidelityTest, FinerGroupsNeverWidenTheScale) {
  ActivationProfile p;
  p.hidden_dim = 1024;
  p.tokens = 4;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    p.seed = seed;
    const auto x = gen_activations(p);
    for (int bits : {4, 8}) {
      for (std::size_t coarse : {1024u, 256u}) {
        for (std::size_t fine : {128u, 32u}) {
          for (std::size_t b = 0; b < x.size(); b += coarse) {
            const auto cs = group_params_asym(std::span<const float>(x).subspan(b, coarse), bits).scale;
            for (std::size_t f = b; f < b + coarse; f += fine) {
              ASSERT_LE(group_params_asym(std::span<const float>(x).subspan(f, fine), bits).scale, cs);
              ASSERT_LE(group_params_sym(std::span<const float>(x).subspan(f, fine), bits),
                        group_params_sym(std::span<const float>(x).subspan(b, coarse), bits));
            }
          }
        }
      }
    }
  }
}

TEST(FidelityTest, FinerGroupsLowerMseStatistically) {
  ActivationProfile p;
  p.hidden_dim = 1024;
  p.tokens = 4;
  int ok = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    p.seed = static_cast<std::uint64_t>(t);
    const auto x = gen_activations(p);
    const double coarse = mse(quantize_roundtrip(x, CodecConfig::int_asym(4, 1024)), x);
    const double fine = mse(quantize_roundtrip(x, CodecConfig::int_asym(4, 128)), x);
    if (fine <= coarse) ++ok;
  }
  EXPECT_GE(ok, trials * 99 / 100);
}

TEST(ScaleFloorTest, ConstantGroups) {
  const std::vector<float> zeros(300, 0.0f);
  for (auto cfg : {CodecConfig::int_asym(4), CodecConfig::int_sym(8), CodecConfig::minifloat(NumberFormat::kE4M3),
                   CodecConfig::minifloat(NumberFormat::kE2M1)}) {
    const auto q = quantize(zeros, cfg);
    for (float s : q.scales) EXPECT_GE(s, cfg.scale_floor);
    EXPECT_EQ(dequantize(q), zeros) << cfg.label();
  }
  // The smallest positive FP16 subnormal is the wire value of a 1e-8 floor.
  EXPECT_EQ(quantize(zeros, CodecConfig::int_asym(4)).scales[0], std::ldexp(1.0f, -24));
  const std::vector<float> c(64, 3.25f);
  const auto y = dequantize(quantize(c, CodecConfig::int_asym(8, 64)));
  for (float v : y) EXPECT_NEAR(v, 3.25f, 3.25f / 255.0f);
}

TEST(PassthroughTest, IdentityOnHalfValues) {
  std::vector<float> x;
  for (std::uint32_t h = 0; h < 0x7C00; h += 7) {
    x.push_back(half_bits_to_float(static_cast<std::uint16_t>(h)));
    x.push_back(-half_bits_to_float(static_cast<std::uint16_t>(h)));
  }
  const auto q = quantize(x, CodecConfig::fp16());
  EXPECT_TRUE(q.scales.empty());
  const auto y = dequantize(q);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(float_to_half_bits(y[i]), float_to_half_bits(x[i]));
  const std::vector<float> odd = {0.1f, 1.0f / 3.0f};
  const auto z = dequantize(quantize(odd, CodecConfig::fp16()));
  EXPECT_EQ(z[0], round_to_half(0.1f));
  EXPECT_EQ(z[1], round_to_half(1.0f / 3.0f));
}

TEST(WireTest, SizeAndRoundTrip) {
  EXPECT_EQ(wire_size(256, CodecConfig::int_asym(4)), 128u + 2 * 3);
  EXPECT_EQ(wire_size(256, CodecConfig::int_sym(4)), 128u + 2 * 2);
  EXPECT_EQ(wire_size(130, CodecConfig::int_asym(8)), 130u + 2 * 3);
  EXPECT_EQ(wire_size(3, CodecConfig::int_asym(4)), 2u + 3);
  EXPECT_EQ(wire_size(100, CodecConfig::fp16()), 200u);
  EXPECT_EQ(wire_size(256, CodecConfig::minifloat(NumberFormat::kE2M1)), 128u + 2 * 2);
  // 4-bit codes plus a 2-byte scale and 1-byte zero per 128 values, vs FP16.
  const double ratio = static_cast<double>(wire_size(128 * 64, CodecConfig::int_asym(4))) / (2.0 * 128 * 64);
  EXPECT_DOUBLE_EQ(ratio, 0.26171875);

  std::mt19937 rng(3);
  std::normal_distribution<float> n(1.0f, 4.0f);
  std::vector<float> x(777);
  for (auto& v : x) v = n(rng);
  for (auto cfg : {CodecConfig::int_asym(4, 64), CodecConfig::int_sym(6, 32), CodecConfig::int_asym(8),
                   CodecConfig::minifloat(NumberFormat::kE5M2), CodecConfig::minifloat(NumberFormat::kE2M1),
                   CodecConfig::fp16()}) {
    const auto q = quantize(x, cfg);
    const auto bytes = to_wire(q);
    EXPECT_EQ(bytes.size(), wire_size(x.size(), cfg)) << cfg.label();
    const auto back = from_wire(bytes, x.size(), cfg);
    EXPECT_EQ(dequantize(back), dequantize(q)) << cfg.label();
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(from_wire(truncated, x.size(), cfg), IntegrityError);
  }
}

TEST(JsonTest, RoundTripAndErrors) {
  for (auto cfg : {CodecConfig::int_asym(4, 64), CodecConfig::int_sym(6, 32), CodecConfig::fp16(),
                   CodecConfig::minifloat(NumberFormat::kE4M3), CodecConfig::minifloat(NumberFormat::kE2M1, 32)}) {
    nlohmann::json j = cfg;
    EXPECT_EQ(j.get<CodecConfig>(), cfg) << j.dump();
  }
  CodecConfig ceil = CodecConfig::int_asym(8);
  ceil.rounding = Rounding::kCeil;
  ceil.scale_floor = 1e-4f;
  EXPECT_EQ(nlohmann::json(ceil).get<CodecConfig>(), ceil);
  EXPECT_EQ(nlohmann::json::parse(R"({"bits": 16})").get<CodecConfig>().format, NumberFormat::kFp16);
  EXPECT_EQ(nlohmann::json::parse(R"({"bits": 4, "group_size": 32})").get<CodecConfig>(), CodecConfig::int_asym(4, 32));
  for (const char* bad : {R"({"bits": 3, "format": "e4m3"})", R"({})", R"({"bits": 12})", R"({"format": "e3m4"})",
                          R"({"bits": 4, "group_size": 0})", R"({"bits": 4, "rounding": "down"})",
                          R"({"bits": "four"})", R"([4])", R"({"bits": 4, "scale_floor": -1})"}) {
    EXPECT_THROW(nlohmann::json::parse(bad).get<CodecConfig>(), ConfigError) << bad;
  }
}

TEST(LabelTest, Names) {
  EXPECT_EQ(CodecConfig::int_asym(4).label(), "int4_asym");
  EXPECT_EQ(CodecConfig::int_sym(8).label(), "int8_sym");
  EXPECT_EQ(CodecConfig::minifloat(NumberFormat::kE4M3).label(), "fp8_e4m3");
  EXPECT_EQ(CodecConfig::minifloat(NumberFormat::kE2M1).label(), "fp4_e2m1");
  EXPECT_EQ(CodecConfig::fp16().label(), "fp16");
}

}  // namespace
}  // namespace flashcomm
