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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flashcomm/errors.hpp"
#include "flashcomm/fp16.hpp"

namespace flashcomm {

// Dense little-endian bitstream of fixed-width codes.
//
// Code i occupies bits [i*bits, (i+1)*bits) of the stream, where bit k of the
// stream is bit (k % 8) of byte k / 8. For 4-bit codes this puts even codes in
// the low nibble and odd codes in the high nibble of byte i / 2; 8-bit codes
// take one byte each and 16-bit codes are stored little-endian.
struct PackedBuffer {
  std::vector<std::uint8_t> bytes;
  int bits_per_code = 8;
  std::size_t code_count = 0;

  friend bool operator==(const PackedBuffer&, const PackedBuffer&) = default;
};

constexpr std::size_t packed_size(std::size_t code_count, int bits) {
  return (code_count * static_cast<std::size_t>(bits) + 7) / 8;
}

namespace detail {

inline void check_code_width(int bits) {
  if (bits < 1 || bits > 16) {
    throw ConfigError("code width must be in 1..16 bits, got " + std::to_string(bits));
  }
}

}  // namespace detail

inline PackedBuffer pack(std::span<const std::uint32_t> codes, int bits) {
  detail::check_code_width(bits);
  const std::uint32_t limit = 1u << bits;
  PackedBuffer out;
  out.bits_per_code = bits;
  out.code_count = codes.size();
  out.bytes.assign(packed_size(codes.size(), bits), 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= limit) {
      throw DomainError("code " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                        " does not fit in " + std::to_string(bits) + " bits");
    }
  }
  switch (bits) {
    case 4:
      for (std::size_t i = 0; i < codes.size(); ++i) {
        out.bytes[i / 2] |= static_cast<std::uint8_t>(codes[i] << ((i & 1) * 4));
      }
      return out;
    case 8:
      for (std::size_t i = 0; i < codes.size(); ++i) out.bytes[i] = static_cast<std::uint8_t>(codes[i]);
      return out;
    case 16:
      for (std::size_t i = 0; i < codes.size(); ++i) {
        out.bytes[2 * i] = static_cast<std::uint8_t>(codes[i] & 0xFFu);
        out.bytes[2 * i + 1] = static_cast<std::uint8_t>(codes[i] >> 8);
      }
      return out;
    default:
      break;
  }
  std::size_t bitpos = 0;
  for (std::uint32_t c : codes) {
    for (int b = 0; b < bits; ++b, ++bitpos) {
      if ((c >> b) & 1u) out.bytes[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  return out;
}

inline std::vector<std::uint32_t> unpack(const PackedBuffer& buf) {
  detail::check_code_width(buf.bits_per_code);
  const int bits = buf.bits_per_code;
  if (buf.bytes.size() != packed_size(buf.code_count, bits)) {
    throw IntegrityError("packed buffer holds " + std::to_string(buf.bytes.size()) +
                         " bytes, expected " + std::to_string(packed_size(buf.code_count, bits)) +
                         " for " + std::to_string(buf.code_count) + " codes");
  }
  std::vector<std::uint32_t> codes(buf.code_count);
  switch (bits) {
    case 4:
      for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = (buf.bytes[i / 2] >> ((i & 1) * 4)) & 0xFu;
      return codes;
    case 8:
      for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = buf.bytes[i];
      return codes;
    case 16:
      for (std::size_t i = 0; i < codes.size(); ++i) {
        codes[i] = static_cast<std::uint32_t>(buf.bytes[2 * i]) |
                   (static_cast<std::uint32_t>(buf.bytes[2 * i + 1]) << 8);
      }
      return codes;
    default:
      break;
  }
  std::size_t bitpos = 0;
  for (auto& c : codes) {
    std::uint32_t v = 0;
    for (int b = 0; b < bits; ++b, ++bitpos) {
      v |= static_cast<std::uint32_t>((buf.bytes[bitpos / 8] >> (bitpos % 8)) & 1u) << b;
    }
    c = v;
  }
  return codes;
}

// Software check of the FP16 exponent-bias trick used by fast INT4
// dequantization: OR-ing a 4-bit code into the mantissa of 0x6400 (1024.0)
// and subtracting 1024.0 yields the code as a float with no conversion.
inline float magic_dequant_identity(std::uint32_t code) {
  if (code > 15) throw DomainError("magic dequantization takes a 4-bit code, got " + std::to_string(code));
  const auto biased = static_cast<std::uint16_t>(0x6400u | code);
  return half_bits_to_float(biased) - half_bits_to_float(0x6400u);
}

}  // namespace flashcomm
