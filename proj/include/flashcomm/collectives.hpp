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
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flashcomm/codec.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/fabric.hpp"
#include "flashcomm/fp16.hpp"
#include "flashcomm/hadamard.hpp"

namespace flashcomm {

// Activations are FP16. Every collective rounds its inputs to FP16 on entry,
// accumulates in FP32 and returns FP16-valued sums.

inline constexpr std::size_t kDefaultChunkElems = 64 * 1024;

// Two-stage codec pair for Flash All-Reduce: stage1 quantizes segments before
// the All2All that feeds the reduction, stage2 quantizes the reduced segment
// before the All-Gather.
struct FlashConfig {
  CodecConfig stage1 = CodecConfig::int_asym(4);
  CodecConfig stage2 = CodecConfig::int_asym(4);
  std::size_t chunk_size = 0;  // elements per chunk; 0 picks the default
  std::optional<HadamardBlock> rotation;

  static FlashConfig uniform(const CodecConfig& c) { return {c, c, 0, std::nullopt}; }
  // Mixed precision: INT4 ahead of the reduction, INT8 ahead of the gather.
  static FlashConfig int6(std::size_t group = 128) {
    return {CodecConfig::int_asym(4, group), CodecConfig::int_asym(8, group), 0, std::nullopt};
  }

  bool is_int6() const {
    return stage1.format == NumberFormat::kInt && stage2.format == NumberFormat::kInt && stage1.bits == 4 &&
           stage2.bits == 8;
  }

  std::string label() const {
    if (stage1 == stage2) return stage1.label();
    if (is_int6() && !stage1.symmetric && !stage2.symmetric) return "int6_asym";
    return stage1.label() + "+" + stage2.label();
  }

  int quantizing_stages() const { return (stage1.is_passthrough() ? 0 : 1) + (stage2.is_passthrough() ? 0 : 1); }
};

// Padded length and chunking of one Flash All-Reduce. Every segment is a
// multiple of `unit / world` elements, so quantization groups never straddle
// segment or chunk boundaries.
struct FlashLayout {
  std::size_t elements = 0;
  std::size_t padded = 0;
  std::size_t unit = 0;
  std::size_t chunk = 0;
  std::size_t chunks = 0;
  int world = 1;

  std::size_t chunk_length(std::size_t c) const { return std::min(chunk, padded - c * chunk); }
  std::size_t segment_length(std::size_t c) const { return chunk_length(c) / static_cast<std::size_t>(world); }
};

inline FlashLayout flash_layout(std::size_t elements, int world, const FlashConfig& cfg) {
  if (world < 1) throw ConfigError("world size must be at least 1");
  if (elements == 0) throw DomainError("cannot all-reduce an empty tensor");
  cfg.stage1.validate();
  cfg.stage2.validate();
  const auto grain = [](const CodecConfig& c) { return c.is_passthrough() ? std::size_t{1} : c.group_size; };
  FlashLayout l;
  l.elements = elements;
  l.world = world;
  l.unit = std::lcm(grain(cfg.stage1), grain(cfg.stage2)) * static_cast<std::size_t>(world);
  l.padded = (elements + l.unit - 1) / l.unit * l.unit;
  if (cfg.chunk_size == 0) {
    l.chunk = std::max(l.unit, kDefaultChunkElems / l.unit * l.unit);
  } else {
    if (cfg.chunk_size % l.unit != 0) {
      throw ConfigError("chunk size " + std::to_string(cfg.chunk_size) + " must be a multiple of group size x world (" +
                        std::to_string(l.unit) + ")");
    }
    l.chunk = cfg.chunk_size;
  }
  l.chunks = (l.padded + l.chunk - 1) / l.chunk;
  return l;
}

// Contiguous ring shards: sizes differ by at most one and never exceed
// ceil(elements / world).
struct Shard {
  std::size_t begin;
  std::size_t size;
};

inline Shard ring_shard(std::size_t elements, int world, int index) {
  const std::size_t n = static_cast<std::size_t>(world);
  const std::size_t j = static_cast<std::size_t>(index);
  const std::size_t base = elements / n;
  const std::size_t rem = elements % n;
  return {j * base + std::min(j, rem), base + (j < rem ? 1 : 0)};
}

namespace detail {

inline FloatTensor to_activation(std::span<const float> x) {
  FloatTensor out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = round_to_half(x[i]);
  return out;
}

inline int mod(int a, int n) { return ((a % n) + n) % n; }

inline std::vector<std::uint8_t> encode(std::span<const float> x, const CodecConfig& c) {
  return to_wire(quantize(x, c));
}

inline FloatTensor decode(std::span<const std::uint8_t> bytes, std::size_t elements, const CodecConfig& c) {
  return dequantize(from_wire(bytes, elements, c));
}

inline void check_equal_lengths(const std::vector<FloatTensor>& inputs) {
  if (inputs.empty()) throw ProtocolError("collective needs at least one rank");
  for (std::size_t r = 1; r < inputs.size(); ++r) {
    if (inputs[r].size() != inputs[0].size()) {
      throw ProtocolError("rank " + std::to_string(r) + " holds " + std::to_string(inputs[r].size()) +
                          " elements but rank 0 holds " + std::to_string(inputs[0].size()));
    }
  }
}

inline std::vector<std::uint8_t> float_bytes(std::span<const float> x) {
  std::vector<std::uint8_t> out(x.size() * sizeof(float));
  if (!x.empty()) std::memcpy(out.data(), x.data(), out.size());
  return out;
}

inline FloatTensor bytes_to_floats(std::span<const std::uint8_t> b) {
  if (b.size() % sizeof(float) != 0) throw IntegrityError("float payload is not a whole number of floats");
  FloatTensor out(b.size() / sizeof(float));
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

}  // namespace detail

// Reference all-reduce: elementwise FP32 sum in ascending rank order, no
// communication, no quantization.
inline std::vector<FloatTensor> all_reduce_exact(const std::vector<FloatTensor>& inputs) {
  detail::check_equal_lengths(inputs);
  const std::size_t n = inputs[0].size();
  FloatTensor sum(n);
  for (std::size_t i = 0; i < n; ++i) {
    float acc = round_to_half(inputs[0][i]);
    for (std::size_t r = 1; r < inputs.size(); ++r) acc += round_to_half(inputs[r][i]);
    sum[i] = round_to_half(acc);
  }
  return std::vector<FloatTensor>(inputs.size(), sum);
}

// Ring all-reduce on one rank: N-1 reduce-scatter rounds then N-1 all-gather
// rounds. With a quantizing codec every reduce-scatter hop quantizes the
// outgoing partial sum and dequantizes on receipt; the finished shard is
// quantized once and forwarded unchanged around the gather ring.
inline FloatTensor ring_all_reduce_rank(Communicator& comm, std::span<const float> local, const CodecConfig& codec) {
  codec.validate();
  const int n = comm.world_size();
  const int r = comm.rank();
  FloatTensor acc = detail::to_activation(local);
  if (n == 1) return acc;
  if (acc.size() < static_cast<std::size_t>(n)) {
    throw DomainError("ring all-reduce needs at least one element per rank");
  }
  const int next = detail::mod(r + 1, n);
  const int prev = detail::mod(r - 1, n);
  const bool quantizing = !codec.is_passthrough();
  const auto shard = [&](int j) { return ring_shard(acc.size(), n, j); };

  for (int k = 0; k < n - 1; ++k) {
    comm.begin_step(Phase::kReduce);
    if (quantizing) comm.record_qdq();
    const Shard out = shard(detail::mod(r - k, n));
    const Shard in = shard(detail::mod(r - k - 1, n));
    comm.send(next, detail::encode(std::span<const float>(acc).subspan(out.begin, out.size), codec));
    const FloatTensor partial = detail::decode(comm.recv(prev), in.size, codec);
    for (std::size_t i = 0; i < in.size; ++i) acc[in.begin + i] = partial[i] + acc[in.begin + i];
  }

  if (quantizing) comm.record_qdq();
  const Shard own = shard(detail::mod(r + 1, n));
  std::vector<std::uint8_t> forward = detail::encode(std::span<const float>(acc).subspan(own.begin, own.size), codec);
  {
    const FloatTensor mine = detail::decode(forward, own.size, codec);
    std::copy(mine.begin(), mine.end(), acc.begin() + static_cast<std::ptrdiff_t>(own.begin));
  }
  for (int k = 0; k < n - 1; ++k) {
    comm.begin_step(Phase::kGather);
    comm.send(next, forward);
    const Shard in = shard(detail::mod(r - k, n));
    forward = comm.recv(prev);
    const FloatTensor vals = detail::decode(forward, in.size, codec);
    std::copy(vals.begin(), vals.end(), acc.begin() + static_cast<std::ptrdiff_t>(in.begin));
  }
  return acc;
}

// Flash All-Reduce on one rank. Per chunk: quantize all N segments with
// stage1, send segment j to rank j (own segment stays local), dequantize and
// sum the N contributions in ascending rank order, quantize the reduced
// segment with stage2, send it to every peer, and dequantize all N reduced
// segments. Each element passes through exactly two quantize/dequantize
// passes.
inline FloatTensor flash_all_reduce_rank(Communicator& comm, std::span<const float> local, const FlashConfig& cfg) {
  const int n = comm.world_size();
  const int r = comm.rank();
  const FlashLayout layout = flash_layout(local.size(), n, cfg);
  FloatTensor x = detail::to_activation(local);
  if (n == 1) return x;
  if (cfg.rotation) x = hadamard_apply(x, *cfg.rotation);
  x.resize(layout.padded, 0.0f);

  FloatTensor out(layout.padded);
  const std::span<const float> xs(x);
  for (std::size_t c = 0; c < layout.chunks; ++c) {
    const std::size_t base = c * layout.chunk;
    const std::size_t seg = layout.segment_length(c);
    const auto segment_at = [&](int j) { return base + static_cast<std::size_t>(j) * seg; };

    // Stage 1: quantize, All2All, dequantize, reduce.
    comm.begin_step(Phase::kReduce);
    if (!cfg.stage1.is_passthrough()) comm.record_qdq();
    std::optional<QuantizedTensor> own;
    for (int k = 1; k <= n; ++k) {
      const int j = detail::mod(r + k, n);
      QuantizedTensor q = quantize(xs.subspan(segment_at(j), seg), cfg.stage1);
      if (j == r) {
        own = std::move(q);
      } else {
        comm.send(j, to_wire(q));
      }
    }
    FloatTensor sum;
    for (int j = 0; j < n; ++j) {
      const FloatTensor contrib =
          j == r ? dequantize(*own) : dequantize(from_wire(comm.recv(j), seg, cfg.stage1));
      if (j == 0) {
        sum = contrib;
      } else {
        for (std::size_t i = 0; i < seg; ++i) sum[i] += contrib[i];
      }
    }

    // Stage 2: re-quantize the reduced segment and all-gather it.
    comm.begin_step(Phase::kGather);
    if (!cfg.stage2.is_passthrough()) comm.record_qdq();
    const QuantizedTensor reduced = quantize(sum, cfg.stage2);
    const std::vector<std::uint8_t> wire = to_wire(reduced);
    for (int k = 1; k < n; ++k) comm.send(detail::mod(r + k, n), wire);
    for (int j = 0; j < n; ++j) {
      const FloatTensor vals = j == r ? dequantize(reduced) : dequantize(from_wire(comm.recv(j), seg, cfg.stage2));
      std::copy(vals.begin(), vals.end(), out.begin() + static_cast<std::ptrdiff_t>(segment_at(j)));
    }
  }

  out.resize(layout.elements);
  if (cfg.rotation) out = hadamard_inverse(out, *cfg.rotation);
  return out;
}

// Transposes the rank x segment grid: output segment j on rank r is input
// segment r of rank j. Segments travel as raw FP32; the self segment is copied
// locally.
inline std::vector<FloatTensor> all2all_rank(Communicator& comm, const std::vector<FloatTensor>& segments) {
  const int n = comm.world_size();
  const int r = comm.rank();
  if (segments.size() != static_cast<std::size_t>(n)) {
    throw ProtocolError("rank " + std::to_string(r) + " passed " + std::to_string(segments.size()) +
                        " segments to all2all over " + std::to_string(n) + " ranks");
  }
  comm.begin_step(Phase::kOther);
  for (int k = 1; k < n; ++k) {
    const int j = detail::mod(r + k, n);
    comm.send(j, detail::float_bytes(segments[static_cast<std::size_t>(j)]));
  }
  std::vector<FloatTensor> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    out[static_cast<std::size_t>(j)] =
        j == r ? segments[static_cast<std::size_t>(r)] : detail::bytes_to_floats(comm.recv(j));
  }
  return out;
}

struct CollectiveRun {
  std::vector<FloatTensor> outputs;
  TrafficLedger ledger;
  std::size_t chunks = 1;  // pipeline chunks; step counters are per chunk
};

inline CollectiveRun ring_all_reduce(const std::vector<FloatTensor>& inputs, const CodecConfig& codec,
                                     RunOptions opts = {}) {
  detail::check_equal_lengths(inputs);
  FabricTopology topo;
  topo.world_size = static_cast<int>(inputs.size());
  auto run = run_ranks(
      topo, [&](Communicator& comm) { return ring_all_reduce_rank(comm, inputs[static_cast<std::size_t>(comm.rank())], codec); },
      opts);
  return {std::move(run.outputs), std::move(run.ledger), 1};
}

inline CollectiveRun flash_all_reduce(const std::vector<FloatTensor>& inputs, const FlashConfig& cfg,
                                      RunOptions opts = {}) {
  detail::check_equal_lengths(inputs);
  FabricTopology topo;
  topo.world_size = static_cast<int>(inputs.size());
  const FlashLayout layout = flash_layout(inputs[0].size(), topo.world_size, cfg);
  auto run = run_ranks(
      topo, [&](Communicator& comm) { return flash_all_reduce_rank(comm, inputs[static_cast<std::size_t>(comm.rank())], cfg); },
      opts);
  return {std::move(run.outputs), std::move(run.ledger), topo.world_size == 1 ? 1 : layout.chunks};
}

inline RunResult<std::vector<FloatTensor>> all2all(const std::vector<std::vector<FloatTensor>>& segments,
                                                   RunOptions opts = {}) {
  if (segments.empty()) throw ProtocolError("all2all needs at least one rank");
  FabricTopology topo;
  topo.world_size = static_cast<int>(segments.size());
  return run_ranks(
      topo, [&](Communicator& comm) { return all2all_rank(comm, segments[static_cast<std::size_t>(comm.rank())]); },
      opts);
}

// Per-all-reduce step counters measured by the fabric. All ranks execute the
// same schedule; a rank that disagrees is a protocol error.
inline StepCounters measured_steps(const CollectiveRun& run) {
  const auto& steps = run.ledger.steps;
  if (steps.empty()) return {};
  for (const auto& s : steps) {
    if (s != steps[0]) throw ProtocolError("ranks disagree on step counters");
  }
  const std::uint64_t t = run.chunks;
  return {steps[0].reduce_steps / t, steps[0].gather_steps / t, steps[0].qdq_passes / t};
}

}  // namespace flashcomm
