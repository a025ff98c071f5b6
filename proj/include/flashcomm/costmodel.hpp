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
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flashcomm/codec.hpp"
#include "flashcomm/collectives.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/fabric.hpp"

namespace flashcomm {

enum class Method { kRing, kFlash };

inline std::string to_string(Method m) { return m == Method::kRing ? "ring" : "flash"; }

// Ring vs Flash accounting for one all-reduce of `elements` FP16 values.
// Step and QDQ counts are per chunk; element volumes are pre-compression and
// wire bytes include scale/zero metadata.
struct CostReport {
  std::string method;
  std::string codec;
  int world_size = 1;
  std::uint64_t elements = 0;
  std::uint64_t chunks = 1;
  std::uint64_t reduce_steps = 0;
  std::uint64_t gather_steps = 0;
  std::uint64_t qdq_passes = 0;
  std::uint64_t total_volume_elems = 0;  // both phases, busiest rank
  std::uint64_t reduce_phase_elems = 0;
  std::uint64_t gather_phase_elems = 0;
  std::uint64_t reduce_step_elems = 0;  // largest single reduce message
  std::vector<std::uint64_t> wire_bytes_per_rank;
  double predicted_seconds = 0.0;
  double speedup_vs_baseline = 1.0;

  std::uint64_t max_wire_bytes() const {
    return wire_bytes_per_rank.empty() ? 0 : *std::max_element(wire_bytes_per_rank.begin(), wire_bytes_per_rank.end());
  }

  nlohmann::json to_json() const {
    return {{"method", method},
            {"codec", codec},
            {"world_size", world_size},
            {"elements", elements},
            {"chunks", chunks},
            {"reduce_steps", reduce_steps},
            {"gather_steps", gather_steps},
            {"qdq_passes", qdq_passes},
            {"total_volume_elems", total_volume_elems},
            {"reduce_phase_elems", reduce_phase_elems},
            {"gather_phase_elems", gather_phase_elems},
            {"reduce_step_elems", reduce_step_elems},
            {"wire_bytes_per_rank", wire_bytes_per_rank},
            {"max_wire_bytes", max_wire_bytes()},
            {"predicted_seconds", predicted_seconds},
            {"speedup_vs_baseline", speedup_vs_baseline}};
  }

  static std::string csv_header() {
    return "method,codec,world_size,elements,chunks,reduce_steps,gather_steps,qdq_passes,total_volume_elems,"
           "reduce_phase_elems,gather_phase_elems,max_wire_bytes,predicted_seconds,speedup_vs_baseline";
  }

  std::string csv_row() const {
    char tail[96];
    std::snprintf(tail, sizeof(tail), "%.9g,%.9g", predicted_seconds, speedup_vs_baseline);
    std::ostringstream os;
    os << method << ',' << codec << ',' << world_size << ',' << elements << ',' << chunks << ',' << reduce_steps << ','
       << gather_steps << ',' << qdq_passes << ',' << total_volume_elems << ',' << reduce_phase_elems << ','
       << gather_phase_elems << ',' << max_wire_bytes() << ',' << tail;
    return os.str();
  }
};

namespace detail {

inline void check_cost_args(std::size_t elements, int world) {
  if (world < 1) throw DomainError("world size must be at least 1");
  if (elements < 1) throw DomainError("element count must be at least 1");
}

}  // namespace detail

inline CostReport analytic_ring_cost(std::size_t elements, int world, const CodecConfig& codec) {
  detail::check_cost_args(elements, world);
  codec.validate();
  CostReport rep;
  rep.method = "ring";
  rep.codec = codec.label();
  rep.world_size = world;
  rep.elements = elements;
  rep.wire_bytes_per_rank.assign(static_cast<std::size_t>(world), 0);
  if (world == 1) return rep;
  if (elements < static_cast<std::size_t>(world)) throw DomainError("ring all-reduce needs at least one element per rank");

  rep.reduce_steps = rep.gather_steps = static_cast<std::uint64_t>(world - 1);
  rep.qdq_passes = codec.is_passthrough() ? 0 : static_cast<std::uint64_t>(world);
  for (int r = 0; r < world; ++r) {
    std::uint64_t bytes = 0;
    std::uint64_t rs_elems = 0;
    std::uint64_t ag_elems = 0;
    for (int k = 0; k < world - 1; ++k) {
      const Shard rs = ring_shard(elements, world, detail::mod(r - k, world));
      const Shard ag = ring_shard(elements, world, detail::mod(r + 1 - k, world));
      bytes += wire_size(rs.size, codec) + wire_size(ag.size, codec);
      rs_elems += rs.size;
      ag_elems += ag.size;
      rep.reduce_step_elems = std::max<std::uint64_t>(rep.reduce_step_elems, rs.size);
    }
    rep.wire_bytes_per_rank[static_cast<std::size_t>(r)] = bytes;
    rep.reduce_phase_elems = std::max(rep.reduce_phase_elems, rs_elems);
    rep.gather_phase_elems = std::max(rep.gather_phase_elems, ag_elems);
    rep.total_volume_elems = std::max(rep.total_volume_elems, rs_elems + ag_elems);
  }
  return rep;
}

inline CostReport analytic_flash_cost(std::size_t elements, int world, const FlashConfig& cfg) {
  detail::check_cost_args(elements, world);
  CostReport rep;
  rep.method = "flash";
  rep.codec = cfg.label();
  rep.world_size = world;
  rep.elements = elements;
  rep.wire_bytes_per_rank.assign(static_cast<std::size_t>(world), 0);
  const FlashLayout layout = flash_layout(elements, world, cfg);
  if (world == 1) return rep;

  rep.chunks = layout.chunks;
  rep.reduce_steps = rep.gather_steps = 1;
  rep.qdq_passes = static_cast<std::uint64_t>(cfg.quantizing_stages());
  const std::uint64_t peers = static_cast<std::uint64_t>(world - 1);
  std::uint64_t bytes = 0;
  std::uint64_t phase_elems = 0;
  for (std::size_t c = 0; c < layout.chunks; ++c) {
    const std::size_t seg = layout.segment_length(c);
    bytes += peers * (wire_size(seg, cfg.stage1) + wire_size(seg, cfg.stage2));
    phase_elems += peers * seg;
  }
  std::fill(rep.wire_bytes_per_rank.begin(), rep.wire_bytes_per_rank.end(), bytes);
  rep.reduce_phase_elems = rep.gather_phase_elems = phase_elems;
  rep.reduce_step_elems = phase_elems;
  rep.total_volume_elems = 2 * phase_elems;
  return rep;
}

// All2All of raw FP32 segments: every rank sends one segment to each peer in
// a single round.
inline CostReport analytic_all2all_cost(std::size_t segment_elems, int world) {
  if (world < 1) throw DomainError("world size must be at least 1");
  CostReport rep;
  rep.method = "all2all";
  rep.codec = "fp32";
  rep.world_size = world;
  rep.elements = segment_elems * static_cast<std::size_t>(world);
  const std::uint64_t peers = static_cast<std::uint64_t>(world - 1);
  rep.wire_bytes_per_rank.assign(static_cast<std::size_t>(world), peers * segment_elems * sizeof(float));
  rep.total_volume_elems = peers * segment_elems;
  return rep;
}

// Ring uses cfg.stage1 as its per-hop codec.
inline CostReport analytic_cost(Method method, std::size_t elements, int world, const FlashConfig& cfg) {
  return method == Method::kRing ? analytic_ring_cost(elements, world, cfg.stage1)
                                 : analytic_flash_cost(elements, world, cfg);
}

// Alpha-beta-gamma time: a base latency per communication round, the busiest
// rank's wire bytes over link bandwidth, and a per-MiB cost for every QDQ pass
// over the FP16 payload.
inline double latency(const CostReport& rep, const FabricTopology& topo) {
  topo.validate();
  const double steps = static_cast<double>(rep.reduce_steps + rep.gather_steps);
  const double payload_mib = 2.0 * static_cast<double>(rep.elements) / (1024.0 * 1024.0);
  return steps * topo.base_latency + static_cast<double>(rep.max_wire_bytes()) / topo.link_bandwidth +
         static_cast<double>(rep.qdq_passes) * topo.qdq_cost * payload_mib;
}

inline double speedup(double baseline_seconds, double seconds) {
  if (seconds <= 0.0) return baseline_seconds <= 0.0 ? 1.0 : 0.0;
  return baseline_seconds / seconds;
}

// Fills predicted_seconds and speedup_vs_baseline against an FP16 ring
// all-reduce of the same size.
inline CostReport with_latency(CostReport rep, const FabricTopology& topo) {
  const CostReport baseline = analytic_ring_cost(rep.elements, rep.world_size, CodecConfig::fp16());
  rep.predicted_seconds = latency(rep, topo);
  rep.speedup_vs_baseline = speedup(latency(baseline, topo), rep.predicted_seconds);
  return rep;
}

// Intra-node PCIe-class profile: 64 GB/s links, 10 us per round, QDQ cost
// calibrated so INT4 Flash over FP16 ring lands near 3.2x at 256 MiB, N = 4.
inline FabricTopology l40_like_profile(int world = 4) {
  FabricTopology t;
  t.name = "L40-like";
  t.world_size = world;
  t.link_bandwidth = 64e9;
  t.base_latency = 10e-6;
  t.qdq_cost = 6.5e-7;
  return t;
}

inline nlohmann::json profile_to_json(const FabricTopology& t) {
  return {{"name", t.name},
          {"world_size", t.world_size},
          {"link_bandwidth", t.link_bandwidth},
          {"base_latency", t.base_latency},
          {"qdq_cost", t.qdq_cost}};
}

inline FabricTopology profile_from_json(const nlohmann::json& j) {
  FabricTopology t = l40_like_profile();
  try {
    t.name = j.value("name", std::string("custom"));
    t.world_size = j.value("world_size", t.world_size);
    t.link_bandwidth = j.value("link_bandwidth", t.link_bandwidth);
    t.base_latency = j.value("base_latency", t.base_latency);
    t.qdq_cost = j.value("qdq_cost", t.qdq_cost);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad topology profile: ") + e.what());
  }
  t.validate();
  return t;
}

inline constexpr const char* kProfileEnvVar = "FLASHCOMM_PROFILE";

// Resolves a built-in profile name or a path to a JSON profile. An empty name
// falls back to $FLASHCOMM_PROFILE, then to "L40-like".
inline FabricTopology load_profile(std::string name_or_path) {
  if (name_or_path.empty()) {
    const char* env = std::getenv(kProfileEnvVar);
    name_or_path = env && *env ? env : "L40-like";
  }
  if (name_or_path == "L40-like") return l40_like_profile();
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("unknown topology profile '" + name_or_path + "'");
  try {
    return profile_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse profile '" + name_or_path + "': " + e.what());
  }
}

// Measured counterpart of an analytic report, built from a fabric run.
inline CostReport measured_report(const CollectiveRun& run, const std::string& method, const std::string& codec,
                                  std::size_t elements) {
  const StepCounters s = measured_steps(run);
  CostReport rep;
  rep.method = method;
  rep.codec = codec;
  rep.world_size = run.ledger.world_size;
  rep.elements = elements;
  rep.chunks = run.chunks;
  rep.reduce_steps = s.reduce_steps;
  rep.gather_steps = s.gather_steps;
  rep.qdq_passes = s.qdq_passes;
  for (int r = 0; r < run.ledger.world_size; ++r) rep.wire_bytes_per_rank.push_back(run.ledger.bytes_sent_by(r));
  return rep;
}

// Field-by-field differences in steps, QDQ passes and per-rank wire bytes.
// Empty when measurement and model agree exactly.
inline std::vector<std::string> diff_reports(const CostReport& measured, const CostReport& analytic) {
  std::vector<std::string> out;
  const auto cmp = [&](const char* field, std::uint64_t m, std::uint64_t a) {
    if (m != a) out.push_back(std::string(field) + ": measured " + std::to_string(m) + " vs analytic " + std::to_string(a));
  };
  cmp("reduce_steps", measured.reduce_steps, analytic.reduce_steps);
  cmp("gather_steps", measured.gather_steps, analytic.gather_steps);
  cmp("qdq_passes", measured.qdq_passes, analytic.qdq_passes);
  cmp("chunks", measured.chunks, analytic.chunks);
  if (measured.wire_bytes_per_rank.size() != analytic.wire_bytes_per_rank.size()) {
    out.push_back("world size differs");
    return out;
  }
  for (std::size_t r = 0; r < measured.wire_bytes_per_rank.size(); ++r) {
    cmp(("wire_bytes[rank " + std::to_string(r) + "]").c_str(), measured.wire_bytes_per_rank[r],
        analytic.wire_bytes_per_rank[r]);
  }
  return out;
}

}  // namespace flashcomm
