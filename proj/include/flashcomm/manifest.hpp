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
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "flashcomm/codec.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/table.hpp"
#include "flashcomm/workload.hpp"

namespace flashcomm {

// Sweep manifest:
//
//   {
//     "experiments": [
//       {"name": "groups", "kind": "group_sizes", "profile": {...},
//        "codec": {"bits": 4}, "group_sizes": [4096, 1024, 128], "seeds": 10},
//       {"kind": "int_vs_fp", "group_size": 128},
//       {"kind": "rotation", "codec": {"bits": 4}, "group_sizes": [4096, 128]},
//       {"kind": "rs_vs_ag", "ranks": 4, "codec": {"bits": 4}}
//     ]
//   }
//
// Every experiment runs on `seeds` consecutive seeds starting at the
// profile's seed and emits one table.
enum class ExperimentKind { kGroupSizes, kIntVsFp, kRotation, kRsVsAg };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kGroupSizes: return "group_sizes";
    case ExperimentKind::kIntVsFp: return "int_vs_fp";
    case ExperimentKind::kRotation: return "rotation";
    case ExperimentKind::kRsVsAg: return "rs_vs_ag";
  }
  return "unknown";
}

struct Experiment {
  std::string name;
  ExperimentKind kind = ExperimentKind::kGroupSizes;
  ActivationProfile profile;
  CodecConfig codec = CodecConfig::int_asym(4);
  std::vector<std::size_t> group_sizes;
  std::size_t group_size = 128;
  int ranks = 4;
  std::size_t seeds = 1;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"name", name}, {"kind", to_string(kind)}, {"profile", profile}, {"seeds", seeds}};
    switch (kind) {
      case ExperimentKind::kGroupSizes:
      case ExperimentKind::kRotation:
        j["codec"] = codec;
        j["group_sizes"] = group_sizes;
        break;
      case ExperimentKind::kIntVsFp: j["group_size"] = group_size; break;
      case ExperimentKind::kRsVsAg:
        j["codec"] = codec;
        j["ranks"] = ranks;
        break;
    }
    return j;
  }
};

struct Manifest {
  std::vector<Experiment> experiments;

  nlohmann::json to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : experiments) list.push_back(e.to_json());
    return {{"experiments", list}};
  }
};

namespace detail {

// Forward iterator over a character buffer that counts the newlines consumed,
// so parser callbacks can tell which line they are on.
class LineCountingIterator {
 public:
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  LineCountingIterator() = default;
  LineCountingIterator(const char* p, int* line) : p_(p), line_(line) {}

  reference operator*() const { return *p_; }
  LineCountingIterator& operator++() {
    if (line_ && *p_ == '\n') ++*line_;
    ++p_;
    return *this;
  }
  LineCountingIterator operator++(int) {
    auto tmp = *this;
    ++*this;
    return tmp;
  }
  friend bool operator==(const LineCountingIterator& a, const LineCountingIterator& b) { return a.p_ == b.p_; }

 private:
  const char* p_ = nullptr;
  int* line_ = nullptr;
};

// Source lines of each experiment object and its keys.
struct ManifestLines {
  std::vector<int> experiment;
  std::vector<std::map<std::string, int>> keys;
};

inline std::string where(const ManifestLines& lines, std::size_t index, const std::string& key) {
  int line = index < lines.experiment.size() ? lines.experiment[index] : 0;
  if (index < lines.keys.size()) {
    const auto it = lines.keys[index].find(key);
    if (it != lines.keys[index].end()) line = it->second;
  }
  std::string path = "experiments[" + std::to_string(index) + "]";
  if (!key.empty()) path += "." + key;
  return line > 0 ? "line " + std::to_string(line) + " (" + path + ")" : path;
}

}  // namespace detail

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "group_sizes") return ExperimentKind::kGroupSizes;
  if (s == "int_vs_fp") return ExperimentKind::kIntVsFp;
  if (s == "rotation") return ExperimentKind::kRotation;
  if (s == "rs_vs_ag") return ExperimentKind::kRsVsAg;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

// Parses and validates a manifest. Errors name the offending line and JSON
// path.
inline Manifest parse_manifest(const std::string& text) {
  int line = 1;
  detail::ManifestLines lines;
  bool in_experiments = false;
  const auto cb = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
    using E = nlohmann::json::parse_event_t;
    if (event == E::key && depth == 1) in_experiments = parsed == "experiments";
    if (in_experiments && event == E::object_start && depth == 2) {
      lines.experiment.push_back(line);
      lines.keys.emplace_back();
    }
    if (in_experiments && event == E::key && depth == 3 && !lines.keys.empty()) {
      lines.keys.back()[parsed.get<std::string>()] = line;
    }
    return true;
  };
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(detail::LineCountingIterator(text.data(), &line),
                                detail::LineCountingIterator(text.data() + text.size(), nullptr), cb);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest line " + std::to_string(line) + ": " + e.what());
  }

  if (!doc.is_object() || !doc.contains("experiments") || !doc["experiments"].is_array()) {
    throw ConfigError("manifest needs an 'experiments' array");
  }
  const auto& list = doc["experiments"];
  if (list.empty()) throw ConfigError("manifest 'experiments' array is empty");

  Manifest m;
  static const std::vector<std::string> known = {"name", "kind", "profile", "codec", "group_sizes",
                                                 "group_size", "ranks", "seeds"};
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& j = list[i];
    std::string key;
    const auto fail = [&](const std::string& msg) -> ConfigError {
      return ConfigError("manifest " + detail::where(lines, i, key) + ": " + msg);
    };
    if (!j.is_object()) throw fail("experiment must be an object");
    for (const auto& [k, _] : j.items()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) {
        key = k;
        throw fail("unknown key");
      }
    }
    Experiment e;
    try {
      key = "kind";
      if (!j.contains("kind")) throw ConfigError("missing experiment kind");
      e.kind = parse_experiment_kind(j.at("kind").get<std::string>());
      key = "name";
      e.name = j.value("name", to_string(e.kind) + "_" + std::to_string(i));
      if (e.name.empty() || e.name.find_first_of("/\\") != std::string::npos) {
        throw ConfigError("experiment name must be a plain file stem");
      }
      key = "profile";
      if (j.contains("profile")) e.profile = j.at("profile").get<ActivationProfile>();
      key = "codec";
      if (j.contains("codec")) e.codec = j.at("codec").get<CodecConfig>();
      key = "seeds";
      const auto seeds = j.value("seeds", std::int64_t{1});
      if (seeds < 1) throw ConfigError("seeds must be at least 1");
      e.seeds = static_cast<std::size_t>(seeds);
      key = "group_sizes";
      if (e.kind == ExperimentKind::kGroupSizes || e.kind == ExperimentKind::kRotation) {
        e.group_sizes = j.value("group_sizes", std::vector<std::size_t>{e.profile.hidden_dim, 128});
        if (e.group_sizes.empty()) throw ConfigError("group_sizes is empty");
        for (std::size_t g : e.group_sizes) {
          if (g == 0 || e.profile.hidden_dim % g != 0) {
            throw ConfigError("group size " + std::to_string(g) + " does not divide hidden_dim " +
                              std::to_string(e.profile.hidden_dim));
          }
        }
      }
      key = "group_size";
      e.group_size = j.value("group_size", std::size_t{128});
      if (e.group_size == 0) throw ConfigError("group_size must be positive");
      key = "ranks";
      e.ranks = j.value("ranks", 4);
      if (e.kind == ExperimentKind::kRsVsAg && e.ranks < 2) throw ConfigError("rs_vs_ag needs at least 2 ranks");
      key = "profile";
      if (e.kind == ExperimentKind::kRotation) HadamardBlock{e.profile.hidden_dim, true, std::nullopt}.validate();
    } catch (const ConfigError& err) {
      throw fail(err.detail());
    } catch (const nlohmann::json::exception& err) {
      throw fail(err.what());
    }
    for (const auto& prev : m.experiments) {
      if (prev.name == e.name) {
        key = "name";
        throw fail("duplicate experiment name '" + e.name + "'");
      }
    }
    m.experiments.push_back(std::move(e));
  }
  return m;
}

inline Table run_experiment(const Experiment& e) {
  Table t;
  for (std::size_t k = 0; k < e.seeds; ++k) {
    ActivationProfile p = e.profile;
    p.seed = e.profile.seed + k;
    switch (e.kind) {
      case ExperimentKind::kGroupSizes:
        t.columns = {"seed", "codec", "group_size", "mse"};
        for (const auto& r : sweep_group_sizes(p, e.codec, e.group_sizes)) {
          t.add_row({p.seed, e.codec.label(), r.group_size, r.mse});
        }
        break;
      case ExperimentKind::kIntVsFp: {
        t.columns = {"seed", "codec", "group_size", "mse"};
        const auto codecs = format_comparison_set(e.group_size);
        for (const auto& r : format_comparison(p, codecs)) t.add_row({p.seed, r.codec, e.group_size, r.mse});
        break;
      }
      case ExperimentKind::kRotation:
        t.columns = {"seed", "codec", "group_size", "mse_plain", "mse_rotated", "plain_over_rotated"};
        for (const auto& r : rotation_experiment(p, e.codec, e.group_sizes)) {
          t.add_row({p.seed, e.codec.label(), r.group_size, r.mse_plain, r.mse_rotated,
                     r.mse_rotated > 0.0 ? r.mse_plain / r.mse_rotated : 1.0});
        }
        break;
      case ExperimentKind::kRsVsAg: {
        t.columns = {"seed", "codec", "ranks", "mse_stage1_only", "mse_both_stages"};
        const auto r = rs_vs_ag_experiment(p, e.ranks, e.codec);
        t.add_row({p.seed, e.codec.label(), e.ranks, r.mse_stage1_only, r.mse_both_stages});
        break;
      }
    }
  }
  return t;
}

}  // namespace flashcomm
