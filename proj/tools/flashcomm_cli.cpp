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

// flashcomm: quantize, simulate, cost and sweep subcommands.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flashcomm/flashcomm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flashcomm {
namespace {

constexpr int kExitInconsistent = 1;
constexpr int kExitError = 2;

struct OutputOptions {
  std::string out_dir;
  std::string format = "csv";
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << content;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Writes `<stem>.csv` and `<stem>.json` under out_dir, or prints the chosen
// format to stdout when no directory is given.
void emit_table(const OutputOptions& o, const std::string& stem, const Table& t) {
  if (o.out_dir.empty()) {
    std::cout << (o.format == "json" ? dump(t.to_json()) : t.to_csv());
    return;
  }
  write_file(fs::path(o.out_dir) / (stem + ".csv"), t.to_csv());
  write_file(fs::path(o.out_dir) / (stem + ".json"), dump(t.to_json()));
}

void emit_echo(const OutputOptions& o, const json& echo) {
  if (o.out_dir.empty()) {
    std::cerr << "# run: " << echo.dump() << "\n";
    return;
  }
  write_file(fs::path(o.out_dir) / "manifest.json", dump(echo));
}

void prepare(const OutputOptions& o) {
  if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
}

std::uint64_t fnv1a(std::span<const float> x) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (float v : x) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --bits 2..8 selects INT codes, 16 selects FP16 passthrough.
CodecConfig codec_from_flags(int bits, const std::string& format, std::size_t group, bool symmetric,
                             const std::string& rounding) {
  CodecConfig c;
  if (format == "int") {
    c = bits == 16 ? CodecConfig::fp16() : (symmetric ? CodecConfig::int_sym(bits, group) : CodecConfig::int_asym(bits, group));
  } else if (format == "e4m3") {
    c = CodecConfig::minifloat(NumberFormat::kE4M3, group);
  } else if (format == "e5m2") {
    c = CodecConfig::minifloat(NumberFormat::kE5M2, group);
  } else if (format == "e2m1") {
    c = CodecConfig::minifloat(NumberFormat::kE2M1, group);
  } else {
    c = CodecConfig::fp16();
  }
  c.group_size = group;
  if (rounding == "ceil") c.rounding = Rounding::kCeil;
  c.validate();
  return c;
}

struct ProfileFlags {
  std::size_t hidden = 4096;
  std::size_t tokens = 16;
  double outlier_frac = 0.01;
  float outlier_scale = 30.0f;
  float std = 1.0f;
  float mean = 0.0f;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--hidden", hidden, "Hidden dimension of the generated activations")->capture_default_str();
    app->add_option("--tokens", tokens, "Token count of the generated activations")->capture_default_str();
    app->add_option("--outlier-frac", outlier_frac, "Fraction of outlier channels")->capture_default_str();
    app->add_option("--outlier-scale", outlier_scale, "Outlier channel multiplier")->capture_default_str();
    app->add_option("--std", std, "Base standard deviation")->capture_default_str();
    app->add_option("--mean", mean, "Mean shift")->capture_default_str();
    app->add_option("--seed", seed, "Generator seed")->capture_default_str();
  }

  ActivationProfile profile() const {
    ActivationProfile p;
    p.hidden_dim = hidden;
    p.tokens = tokens;
    p.outlier_channel_frac = outlier_frac;
    p.outlier_scale = outlier_scale;
    p.base_std = std;
    p.mean = mean;
    p.seed = seed;
    p.validate();
    return p;
  }
};

// ---------------------------------------------------------------- quantize

struct QuantizeArgs {
  std::string input;
  std::string codec_config;
  int bits = 4;
  std::string format = "int";
  std::size_t group = 128;
  bool symmetric = false;
  std::string rounding = "nearest-even";
  ProfileFlags profile;
};

FloatTensor read_floats(const std::string& path) {
  const std::string raw = read_file(path);
  if (raw.size() % 4 != 0) throw ConfigError("'" + path + "' is not a whole number of float32 values");
  FloatTensor x(raw.size() / 4);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    x[i] = std::bit_cast<float>(bits);
  }
  return x;
}

int cmd_quantize(const QuantizeArgs& a, const OutputOptions& o) {
  const CodecConfig codec = a.codec_config.empty()
                                ? codec_from_flags(a.bits, a.format, a.group, a.symmetric, a.rounding)
                                : json::parse(read_file(a.codec_config)).get<CodecConfig>();
  json echo = {{"subcommand", "quantize"}, {"codec", codec}};
  FloatTensor x;
  if (a.input.empty()) {
    const ActivationProfile p = a.profile.profile();
    echo["profile"] = p;
    x = gen_activations(p);
  } else {
    echo["input"] = a.input;
    x = read_floats(a.input);
  }
  const QuantizedTensor q = quantize(x, codec);
  const FloatTensor y = dequantize(q);
  const std::size_t payload = to_wire(q).size();
  const std::size_t fp16_bytes = 2 * x.size();

  Table t;
  t.columns = {"codec", "elements", "groups", "mse", "max_abs_error", "payload_bytes", "fp16_bytes", "compression_ratio"};
  t.add_row({codec.label(), x.size(), codec.group_count(x.size()), mse(y, x), max_abs_error(y, x), payload, fp16_bytes,
             static_cast<double>(payload) / static_cast<double>(fp16_bytes)});
  prepare(o);
  emit_echo(o, echo);
  emit_table(o, "quantize", t);
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  int ranks = 4;
  std::size_t elems = 1 << 16;
  std::string method = "flash";
  int bits1 = 4;
  int bits2 = 0;
  std::size_t group = 128;
  bool symmetric = false;
  std::size_t chunk = 0;
  std::size_t rotation = 0;
  std::uint64_t seed = 0;
  float outlier_scale = 30.0f;
  std::string dump_output;
};

int cmd_simulate(const SimulateArgs& a, const OutputOptions& o) {
  if (a.ranks < 1) throw ConfigError("--ranks must be at least 1");
  if (a.elems < 1) throw ConfigError("--elems must be at least 1");
  const CodecConfig c1 = codec_from_flags(a.bits1, "int", a.group, a.symmetric, "nearest-even");
  const CodecConfig c2 = codec_from_flags(a.bits2 == 0 ? a.bits1 : a.bits2, "int", a.group, a.symmetric, "nearest-even");
  FlashConfig cfg{c1, c2, a.chunk, std::nullopt};
  if (a.rotation > 0) cfg.rotation = HadamardBlock{a.rotation, true, std::nullopt};

  ActivationProfile p;
  p.hidden_dim = a.elems;
  p.tokens = 1;
  p.outlier_scale = a.outlier_scale;
  p.seed = a.seed;
  std::vector<FloatTensor> inputs;
  for (int r = 0; r < a.ranks; ++r) inputs.push_back(gen_activations(p, static_cast<std::uint64_t>(r)));
  const FloatTensor exact = all_reduce_exact(inputs)[0];

  CollectiveRun run;
  CostReport analytic;
  std::string codec_label;
  if (a.method == "exact") {
    run.outputs = all_reduce_exact(inputs);
    run.ledger = TrafficLedger(a.ranks);
    codec_label = "none";
    analytic.method = "exact";
    analytic.codec = codec_label;
    analytic.world_size = a.ranks;
    analytic.elements = a.elems;
    analytic.wire_bytes_per_rank.assign(static_cast<std::size_t>(a.ranks), 0);
  } else if (a.method == "ring") {
    if (a.rotation > 0) throw ConfigError("--rotation applies to the flash method only");
    run = ring_all_reduce(inputs, c1);
    codec_label = c1.label();
    analytic = analytic_ring_cost(a.elems, a.ranks, c1);
  } else {
    run = flash_all_reduce(inputs, cfg);
    codec_label = cfg.label();
    analytic = analytic_flash_cost(a.elems, a.ranks, cfg);
  }
  CostReport measured = measured_report(run, a.method, codec_label, a.elems);
  measured.method = analytic.method;
  const FabricTopology topo = load_profile("");
  FabricTopology sized = topo;
  sized.world_size = a.ranks;
  analytic = with_latency(analytic, sized);
  measured = with_latency(measured, sized);
  const std::vector<std::string> diff = diff_reports(measured, analytic);

  const FloatTensor& out = run.outputs[0];
  bool ranks_agree = true;
  for (const auto& r : run.outputs) ranks_agree = ranks_agree && r == out;

  json echo = {{"subcommand", "simulate"}, {"ranks", a.ranks},    {"elems", a.elems},
               {"method", a.method},       {"stage1", c1},        {"stage2", c2},
               {"chunk", a.chunk},         {"rotation", a.rotation}, {"seed", a.seed},
               {"outlier_scale", a.outlier_scale}};
  Table reports;
  reports.columns = {"source", "method", "codec", "world_size", "elements", "chunks", "reduce_steps", "gather_steps",
                     "qdq_passes", "max_wire_bytes", "predicted_seconds"};
  for (const auto& [name, rep] : {std::pair{"measured", &measured}, std::pair{"analytic", &analytic}}) {
    reports.add_row({name, rep->method, rep->codec, rep->world_size, rep->elements, rep->chunks, rep->reduce_steps,
                     rep->gather_steps, rep->qdq_passes, rep->max_wire_bytes(), rep->predicted_seconds});
  }
  Table summary;
  summary.columns = {"method", "codec", "ranks", "elements", "mse_vs_exact", "max_abs_error", "output_hash",
                     "ranks_agree", "consistent"};
  summary.add_row({a.method, codec_label, a.ranks, a.elems, mse(out, exact), max_abs_error(out, exact), hex(fnv1a(out)),
                   ranks_agree, diff.empty()});

  prepare(o);
  emit_echo(o, echo);
  emit_table(o, "summary", summary);
  if (!o.out_dir.empty()) {
    emit_table(o, "reports", reports);
    const fs::path dir(o.out_dir);
    write_file(dir / "ledger.csv", run.ledger.to_csv());
    write_file(dir / "ledger.json", dump(run.ledger.to_json()));
    write_file(dir / "measured.json", dump(measured.to_json()));
    write_file(dir / "analytic.json", dump(analytic.to_json()));
    std::string d;
    for (const auto& line : diff) d += line + "\n";
    write_file(dir / "diff.txt", d);
  }
  if (!a.dump_output.empty()) {
    std::string raw(out.size() * 4, '\0');
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(out[i]);
      for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    write_file(a.dump_output, raw);
  }
  for (const auto& line : diff) std::cerr << "inconsistent: " << line << "\n";
  if (!ranks_agree) std::cerr << "inconsistent: ranks hold different results\n";
  return diff.empty() && ranks_agree ? 0 : kExitInconsistent;
}

// -------------------------------------------------------------------- cost

struct CostArgs {
  std::string profile;
  int ranks = 4;
  std::vector<double> volume_mb = {1, 16, 64, 256, 1024};
  std::size_t group = 128;
};

int cmd_cost(const CostArgs& a, const OutputOptions& o) {
  FabricTopology topo = load_profile(a.profile);
  topo.world_size = a.ranks;
  topo.validate();
  struct Row {
    Method method;
    FlashConfig cfg;
  };
  const std::vector<Row> rows = {
      {Method::kRing, FlashConfig::uniform(CodecConfig::fp16())},
      {Method::kRing, FlashConfig::uniform(CodecConfig::int_asym(8, a.group))},
      {Method::kRing, FlashConfig::uniform(CodecConfig::int_asym(4, a.group))},
      {Method::kFlash, FlashConfig::uniform(CodecConfig::fp16())},
      {Method::kFlash, FlashConfig::uniform(CodecConfig::int_asym(8, a.group))},
      {Method::kFlash, FlashConfig::int6(a.group)},
      {Method::kFlash, FlashConfig::uniform(CodecConfig::int_asym(4, a.group))},
  };
  Table t;
  t.columns = {"volume_mib", "method", "codec", "world_size", "elements", "reduce_steps", "gather_steps", "qdq_passes",
               "total_volume_elems", "max_wire_bytes", "predicted_seconds", "speedup_vs_baseline"};
  for (double mb : a.volume_mb) {
    if (!(mb > 0.0)) throw ConfigError("--volume-mb values must be positive");
    const auto elements = static_cast<std::size_t>(std::llround(mb * 1024.0 * 1024.0 / 2.0));
    for (const auto& r : rows) {
      const CostReport rep = with_latency(analytic_cost(r.method, std::max<std::size_t>(elements, 1), a.ranks, r.cfg), topo);
      t.add_row({mb, rep.method, rep.codec, rep.world_size, rep.elements, rep.reduce_steps, rep.gather_steps,
                 rep.qdq_passes, rep.total_volume_elems, rep.max_wire_bytes(), rep.predicted_seconds,
                 rep.speedup_vs_baseline});
    }
  }
  prepare(o);
  emit_echo(o, {{"subcommand", "cost"}, {"profile", profile_to_json(topo)}, {"volume_mb", a.volume_mb}, {"group", a.group}});
  emit_table(o, "cost", t);
  return 0;
}

// ------------------------------------------------------------------- sweep

int cmd_sweep(const std::string& manifest_path, const OutputOptions& o) {
  const Manifest m = parse_manifest(read_file(manifest_path));
  prepare(o);
  emit_echo(o, {{"subcommand", "sweep"}, {"manifest", m.to_json()}});
  for (const auto& e : m.experiments) {
    if (o.out_dir.empty() && o.format == "csv") std::cout << "# " << e.name << "\n";
    emit_table(o, e.name, run_experiment(e));
  }
  return 0;
}

}  // namespace
}  // namespace flashcomm

int main(int argc, char** argv) {
  using namespace flashcomm;
  CLI::App app{"Quantized all-reduce simulator and experiment runner"};
  app.require_subcommand(1);
  OutputOptions out;
  const auto add_output = [&](CLI::App* sub) {
    sub->add_option("--out-dir", out.out_dir, "Directory for CSV/JSON outputs (stdout when omitted)");
    sub->add_option("--output-format", out.format, "Stdout format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
  };

  QuantizeArgs q;
  auto* quant = app.add_subcommand("quantize", "Round-trip a tensor through a codec and report the error");
  quant->add_option("--input", q.input, "Raw little-endian float32 file (generated profile when omitted)");
  quant->add_option("--codec-config", q.codec_config, "JSON codec config block (overrides codec flags)");
  quant->add_option("--bits", q.bits, "INT code width 2..8, or 16 for FP16 passthrough")->capture_default_str();
  quant->add_option("--format", q.format, "Number format")
      ->check(CLI::IsMember({"int", "e4m3", "e5m2", "e2m1", "fp16"}))
      ->capture_default_str();
  quant->add_option("--group", q.group, "Group size")->capture_default_str();
  quant->add_flag("--symmetric", q.symmetric, "Symmetric INT quantization");
  quant->add_option("--rounding", q.rounding, "Rounding mode")
      ->check(CLI::IsMember({"nearest-even", "ceil"}))
      ->capture_default_str();
  q.profile.add(quant);
  add_output(quant);

  SimulateArgs s;
  auto* sim = app.add_subcommand("simulate", "Run one collective on the simulated fabric");
  sim->add_option("--ranks", s.ranks, "World size")->capture_default_str();
  sim->add_option("--elems", s.elems, "Elements per rank")->capture_default_str();
  sim->add_option("--method", s.method, "Collective")->check(CLI::IsMember({"ring", "flash", "exact"}))->capture_default_str();
  sim->add_option("--bits1", s.bits1, "Stage-1 (or ring) code width, 16 = FP16")->capture_default_str();
  sim->add_option("--bits2", s.bits2, "Stage-2 code width, defaults to --bits1");
  sim->add_option("--group", s.group, "Group size")->capture_default_str();
  sim->add_flag("--symmetric", s.symmetric, "Symmetric INT quantization");
  sim->add_option("--chunk", s.chunk, "Chunk size in elements (0 = default)")->capture_default_str();
  sim->add_option("--rotation", s.rotation, "Hadamard block size applied before stage 1 (0 = off)")->capture_default_str();
  sim->add_option("--seed", s.seed, "Input seed")->capture_default_str();
  sim->add_option("--outlier-scale", s.outlier_scale, "Outlier channel multiplier of the inputs")->capture_default_str();
  sim->add_option("--dump-output", s.dump_output, "Write rank 0's result as raw float32");
  add_output(sim);

  CostArgs c;
  auto* cost = app.add_subcommand("cost", "Analytic cost and latency table across codecs");
  cost->add_option("--profile", c.profile, std::string("Topology profile name or JSON path (default $") + kProfileEnvVar +
                                               ", then L40-like)");
  cost->add_option("--ranks", c.ranks, "World size")->capture_default_str();
  cost->add_option("--volume-mb", c.volume_mb, "FP16 payload sizes in MiB")->capture_default_str();
  cost->add_option("--group", c.group, "Group size")->capture_default_str();
  add_output(cost);

  std::string manifest;
  auto* sweep = app.add_subcommand("sweep", "Run the experiments of a JSON manifest");
  sweep->add_option("manifest", manifest, "Manifest path")->required();
  add_output(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*quant) return cmd_quantize(q, out);
    if (*sim) return cmd_simulate(s, out);
    if (*cost) return cmd_cost(c, out);
    if (*sweep) return cmd_sweep(manifest, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
