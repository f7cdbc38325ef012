/*
 * Copyright (c) The arkv authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "arkv/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "arkv/error.hpp"
#include "arkv/weights_io.hpp"

namespace arkv {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(std::string("unknown field '") + key + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

ModelConfig parse_model(const json& j) {
  reject_unknown(j,
                 {"n_layers", "n_query_heads", "n_kv_heads", "d_model", "d_head", "vocab_size",
                  "max_seq_len", "rng_seed", "d_ff", "attn_gain", "sink_bias"},
                 "model");
  ModelConfig m;
  read_field(j, "n_layers", m.n_layers);
  read_field(j, "n_query_heads", m.n_query_heads);
  read_field(j, "n_kv_heads", m.n_kv_heads);
  read_field(j, "d_model", m.d_model);
  read_field(j, "d_head", m.d_head);
  read_field(j, "vocab_size", m.vocab_size);
  read_field(j, "max_seq_len", m.max_seq_len);
  read_field(j, "rng_seed", m.rng_seed);
  read_field(j, "d_ff", m.d_ff);
  read_field(j, "attn_gain", m.attn_gain);
  read_field(j, "sink_bias", m.sink_bias);
  m.validate();
  return m;
}

StrategyConfig parse_strategy(const json& j) {
  reject_unknown(j,
                 {"kind", "budget", "window", "oq_config", "gamma", "alpha", "beta",
                  "budget_formula"},
                 "strategy");
  StrategyConfig s;
  std::string kind = "arkv";
  read_field(j, "kind", kind);
  s.kind = parse_strategy_kind(kind);
  read_field(j, "budget", s.budget);
  read_field(j, "window", s.window);
  s.oq.window = static_cast<int>(s.window);
  if (j.contains("oq_config")) {
    const json& oq = j.at("oq_config");
    reject_unknown(oq, {"tau1", "tau2", "tau3", "window"}, "oq_config");
    read_field(oq, "tau1", s.oq.tau1);
    read_field(oq, "tau2", s.oq.tau2);
    read_field(oq, "tau3", s.oq.tau3);
    read_field(oq, "window", s.oq.window);
  }
  read_field(j, "gamma", s.gamma);
  read_field(j, "alpha", s.alpha);
  read_field(j, "beta", s.beta);
  std::string formula = "window_reserved";
  read_field(j, "budget_formula", formula);
  if (formula == "window_reserved") {
    s.budget_formula = BudgetFormula::kWindowReserved;
  } else if (formula == "proportional") {
    s.budget_formula = BudgetFormula::kProportional;
  } else {
    throw ConfigError("budget_formula must be 'window_reserved' or 'proportional'");
  }
  s.validate();
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string budget_label(const StrategyRun& r) {
  return r.strategy.kind == StrategyKind::kBase ? "-" : std::to_string(r.strategy.budget);
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw TraceError("cannot write " + p.string());
  os << text;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  reject_unknown(j, {"model", "strategy", "strategies", "workload", "report", "weights", "exec"},
                 "config");
  RunConfig cfg;
  if (j.contains("model")) cfg.model = parse_model(j.at("model"));

  if (j.contains("strategy") == j.contains("strategies")) {
    throw ConfigError("config needs exactly one of 'strategy' or 'strategies'");
  }
  if (j.contains("strategy")) {
    cfg.strategies.push_back(parse_strategy(j.at("strategy")));
  } else {
    const json& list = j.at("strategies");
    if (!list.is_array() || list.empty()) throw ConfigError("'strategies' must be a non-empty array");
    for (const json& s : list) cfg.strategies.push_back(parse_strategy(s));
  }

  if (!j.contains("workload")) throw ConfigError("config has no workload");
  const json& w = j.at("workload");
  reject_unknown(w, {"synthetic", "trace"}, "workload");
  if (w.contains("synthetic") == w.contains("trace")) {
    throw ConfigError("workload needs exactly one of 'synthetic' or 'trace'");
  }
  if (w.contains("synthetic")) {
    const json& s = w.at("synthetic");
    reject_unknown(s, {"seed", "prompt_len", "gen_len"}, "synthetic workload");
    if (!s.contains("seed")) throw ConfigError("synthetic workload needs an explicit seed");
    SyntheticWorkload sw;
    read_field(s, "seed", sw.seed);
    read_field(s, "prompt_len", sw.prompt_len);
    read_field(s, "gen_len", sw.gen_len);
    if (sw.prompt_len < 1 || sw.gen_len < 0) throw ConfigError("invalid workload lengths");
    cfg.workload = sw;
  } else {
    TraceWorkload tw;
    read_field(w, "trace", tw.path);
    cfg.workload = tw;
  }

  if (j.contains("report")) {
    reject_unknown(j.at("report"), {"output_dir"}, "report");
    read_field(j.at("report"), "output_dir", cfg.report.output_dir);
  }
  if (j.contains("weights")) {
    std::string p;
    read_field(j, "weights", p);
    cfg.weights_path = p;
  }
  if (j.contains("exec")) {
    std::string e;
    read_field(j, "exec", e);
    if (e == "serial") {
      cfg.exec = kernels::Exec::kSerial;
    } else if (e == "parallel") {
      cfg.exec = kernels::Exec::kParallel;
    } else {
      throw ConfigError("exec must be 'serial' or 'parallel'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::vector<int> synthetic_prompt(const SyntheticWorkload& w, int vocab_size) {
  std::mt19937_64 rng(w.seed);
  std::uniform_int_distribution<int> dist(0, vocab_size - 1);
  std::vector<int> out(static_cast<std::size_t>(w.prompt_len));
  for (int& t : out) t = dist(rng);
  return out;
}

RunOutcome run(const RunConfig& cfg, bool pair_with_base) {
  const auto* synthetic = std::get_if<SyntheticWorkload>(&cfg.workload);
  if (!synthetic) throw ConfigError("run needs a synthetic workload; use replay for traces");

  const Model model = cfg.weights_path ? load_model(*cfg.weights_path) : Model(cfg.model);
  const auto prompt = synthetic_prompt(*synthetic, model.config().vocab_size);
  if (synthetic->prompt_len + synthetic->gen_len > model.config().max_seq_len) {
    throw LengthError("workload longer than max_seq_len");
  }

  RunOutcome out;
  out.model = model.config();
  out.prompt_len = static_cast<std::int64_t>(prompt.size());

  std::vector<StrategyConfig> strategies = cfg.strategies;
  const auto is_base = [](const StrategyConfig& s) { return s.kind == StrategyKind::kBase; };
  const auto base_it = std::find_if(strategies.begin(), strategies.end(), is_base);
  const bool paired = pair_with_base || base_it != strategies.end();

  if (!paired) {
    for (const auto& s : strategies) {
      GenerateOptions opts;
      opts.exec = cfg.exec;
      Generation g = generate(model, prompt, synthetic->gen_len, s, opts);
      out.runs.push_back({s, std::move(g.tokens), std::move(g.report)});
    }
    return out;
  }

  StrategyConfig base_cfg;
  base_cfg.kind = StrategyKind::kBase;
  if (base_it != strategies.end()) {
    base_cfg = *base_it;
    strategies.erase(base_it);
  } else if (!strategies.empty()) {
    base_cfg.window = strategies.front().window;
    base_cfg.oq = strategies.front().oq;
  }
  GenerateOptions opts;
  opts.exec = cfg.exec;
  opts.keep_logits = true;
  Generation base = generate(model, prompt, synthetic->gen_len, base_cfg, opts);
  out.runs.push_back({base_cfg, base.tokens, base.report});
  for (const auto& s : strategies) {
    if (is_base(s)) continue;
    Generation g = paired_run(model, prompt, base, s, cfg.exec);
    out.runs.push_back({s, std::move(g.tokens), std::move(g.report)});
  }
  return out;
}

std::string steps_csv(const RunOutcome& outcome) {
  std::ostringstream os;
  os << "strategy,budget,step,seq_len,n_original,n_quantized,n_evicted,max_layer_usage,bytes,"
        "tailored_layers,quant_ratio_pct,evict_ratio_pct\n";
  for (const auto& r : outcome.runs) {
    for (const StepRecord& s : r.report.steps) {
      os << to_string(r.strategy.kind) << ',' << budget_label(r) << ',' << s.step << ','
         << s.seq_len << ',' << s.n_original << ',' << s.n_quantized << ',' << s.n_evicted << ','
         << fixed(static_cast<double>(s.max_layer_usage_half) / 2.0, 1) << ',' << s.bytes << ','
         << s.tailored_layers << ',' << fixed(s.quant_ratio_pct, 4) << ','
         << fixed(s.evict_ratio_pct, 4) << '\n';
    }
  }
  return os.str();
}

std::string summary_json(const RunOutcome& outcome) {
  json j;
  const ModelConfig& m = outcome.model;
  j["model"] = {{"n_layers", m.n_layers},       {"n_query_heads", m.n_query_heads},
                {"n_kv_heads", m.n_kv_heads},   {"d_model", m.d_model},
                {"d_head", m.d_head},           {"vocab_size", m.vocab_size},
                {"max_seq_len", m.max_seq_len}, {"rng_seed", m.rng_seed},
                {"d_ff", m.ffn_dim()},          {"attn_gain", m.attn_gain},
                {"sink_bias", m.sink_bias}};
  j["prompt_len"] = outcome.prompt_len;
  json runs = json::array();
  for (const auto& r : outcome.runs) {
    const DecodeReport& rep = r.report;
    json e;
    e["kind"] = std::string(to_string(r.strategy.kind));
    if (r.strategy.kind != StrategyKind::kBase) {
      e["budget"] = r.strategy.budget;
      e["alpha"] = r.strategy.alpha;
      e["gamma"] = r.strategy.gamma;
      e["beta"] = r.strategy.beta;
      e["oq_config"] = {{"tau1", r.strategy.oq.tau1},
                        {"tau2", r.strategy.oq.tau2},
                        {"tau3", r.strategy.oq.tau3},
                        {"window", r.strategy.oq.window}};
    }
    e["window"] = r.strategy.window;
    e["generated"] = rep.generated;
    e["ratios"] = rep.ratios;
    e["mean_quant_ratio_pct"] = rep.mean_quant_ratio_pct;
    e["final_quant_ratio_pct"] = rep.final_quant_ratio_pct;
    e["final_evict_ratio_pct"] = rep.final_evict_ratio_pct;
    e["tailor_events"] = rep.tailor_events;
    e["tokens"] = r.tokens;
    if (rep.fidelity) {
      e["fidelity"] = {{"max_abs_logit_delta", rep.fidelity->max_abs_logit_delta},
                       {"mean_kl", rep.fidelity->mean_kl},
                       {"top1_agreement", rep.fidelity->top1_agreement},
                       {"steps", rep.fidelity->steps}};
    }
    runs.push_back(std::move(e));
  }
  j["runs"] = std::move(runs);
  return j.dump(2) + "\n";
}

std::string timing_csv(const RunOutcome& outcome) {
  std::ostringstream os;
  os << "strategy,budget,prefill_seconds,decode_seconds,decode_steps,tokens_per_second,"
        "relative_tps\n";
  for (const auto& r : outcome.runs) {
    const Timing& t = r.report.timing;
    os << to_string(r.strategy.kind) << ',' << budget_label(r) << ',' << fmt(t.prefill_seconds)
       << ',' << fmt(t.decode_seconds) << ',' << t.decode_steps << ','
       << fmt(t.tokens_per_second()) << ','
       << (r.report.relative_tps ? fmt(*r.report.relative_tps) : std::string()) << '\n';
  }
  return os.str();
}

std::string summary_text(const RunOutcome& outcome) {
  std::ostringstream os;
  const ModelConfig& m = outcome.model;
  os << "model: L=" << m.n_layers << " H=" << m.n_query_heads << " G=" << m.n_kv_heads
     << " d_model=" << m.d_model << " d_head=" << m.d_head << " vocab=" << m.vocab_size
     << " seed=" << m.rng_seed << "\n";
  os << "prompt: " << outcome.prompt_len << " tokens\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %7s %9s %9s %9s %11s %10s %8s\n", "strategy", "budget",
                "quant%", "evict%", "tps", "rel_tps", "mean_kl", "top1");
  os << line;
  for (const auto& r : outcome.runs) {
    const DecodeReport& rep = r.report;
    const std::string rel = rep.relative_tps ? fixed(*rep.relative_tps, 3) : "-";
    const std::string kl = rep.fidelity ? fmt(rep.fidelity->mean_kl) : "-";
    const std::string top1 = rep.fidelity ? fixed(rep.fidelity->top1_agreement, 3) : "-";
    std::snprintf(line, sizeof line, "%-12s %7s %9.2f %9.2f %9.1f %11s %10s %8s\n",
                  std::string(to_string(r.strategy.kind)).c_str(), budget_label(r).c_str(),
                  rep.mean_quant_ratio_pct, rep.final_evict_ratio_pct,
                  rep.timing.tokens_per_second(), rel.c_str(), kl.c_str(), top1.c_str());
    os << line;
  }
  for (const auto& r : outcome.runs) {
    if (r.report.ratios.empty()) continue;
    os << "\nrho[" << to_string(r.strategy.kind) << "]:";
    for (double v : r.report.ratios) os << ' ' << fixed(v, 4);
  }
  os << "\n";
  return os.str();
}

void write_reports(const RunOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "summary.txt", summary_text(outcome));
  write_file(dir / "summary.json", summary_json(outcome));
  write_file(dir / "steps.csv", steps_csv(outcome));
  write_file(dir / "timing.csv", timing_csv(outcome));
}

void write_replay_report(const ReplayResult& result, const StrategyConfig& strategy,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "layer,step,keys,triggered,n_original,n_quantized,n_evicted\n";
  json steps = json::array();
  for (const ReplayStep& s : result.steps) {
    const StateCounts c = count_states(s.plan);
    csv << s.layer_id << ',' << s.step << ',' << s.keys << ',' << (s.triggered ? 1 : 0) << ','
        << c.n_original << ',' << c.n_quantized << ',' << c.n_evicted << '\n';
    json e = {{"layer", s.layer_id}, {"step", s.step}, {"keys", s.keys}, {"triggered", s.triggered}};
    if (s.triggered) {
      e["originals"] = s.plan.originals;
      e["quantize"] = s.plan.quantize;
      e["evict"] = s.plan.evict;
    }
    steps.push_back(std::move(e));
  }
  json j;
  j["kind"] = std::string(to_string(strategy.kind));
  j["budget"] = strategy.budget;
  j["window"] = strategy.window;
  j["ratios"] = result.ratios;
  json budgets = json::array();
  for (const LayerBudget& b : result.budgets) {
    budgets.push_back({{"original_quota", b.original_quota}, {"quant_quota", b.quant_quota}});
  }
  if (strategy.kind != StrategyKind::kBase) j["budgets"] = std::move(budgets);
  j["steps"] = std::move(steps);
  write_file(dir / "plans.csv", csv.str());
  write_file(dir / "replay.json", j.dump(2) + "\n");
}

}  // namespace arkv
