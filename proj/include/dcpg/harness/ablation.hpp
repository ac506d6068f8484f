#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <sstream>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcpg/harness/train.hpp"

namespace dcpg {

// A named set of config overrides applied on top of the base config.
struct AblationCell {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct CellRun {
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalResult test;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

struct MeanSpread {
  double mean = 0.0;
  double std = 0.0;
};

struct CellSummary {
  std::string name;
  std::size_t runs = 0, failures = 0;
  std::map<std::string, MeanSpread> metrics;
  std::vector<std::string> errors;
};

struct AblationReport {
  std::vector<CellRun> runs;
  std::vector<CellSummary> cells;

  const CellSummary& cell(const std::string& name) const {
    for (const auto& c : cells) {
      if (c.name == name) return c;
    }
    throw std::out_of_range("no ablation cell named '" + name + "'");
  }

  std::string table() const;
  nlohmann::json to_json() const;
};

inline MeanSpread mean_spread(const std::vector<double>& xs) {
  MeanSpread m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

inline const std::vector<std::string>& ablation_metric_names() {
  static const std::vector<std::string> names{"i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10"};
  return names;
}

inline std::string AblationReport::table() const {
  const auto& names = ablation_metric_names();
  std::size_t width = 4;
  for (const auto& c : cells) width = std::max(width, c.name.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::string out = pad("cell", width) + "  runs";
  for (const auto& n : names) out += "  " + pad(n, 15);
  out += "\n";
  for (const auto& c : cells) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  %4zu", c.runs - c.failures);
    out += pad(c.name, width) + buf;
    for (const auto& n : names) {
      const auto it = c.metrics.find(n);
      if (it == c.metrics.end()) {
        out += "  " + pad("-", 15);
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.4f ± %.4f", it->second.mean, it->second.std);
      out += "  " + pad(buf, 16);
    }
    if (c.failures > 0) out += "  (" + std::to_string(c.failures) + " failed)";
    out += "\n";
  }
  return out;
}

inline nlohmann::json AblationReport::to_json() const {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json rec{{"cell", r.cell}, {"seed", r.seed}, {"ok", r.ok}, {"seconds", r.seconds}};
    if (r.ok) {
      rec["test"] = r.test.to_json();
      rec["best_epoch"] = r.best_epoch;
    } else {
      rec["error"] = r.error;
    }
    j["runs"].push_back(rec);
  }
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json rec{{"cell", c.name}, {"runs", c.runs}, {"failures", c.failures}};
    for (const auto& [n, ms] : c.metrics) rec[n] = {{"mean", ms.mean}, {"std", ms.std}};
    j["cells"].push_back(rec);
  }
  return j;
}

// Trains and tests one config on its own dataset; errors are captured.
inline CellRun run_cell(const ModelConfig& cfg, const std::string& name) {
  CellRun r;
  r.cell = name;
  r.seed = cfg.seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    const SyntheticDataset data = generate_dataset(DatasetSpec::from_config(cfg));
    Model m = Model::create(cfg);
    TrainResult tr = train(m, data);
    r.test = evaluate(m, data.test);
    r.best_epoch = tr.best_epoch;
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Every cell x seed combination, `jobs` at a time. The dataset seed is held
// fixed; the run seed varies.
inline AblationReport run_ablation(const ModelConfig& base, const std::vector<AblationCell>& cells,
                                   const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1,
                                   const std::function<void(const CellRun&)>& on_run = {}) {
  struct Job {
    std::size_t cell;
    ModelConfig cfg;
    std::string error;
  };
  std::vector<Job> work;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::uint64_t seed : seeds) {
      Job j{c, base, {}};
      try {
        for (const auto& [k, v] : cells[c].overrides) set_config_value(j.cfg, k, v);
        j.cfg.seed = seed;
        j.cfg.validate();
      } catch (const std::exception& e) {
        j.error = e.what();
      }
      j.cfg.seed = seed;
      work.push_back(std::move(j));
    }
  }

  AblationReport report;
  report.runs.resize(work.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      CellRun r;
      if (!work[i].error.empty()) {
        r.cell = cells[work[i].cell].name;
        r.seed = work[i].cfg.seed;
        r.error = work[i].error;
      } else {
        r = run_cell(work[i].cfg, cells[work[i].cell].name);
      }
      std::lock_guard lock(mu);
      report.runs[i] = r;
      if (on_run) on_run(r);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, work.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellSummary s;
    s.name = cells[c].name;
    std::map<std::string, std::vector<double>> values;
    for (std::size_t i = 0; i < work.size(); ++i) {
      if (work[i].cell != c) continue;
      const CellRun& r = report.runs[i];
      ++s.runs;
      if (!r.ok) {
        ++s.failures;
        s.errors.push_back(r.error);
        continue;
      }
      const auto j = r.test.to_json();
      for (const auto& n : ablation_metric_names()) values[n].push_back(j[n].get<double>());
    }
    for (const auto& [n, xs] : values) s.metrics[n] = mean_spread(xs);
    report.cells.push_back(std::move(s));
  }
  return report;
}

// Parses "name: key=value, key=value" lines; blank lines and # comments skipped.
inline std::vector<AblationCell> parse_ablation_grid(const std::string& text) {
  std::vector<AblationCell> cells;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("grid line " + std::to_string(lineno) + ": expected 'name: key=value, ...'");
    }
    AblationCell cell{trim(line.substr(0, colon)), {}};
    std::istringstream rest(line.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("grid line " + std::to_string(lineno) + ": '" + item + "' is not key=value");
      }
      cell.overrides.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
    if (cell.name.empty()) throw ConfigError("grid line " + std::to_string(lineno) + ": empty cell name");
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw ConfigError("ablation grid has no cells");
  return cells;
}

// Ablation axes of the reference study.
inline std::vector<AblationCell> default_ablation_grid() {
  return {
      {"baseline", {{"pg", "off"}}},
      {"discrete_pg", {{"pg", "discrete"}}},
      {"continuous_pg", {{"pg", "continuous"}}},
      {"compound_pg", {{"pg", "compound"}}},
      {"reward_r1", {{"reward", "r1"}}},
      {"reward_ap", {{"reward", "ap"}}},
      {"reward_r1_ap", {{"reward", "r1+ap"}}},
      {"lambda_10", {{"lambda", "10"}}},
      {"lambda_30", {{"lambda", "30"}}},
      {"no_pg_baseline", {{"pg_baseline", "false"}}},
      {"multi_head", {{"heads", "2"}}},
  };
}

}  // namespace dcpg
