#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dcpg/harness/ablation.hpp"
#include "dcpg/harness/dataset.hpp"
#include "dcpg/harness/model.hpp"
#include "dcpg/harness/train.hpp"
#include "dcpg/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dcpg;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kDataEnv = "DCPG_DATA_DIR";

enum Exit { kOk = 0, kUserError = 1, kInternal = 2, kVerifyFailed = 3 };

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Config sources in increasing precedence: defaults, --config file, per-key flags.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : config_key_names()) {
      cmd->add_option("--" + key, values[key], "config key '" + key + "'");
    }
  }

  ModelConfig resolve(CLI::App* cmd) const {
    ModelConfig cfg;
    if (!file.empty()) cfg = load_config_file(file);
    for (const auto& [key, value] : values) {
      if (cmd->count("--" + key) > 0) set_config_value(cfg, key, value);
    }
    cfg.validate();
    return cfg;
  }

  bool given(CLI::App* cmd, const std::string& key) const { return cmd->count("--" + key) > 0; }
};

fs::path data_dir_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataEnv); env && *env) return env;
  throw UserError(std::string("no dataset directory: pass --data or set ") + kDataEnv);
}

// The dataset on disk is authoritative for data-shape keys.
void adopt_dataset_spec(ModelConfig& cfg, const DatasetSpec& s) {
  cfg.classes = s.classes;
  cfg.regions = s.regions;
  cfg.tokens = s.tokens;
  cfg.region_dim = s.dim;
  cfg.vocab = s.vocab;
  cfg.noise = s.noise;
  cfg.data_seed = s.seed;
  cfg.train_per_class = s.train_per_class;
  cfg.val_per_class = s.val_per_class;
  cfg.test_per_class = s.test_per_class;
}

SyntheticDataset open_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw UserError("dataset not found: " + (dir / "manifest.json").string());
  return load_dataset(dir);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::string recall_table(const EvalResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "direction       R@1     R@5     R@10\n"
                "image->text  %7.4f %7.4f %7.4f\n"
                "text->image  %7.4f %7.4f %7.4f\n",
                r.i2t_r1, r.i2t_r5, r.i2t_r10, r.t2i_r1, r.t2i_r5, r.t2i_r10);
  return buf;
}

// ---- gen ------------------------------------------------------------------

int cmd_gen(CLI::App* cmd, const ConfigFlags& flags, const std::string& out, bool force) {
  ModelConfig cfg = flags.resolve(cmd);
  // --seed on gen names the generator seed.
  if (flags.given(cmd, "seed") && !flags.given(cmd, "data_seed")) cfg.data_seed = cfg.seed;
  const fs::path dir = data_dir_or_env(out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UserError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  const SyntheticDataset ds = generate_dataset(DatasetSpec::from_config(cfg));
  save_dataset(ds, dir);
  std::cout << "wrote " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
            << " train/val/test instances to " << dir.string() << " (seed " << ds.spec.seed << ")\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(CLI::App* cmd, const ConfigFlags& flags, const std::string& data_flag, const std::string& out_flag,
              bool quiet) {
  ModelConfig cfg = flags.resolve(cmd);
  const fs::path data_dir = data_dir_or_env(data_flag);
  const SyntheticDataset ds = open_dataset(data_dir);
  adopt_dataset_spec(cfg, ds.spec);
  cfg.validate();

  const fs::path out = out_flag;
  fs::create_directories(out);
  const fs::path metrics = out / "metrics.jsonl", best = out / "best.ckpt", final_ckpt = out / "final.ckpt",
                 manifest_path = out / "manifest.json";
  {
    std::ofstream cfg_out(out / "config.cfg");
    cfg_out << config_to_text(cfg);
  }
  json manifest;
  manifest["tool"] = "dcpg";
  manifest["version"] = kVersion;
  manifest["created"] = utc_now();
  manifest["config"] = config_to_map(cfg);
  manifest["dataset"] = {{"dir", fs::absolute(data_dir).string()}, {"fingerprint", dataset_fingerprint(data_dir)}};
  manifest["artifacts"] = {{"metrics", metrics.string()},
                           {"best_checkpoint", best.string()},
                           {"final_checkpoint", final_ckpt.string()},
                           {"config", (out / "config.cfg").string()}};
  write_json(manifest_path, manifest);

  std::ofstream log(metrics);
  if (!log) throw UserError("cannot write " + metrics.string());
  TrainHooks hooks;
  hooks.on_record = [&](const json& rec) {
    log << rec.dump() << "\n";
    log.flush();
    if (!quiet && rec.value("kind", "") == "eval") {
      std::cout << "epoch " << rec["epoch"] << "  val R@1 i2t " << rec["i2t_r1"] << "  t2i " << rec["t2i_r1"] << "\n";
    }
  };

  Model m = Model::create(cfg);
  TrainResult result;
  try {
    result = train(m, ds, hooks);
  } catch (const TrainingDiverged& e) {
    log << json{{"kind", "abort"}, {"epoch", e.epoch()}, {"step", e.step()}, {"error", e.what()}}.dump() << "\n";
    throw;
  }
  {
    Model fin = Model::create(cfg);
    result.final_params.restore(fin);
    save_checkpoint(fin, final_ckpt);
  }
  save_checkpoint(m, best);
  const EvalResult test = evaluate(m, ds.test);
  json rec = test.to_json();
  rec["kind"] = "eval";
  rec["split"] = "test";
  rec["checkpoint"] = "best";
  rec["epoch"] = result.best_epoch;
  log << rec.dump() << "\n";

  manifest["completed"] = utc_now();
  manifest["best_epoch"] = result.best_epoch;
  write_json(manifest_path, manifest);
  std::cout << "best epoch " << result.best_epoch << "; test retrieval of best checkpoint:\n" << recall_table(test);
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data_flag, const std::string& split, bool json_only) {
  if (!fs::exists(ckpt)) throw UserError("checkpoint not found: " + ckpt);
  const fs::path data_dir = data_dir_or_env(data_flag);
  const SyntheticDataset ds = open_dataset(data_dir);
  const Model m = load_checkpoint(ckpt);
  const Split& s = ds.split(split);
  if (s.dim() != m.config.region_dim || s.regions != m.config.regions || s.length() != m.config.tokens ||
      ds.spec.vocab != m.config.vocab) {
    throw UserError("checkpoint expects regions " + std::to_string(m.config.regions) + "x" +
                    std::to_string(m.config.region_dim) + ", tokens " + std::to_string(m.config.tokens) + ", vocab " +
                    std::to_string(m.config.vocab) + "; dataset has " + std::to_string(s.regions) + "x" +
                    std::to_string(s.dim()) + ", " + std::to_string(s.length()) + ", " + std::to_string(ds.spec.vocab));
  }
  const EvalResult r = evaluate(m, s);
  json rec = r.to_json();
  rec["kind"] = "eval";
  rec["split"] = split;
  if (!json_only) std::cout << recall_table(r);
  std::cout << rec.dump() << "\n";
  return kOk;
}

// ---- ablate ---------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UserError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (seeds.empty()) throw UserError("--seeds: no seeds given");
  return seeds;
}

int cmd_ablate(CLI::App* cmd, const ConfigFlags& flags, const std::string& grid_file, const std::string& seeds_text,
               std::size_t jobs, const std::string& out) {
  const ModelConfig base = flags.resolve(cmd);
  std::vector<AblationCell> cells = default_ablation_grid();
  if (!grid_file.empty()) {
    std::ifstream in(grid_file);
    if (!in) throw UserError("cannot read grid file " + grid_file);
    std::stringstream buf;
    buf << in.rdbuf();
    cells = parse_ablation_grid(buf.str());
  }
  for (const auto& c : cells) {
    ModelConfig probe = base;
    for (const auto& [k, v] : c.overrides) set_config_value(probe, k, v);
  }
  const auto seeds = parse_seeds(seeds_text);
  const AblationReport report = run_ablation(base, cells, seeds, jobs, [](const CellRun& r) {
    std::cerr << r.cell << " seed " << r.seed << (r.ok ? " done" : " FAILED: " + r.error) << " (" << r.seconds << " s)\n";
  });
  std::cout << report.table();
  if (!out.empty()) {
    json j = report.to_json();
    j["base_config"] = config_to_map(base);
    j["seeds"] = seeds;
    write_json(out, j);
  }
  return kOk;
}

// ---- verify ---------------------------------------------------------------

int cmd_verify(std::vector<std::string> suites) {
  if (suites.empty()) suites = {"all"};
  for (const auto& s : suites) {
    if (s != "all") {
      try {
        verify_suite(s);
      } catch (const std::invalid_argument& e) {
        throw UserError(e.what());
      }
    }
  }
  std::size_t failed = 0;
  const auto results = run_verify(suites, [&](const CheckResult& r) {
    std::printf("%-4s  %-13s %-40s %8.3f s  %s\n", r.passed ? "ok" : "FAIL", r.suite.c_str(), r.name.c_str(), r.seconds,
                r.detail.c_str());
    std::fflush(stdout);
    if (!r.passed) ++failed;
  });
  std::printf("%zu checks, %zu failed\n", results.size(), failed);
  return failed == 0 ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-continuous policy-gradient attention for image-text matching"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  ConfigFlags gen_flags, train_flags, ablate_flags;

  auto* gen = app.add_subcommand("gen", "generate a synthetic paired dataset");
  std::string gen_out;
  bool force = false;
  gen->add_option("--out", gen_out, std::string("output directory (default $") + kDataEnv + ")");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  gen_flags.attach(gen);

  auto* tr = app.add_subcommand("train", "train a model and write checkpoints plus a metric log");
  std::string train_data, train_out = "run";
  bool quiet = false;
  tr->add_option("--data", train_data, std::string("dataset directory (default $") + kDataEnv + ")");
  tr->add_option("--out", train_out, "run directory")->capture_default_str();
  tr->add_flag("--quiet", quiet, "no per-epoch progress");
  train_flags.attach(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string ckpt, eval_data, split = "test";
  bool json_only = false;
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, std::string("dataset directory (default $") + kDataEnv + ")");
  ev->add_option("--split", split, "train, val or test")->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--json", json_only, "print only the machine-readable record");

  auto* ab = app.add_subcommand("ablate", "run an ablation grid over several seeds");
  std::string grid_file, seeds_text = "1,2,3,4,5", ablate_out;
  std::size_t jobs = 1;
  ab->add_option("--grid", grid_file, "grid file of 'name: key=value, ...' lines")->check(CLI::ExistingFile);
  ab->add_option("--seeds", seeds_text, "comma-separated run seeds")->capture_default_str();
  ab->add_option("--jobs", jobs, "parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
  ab->add_option("--json-out", ablate_out, "write machine-readable records here");
  ablate_flags.attach(ab);

  auto* ver = app.add_subcommand("verify", "run verification suites");
  std::vector<std::string> suites;
  ver->add_option("suites", suites, "gradcheck, distributions, metrics, bandit, baseline or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (*gen) return cmd_gen(gen, gen_flags, gen_out, force);
    if (*tr) return cmd_train(tr, train_flags, train_data, train_out, quiet);
    if (*ev) return cmd_eval(ckpt, eval_data, split, json_only);
    if (*ab) return cmd_ablate(ab, ablate_flags, grid_file, seeds_text, jobs, ablate_out);
    if (*ver) return cmd_verify(suites);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training aborted: " << e.what() << "\n";
    return kInternal;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}
