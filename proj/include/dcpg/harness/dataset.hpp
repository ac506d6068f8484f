#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcpg/autodiff/tensor.hpp"
#include "dcpg/distributions.hpp"
#include "dcpg/harness/config.hpp"

namespace dcpg {

struct DatasetSpec {
  std::size_t classes = 32;
  std::size_t regions = 8;
  std::size_t tokens = 6;
  std::size_t dim = 64;
  std::size_t vocab = 64;
  std::size_t latent = 16;
  double noise = 0.1;
  std::uint64_t seed = 7;
  std::size_t train_per_class = 8;
  std::size_t val_per_class = 1;
  std::size_t test_per_class = 1;

  static DatasetSpec from_config(const ModelConfig& c) {
    DatasetSpec s;
    s.classes = c.classes;
    s.regions = c.regions;
    s.tokens = c.tokens;
    s.dim = c.region_dim;
    s.vocab = c.vocab;
    s.noise = c.noise;
    s.seed = c.data_seed;
    s.train_per_class = c.train_per_class;
    s.val_per_class = c.val_per_class;
    s.test_per_class = c.test_per_class;
    return s;
  }
};

// Paired instances of one split. Instance i owns region rows
// [i * regions, (i + 1) * regions) and token sequence tokens[i].
struct Split {
  std::size_t regions = 0;
  Tensor features;  // (count * regions) x dim
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t length() const { return tokens.empty() ? 0 : tokens.front().size(); }
};

struct SyntheticDataset {
  DatasetSpec spec;
  Tensor prototypes;                                // classes x dim
  std::vector<std::vector<std::size_t>> patterns;  // classes x tokens
  Split train, val, test;

  const Split& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
  }
};

// Each class draws a latent vector. Its image prototype is a fixed linear map
// of the latent and its token pattern takes, per position, the vocabulary
// entry with the largest score under a position-specific map. Instances add
// Gaussian noise (scale `noise`) to every region and replace each token with
// a random distractor with probability min(noise, 0.5).
inline SyntheticDataset generate_dataset(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("generate_dataset: classes must be >= 2, got " + std::to_string(spec.classes));
  if (spec.regions < 1 || spec.tokens < 1 || spec.dim < 1 || spec.vocab < 2 || spec.latent < 1) {
    throw ConfigError("generate_dataset: degenerate sizes");
  }
  if (spec.noise < 0.0) throw ConfigError("generate_dataset: noise must be >= 0");
  Rng rng(spec.seed);
  SyntheticDataset ds;
  ds.spec = spec;

  Tensor latents = standard_normal_noise(Shape{spec.classes, spec.latent}, rng);
  Tensor image_map = standard_normal_noise(Shape{spec.latent, spec.dim}, rng);
  std::vector<Tensor> token_maps;
  for (std::size_t i = 0; i < spec.tokens; ++i) token_maps.push_back(standard_normal_noise(Shape{spec.latent, spec.vocab}, rng));

  const double inv_sqrt_latent = 1.0 / std::sqrt(static_cast<double>(spec.latent));
  ds.prototypes = Tensor(Shape{spec.classes, spec.dim});
  ds.patterns.assign(spec.classes, std::vector<std::size_t>(spec.tokens));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.dim; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < spec.latent; ++l) s += latents.at(c, l) * image_map.at(l, j);
      ds.prototypes.at(c, j) = s * inv_sqrt_latent;
    }
    for (std::size_t i = 0; i < spec.tokens; ++i) {
      std::vector<double> scores(spec.vocab, 0.0);
      for (std::size_t v = 0; v < spec.vocab; ++v)
        for (std::size_t l = 0; l < spec.latent; ++l) scores[v] += latents.at(c, l) * token_maps[i].at(l, v);
      ds.patterns[c][i] = argmax(scores);
    }
  }

  const double swap_prob = std::min(spec.noise, 0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_token(0, spec.vocab - 1);
  auto make_split = [&](std::size_t per_class) {
    Split s;
    s.regions = spec.regions;
    const std::size_t count = per_class * spec.classes;
    s.features = Tensor(Shape{count * spec.regions, spec.dim});
    for (std::size_t r = 0; r < per_class; ++r) {
      for (std::size_t c = 0; c < spec.classes; ++c) {
        const std::size_t inst = s.labels.size();
        for (std::size_t t = 0; t < spec.regions; ++t)
          for (std::size_t j = 0; j < spec.dim; ++j) {
            const double eps = spec.noise > 0.0 ? standard_normal(rng) : 0.0;
            s.features.at(inst * spec.regions + t, j) = ds.prototypes.at(c, j) + spec.noise * eps;
          }
        std::vector<std::size_t> seq = ds.patterns[c];
        if (swap_prob > 0.0) {
          for (auto& tok : seq) {
            if (unit(rng) < swap_prob) tok = any_token(rng);
          }
        }
        s.tokens.push_back(std::move(seq));
        s.labels.push_back(c);
      }
    }
    return s;
  };
  ds.train = make_split(spec.train_per_class);
  ds.val = make_split(spec.val_per_class);
  ds.test = make_split(spec.test_per_class);
  return ds;
}

// ---- binary matrix files -------------------------------------------------
// Layout: u32 rows, u32 cols (little-endian), then rows * cols IEEE-754
// binary64 values, little-endian, row-major.

namespace io {

template <class T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const std::string& what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw std::runtime_error(what + ": truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_matrix(std::ostream& out, const Tensor& t) {
  if (t.rows() > std::numeric_limits<std::uint32_t>::max() || t.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::runtime_error("write_matrix: extent exceeds 32 bits");
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  for (double v : t.values()) put_le<double>(out, v);
}

inline Tensor read_matrix(std::istream& in, const std::string& what) {
  const auto rows = get_le<std::uint32_t>(in, what);
  const auto cols = get_le<std::uint32_t>(in, what);
  if (rows == 0 || cols == 0) throw std::runtime_error(what + ": zero extent");
  Tensor t(Shape{rows, cols});
  for (auto& v : t.values()) v = get_le<double>(in, what);
  return t;
}

inline void write_matrix_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_matrix(out, t);
}

inline Tensor read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_matrix(in, path.string());
}

// FNV-1a over the given bytes, continuing from `hash`.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace io

inline Tensor tokens_matrix(const Split& s) {
  Tensor t(Shape{s.size(), s.length()});
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.length(); ++j) t.at(i, j) = static_cast<double>(s.tokens[i][j]);
  return t;
}

inline Tensor labels_matrix(const Split& s) {
  Tensor t(Shape{s.size(), 1});
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = static_cast<double>(s.labels[i]);
  return t;
}

inline std::vector<std::string> dataset_files() {
  std::vector<std::string> files;
  for (const char* split : {"train", "val", "test"})
    for (const char* part : {"regions", "tokens", "labels"}) files.push_back(std::string(split) + "." + part + ".bin");
  files.push_back("prototypes.bin");
  return files;
}

inline std::string dataset_fingerprint(const std::filesystem::path& dir) {
  std::uint64_t h = io::fnv1a("");
  for (const auto& name : dataset_files()) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw std::runtime_error("dataset_fingerprint: missing " + (dir / name).string());
    std::stringstream buf;
    buf << in.rdbuf();
    h = io::fnv1a(name, h);
    h = io::fnv1a(buf.str(), h);
  }
  return io::hex64(h);
}

inline nlohmann::json dataset_manifest(const SyntheticDataset& ds) {
  const auto& s = ds.spec;
  nlohmann::json m;
  m["format"] = "dcpg-dataset/1";
  m["classes"] = s.classes;
  m["regions"] = s.regions;
  m["tokens"] = s.tokens;
  m["dim"] = s.dim;
  m["vocab"] = s.vocab;
  m["latent"] = s.latent;
  m["noise"] = s.noise;
  m["seed"] = s.seed;
  m["instances"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
  m["per_class"] = {{"train", s.train_per_class}, {"val", s.val_per_class}, {"test", s.test_per_class}};
  m["layout"] = "u32 rows, u32 cols, rows*cols f64; little-endian, row-major";
  return m;
}

inline void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const char* name : {"train", "val", "test"}) {
    const Split& s = ds.split(name);
    io::write_matrix_file(dir / (std::string(name) + ".regions.bin"), s.features);
    io::write_matrix_file(dir / (std::string(name) + ".tokens.bin"), tokens_matrix(s));
    io::write_matrix_file(dir / (std::string(name) + ".labels.bin"), labels_matrix(s));
  }
  io::write_matrix_file(dir / "prototypes.bin", ds.prototypes);
  nlohmann::json m = dataset_manifest(ds);
  m["fingerprint"] = dataset_fingerprint(dir);
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << "\n";
}

inline SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_dataset: no manifest.json in " + dir.string());
  nlohmann::json m;
  in >> m;
  if (m.value("format", "") != "dcpg-dataset/1") throw std::runtime_error("load_dataset: unsupported manifest format");
  SyntheticDataset ds;
  auto& s = ds.spec;
  s.classes = m.at("classes");
  s.regions = m.at("regions");
  s.tokens = m.at("tokens");
  s.dim = m.at("dim");
  s.vocab = m.at("vocab");
  s.latent = m.at("latent");
  s.noise = m.at("noise");
  s.seed = m.at("seed");
  s.train_per_class = m.at("per_class").at("train");
  s.val_per_class = m.at("per_class").at("val");
  s.test_per_class = m.at("per_class").at("test");
  auto read_split = [&](const std::string& name) {
    Split sp;
    sp.regions = s.regions;
    sp.features = io::read_matrix_file(dir / (name + ".regions.bin"));
    const Tensor tok = io::read_matrix_file(dir / (name + ".tokens.bin"));
    const Tensor lab = io::read_matrix_file(dir / (name + ".labels.bin"));
    const std::size_t count = lab.rows();
    if (tok.rows() != count || sp.features.rows() != count * s.regions || sp.features.cols() != s.dim ||
        tok.cols() != s.tokens) {
      throw std::runtime_error("load_dataset: split '" + name + "' does not match its manifest");
    }
    for (std::size_t i = 0; i < count; ++i) {
      sp.labels.push_back(static_cast<std::size_t>(lab[i]));
      std::vector<std::size_t> seq;
      for (std::size_t j = 0; j < tok.cols(); ++j) seq.push_back(static_cast<std::size_t>(tok.at(i, j)));
      sp.tokens.push_back(std::move(seq));
    }
    return sp;
  };
  ds.train = read_split("train");
  ds.val = read_split("val");
  ds.test = read_split("test");
  ds.prototypes = io::read_matrix_file(dir / "prototypes.bin");
  ds.patterns.assign(s.classes, {});
  return ds;
}

}  // namespace dcpg
