#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dcpg/autodiff/ops.hpp"
#include "dcpg/encoders.hpp"
#include "dcpg/harness/config.hpp"
#include "dcpg/harness/dataset.hpp"
#include "dcpg/losses.hpp"
#include "dcpg/pg_attention.hpp"

namespace dcpg {

struct GcnLayer {
  Var embed_i, embed_j, weight;
};

// All learnable state of the matching model.
struct Model {
  ModelConfig config;
  std::vector<GcnLayer> gcn;
  Var image_proj, image_bias;
  Var word_table;
  Var text_proj, text_bias;
  PolicyParams image_policy, text_policy;
  GruParams image_fusion, text_fusion;
  Var classifier;
  DecoderParams decoder;

  static Model create(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 17);
    Model m;
    m.config = cfg;
    const std::size_t d = cfg.region_dim, e = cfg.embed;
    for (std::size_t l = 0; l < cfg.gcn_layers; ++l) {
      const std::string tag = "gcn" + std::to_string(l);
      Tensor ei = uniform_init(d, d, rng);
      for (auto& v : ei.values()) v *= 0.1;
      Tensor ej = uniform_init(d, d, rng);
      for (auto& v : ej.values()) v *= 0.1;
      GcnLayer layer;
      layer.embed_i = Var::parameter(std::move(ei), tag + ".embed_i");
      layer.embed_j = cfg.tied_affinity ? layer.embed_i : Var::parameter(std::move(ej), tag + ".embed_j");
      layer.weight = Var::parameter(uniform_init(d, d, rng), tag + ".weight");
      m.gcn.push_back(layer);
    }
    m.image_proj = Var::parameter(uniform_init(d, e, rng), "image_proj");
    m.image_bias = Var::parameter(Tensor(Shape{1, e}), "image_bias");
    Tensor table = uniform_init(cfg.vocab, cfg.word_dim, rng);
    if (!cfg.embedding_file.empty()) table = load_embedding_table(cfg.embedding_file, std::move(table));
    m.word_table = Var::parameter(std::move(table), "word_table");
    m.text_proj = Var::parameter(uniform_init(cfg.word_dim, e, rng), "text_proj");
    m.text_bias = Var::parameter(Tensor(Shape{1, e}), "text_bias");
    const ActionSpace space = cfg.action_space();
    m.image_policy = PolicyParams::random(e, cfg.hidden, space, cfg.heads, rng, "image_policy");
    m.text_policy = PolicyParams::random(e, cfg.hidden, space, cfg.heads, rng, "text_policy");
    m.image_fusion = GruParams::random(e, e, rng, "image_fusion");
    m.text_fusion = GruParams::random(e, e, rng, "text_fusion");
    m.classifier = Var::parameter(uniform_init(e, cfg.classes, rng), "classifier");
    m.decoder = DecoderParams::random(cfg.vocab, e, cfg.decoder_width, cfg.decoder_hidden, rng);
    return m;
  }

  // Every parameter with a unique name, in a fixed order.
  std::vector<std::pair<std::string, Var>> named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    auto add = [&](const Var& v) {
      for (const auto& [n, existing] : out) {
        if (existing.node() == v.node()) return;
      }
      out.emplace_back(v.name(), v);
    };
    for (const auto& l : gcn) {
      add(l.embed_i);
      add(l.embed_j);
      add(l.weight);
    }
    for (const Var& v : {image_proj, image_bias, word_table, text_proj, text_bias}) add(v);
    for (const auto* p : {&image_policy, &text_policy}) {
      for (const Var& v : p->gru.parameters()) add(v);
      for (const auto& h : p->heads) {
        add(h.w_mu);
        add(h.w_std);
        add(h.w_mean);
      }
    }
    for (const Var& v : image_fusion.parameters()) add(v);
    for (const Var& v : text_fusion.parameters()) add(v);
    add(classifier);
    for (const Var& v : decoder.parameters()) add(v);
    return out;
  }

  // Parameters that receive gradients under the configured switches.
  std::vector<Var> trainable() const {
    std::vector<Var> out;
    auto add = [&](const Var& v) {
      for (const auto& e : out) {
        if (e.node() == v.node()) return;
      }
      out.push_back(v);
    };
    const bool any_embedding_loss = config.triplet || config.instance || config.decode;
    if (any_embedding_loss) {
      for (const auto& l : gcn) {
        add(l.embed_i);
        add(l.embed_j);
        add(l.weight);
      }
      for (const Var& v : {image_proj, image_bias, word_table, text_proj, text_bias}) add(v);
      for (const Var& v : image_fusion.parameters()) add(v);
      for (const Var& v : text_fusion.parameters()) add(v);
    }
    if (config.pg != PgMode::off) {
      for (const Var& v : image_policy.parameters(config.pg)) add(v);
      for (const Var& v : text_policy.parameters(config.pg)) add(v);
      if (!any_embedding_loss) {
        for (const auto& l : gcn) {
          add(l.embed_i);
          add(l.embed_j);
          add(l.weight);
        }
        for (const Var& v : {image_proj, image_bias, word_table, text_proj, text_bias}) add(v);
      }
    }
    if (config.instance) add(classifier);
    if (config.decode) {
      for (const Var& v : decoder.parameters()) add(v);
    }
    return out;
  }
};

// Copies of every parameter value, in named_parameters() order.
struct Snapshot {
  std::vector<std::pair<std::string, Tensor>> values;

  static Snapshot take(const Model& m) {
    Snapshot s;
    for (const auto& [name, v] : m.named_parameters()) s.values.emplace_back(name, v.value());
    return s;
  }

  void restore(Model& m) const {
    auto params = m.named_parameters();
    if (params.size() != values.size()) throw std::runtime_error("Snapshot::restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].first != values[i].first || params[i].second.shape() != values[i].second.shape()) {
        throw std::runtime_error("Snapshot::restore: parameter '" + values[i].first + "' does not match the model");
      }
      params[i].second.mutable_value() = values[i].second;
    }
  }

  friend bool operator==(const Snapshot& a, const Snapshot& b) { return a.values == b.values; }
};

struct Batch {
  Tensor regions;  // (B * regions) x dim
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

inline Batch make_batch(const Split& split, const std::vector<std::size_t>& indices) {
  Batch b;
  const std::size_t t = split.regions, d = split.dim();
  b.regions = Tensor(Shape{indices.size() * t, d});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= split.size()) throw std::out_of_range("make_batch: instance index out of range");
    std::copy_n(&split.features[i * t * d], t * d, &b.regions[k * t * d]);
    b.tokens.push_back(split.tokens[i]);
    b.labels.push_back(split.labels[i]);
  }
  return b;
}

struct Encoded {
  Var image, text;  // B x embed, unit rows
  std::optional<AttentionTrace> image_trace, text_trace;
  Var similarity;   // B x B
};

inline std::vector<Var> timestep_rows(const Var& packed, std::size_t batch, std::size_t steps) {
  std::vector<Var> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> idx(batch);
    for (std::size_t b = 0; b < batch; ++b) idx[b] = b * steps + t;
    out.push_back(gather_rows(packed, std::move(idx)));
  }
  return out;
}

// Sampled Normal values to hold fixed in the log-densities, per modality.
struct HeldSamples {
  std::vector<Tensor> image, text;
};

inline Encoded encode(const Model& m, const Batch& batch, RolloutMode mode, Rng* rng, const HeldSamples* held = nullptr) {
  const ModelConfig& cfg = m.config;
  const std::size_t b = batch.size();
  const std::size_t t = batch.regions.rows() / b;
  if (batch.regions.cols() != cfg.region_dim) {
    throw ShapeError("encode: region width " + std::to_string(batch.regions.cols()) + " differs from model " +
                     std::to_string(cfg.region_dim));
  }
  Encoded out;

  Var regions = constant(batch.regions);
  const Tensor mask = block_diagonal_mask(b, t);
  for (const auto& layer : m.gcn) {
    regions = gcn_reason(regions, region_affinity(regions, layer.embed_i, layer.embed_j), layer.weight, &mask);
  }
  Var image_packed = add(matmul(regions, m.image_proj), m.image_bias);
  std::vector<Var> image_steps = timestep_rows(image_packed, b, t);

  std::vector<std::size_t> ids;
  const std::size_t n = batch.tokens.front().size();
  for (const auto& seq : batch.tokens) ids.insert(ids.end(), seq.begin(), seq.end());
  Var words = embed_words(ids, m.word_table);
  Var text_packed = add(matmul(words, m.text_proj), m.text_bias);
  std::vector<Var> text_steps = timestep_rows(text_packed, b, n);

  std::vector<Var> image_att, text_att;
  if (cfg.pg == PgMode::off) {
    image_att = neutral_attention(b, t, cfg.lambda);
    text_att = neutral_attention(b, n, cfg.lambda);
  } else {
    RolloutOptions opt{mode, cfg.pg, cfg.label_forward};
    const ActionSpace space = cfg.action_space();
    if (held && uses_continuous(cfg.pg)) opt.held_samples = &held->image;
    out.image_trace = policy_rollout(image_steps, m.image_policy, space, rng, opt);
    if (held && uses_continuous(cfg.pg)) opt.held_samples = &held->text;
    out.text_trace = policy_rollout(text_steps, m.text_policy, space, rng, opt);
    image_att = out.image_trace->attention();
    text_att = out.text_trace->attention();
  }
  out.image = normalize_rows(fuse(image_steps, image_att, cfg.lambda, m.image_fusion));
  out.text = normalize_rows(fuse(text_steps, text_att, cfg.lambda, m.text_fusion));
  out.similarity = matmul(out.image, transpose(out.text));
  return out;
}

// ---- checkpoints -----------------------------------------------------------
// "DCPGCKP1", u32 config length, config text, u32 parameter count, then per
// parameter: u32 name length, name, one binary matrix (see dataset files).

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write("DCPGCKP1", 8);
  const std::string cfg = config_to_text(m.config);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = m.named_parameters();
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, v] : params) {
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    Tensor t = v.value();
    if (t.rank() == 1) t = Tensor(Shape{1, t.size()}, t.storage());
    io::write_matrix(out, t);
  }
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::string(magic, 8) != "DCPGCKP1") {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  const auto cfg_len = io::get_le<std::uint32_t>(in, path.string());
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  ModelConfig cfg;
  apply_config_text(cfg, cfg_text, path.string());
  const std::string embedding_file = cfg.embedding_file;
  cfg.embedding_file.clear();
  Model m = Model::create(cfg);
  auto params = m.named_parameters();
  const auto count = io::get_le<std::uint32_t>(in, path.string());
  if (count != params.size()) throw std::runtime_error(path.string() + ": parameter count does not match its config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::get_le<std::uint32_t>(in, path.string());
    std::string name(len, '\0');
    in.read(name.data(), len);
    Tensor t = io::read_matrix(in, path.string());
    auto& [expected, var] = params[i];
    if (name != expected || t.size() != var.value().size()) {
      throw std::runtime_error(path.string() + ": parameter '" + name + "' does not match the model");
    }
    var.mutable_value() = Tensor(var.shape(), t.storage());
  }
  m.config.embedding_file = embedding_file;
  return m;
}

}  // namespace dcpg
