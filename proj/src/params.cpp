#include "mwp/params.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>

#include <json.hpp>

namespace mwp {

using nlohmann::json;
using nn::Tensor;

std::string to_string(GoalMode m) {
  return m == GoalMode::PunctuationMark ? "punctuation-mark" : "full-question";
}

GoalMode goal_mode_from_string(const std::string& s) {
  if (s == "punctuation-mark") return GoalMode::PunctuationMark;
  if (s == "full-question") return GoalMode::FullQuestion;
  throw nn::NumericError("unknown goal mode: " + s);
}

void ModelConfig::validate() const {
  if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
    throw nn::NumericError("hidden size must be a positive multiple of the head count");
  if (encoder_layers < 0 || ff_multiplier <= 0 || max_sequence <= 0)
    throw nn::NumericError("bad encoder dimensions");
  if (dropout < 0 || dropout >= 1) throw nn::NumericError("dropout must be in [0, 1)");
}

std::string ModelConfig::to_json() const {
  json j;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["encoder_layers"] = encoder_layers;
  j["ff_multiplier"] = ff_multiplier;
  j["max_sequence"] = max_sequence;
  j["dropout"] = dropout;
  j["goal_mode"] = to_string(goal_mode);
  j["premise_update_new_only"] = premise_update_new_only;
  j["freeze_encoder"] = freeze_encoder;
  j["vocab_size"] = vocab_size;
  j["constant_values"] = constant_values;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.ff_multiplier = j.value("ff_multiplier", c.ff_multiplier);
  c.max_sequence = j.value("max_sequence", c.max_sequence);
  c.dropout = j.value("dropout", c.dropout);
  c.goal_mode = goal_mode_from_string(j.value("goal_mode", to_string(c.goal_mode)));
  c.premise_update_new_only = j.value("premise_update_new_only", c.premise_update_new_only);
  c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.constant_values = j.value("constant_values", c.constant_values);
  c.validate();
  return c;
}

int ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw nn::NumericError("duplicate parameter name: " + name);
  int id = count();
  index_[name] = id;
  names_.push_back(name);
  values_.push_back(std::move(value));
  return id;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw nn::NumericError("unknown parameter: " + name);
  return it->second;
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

namespace {

struct Init {
  ParamStore& store;
  std::mt19937_64 rng;

  Tensor normal(int rows, int cols, double std) {
    Tensor t(rows, cols);
    std::normal_distribution<double> d(0.0, std);
    for (double& v : t.v) v = d(rng);
    return t;
  }

  Tensor xavier(int rows, int cols) {
    return normal(rows, cols, std::sqrt(2.0 / (rows + cols)));
  }

  Tensor fill(int rows, int cols, double value) {
    Tensor t(rows, cols);
    for (double& v : t.v) v = value;
    return t;
  }

  int weight(const std::string& name, int rows, int cols) {
    return store.add(name, xavier(rows, cols));
  }
  int zeros(const std::string& name, int rows, int cols) {
    return store.add(name, fill(rows, cols, 0.0));
  }
  int ones(const std::string& name, int rows, int cols) {
    return store.add(name, fill(rows, cols, 1.0));
  }
  int embedding(const std::string& name, int rows, int cols) {
    return store.add(name, normal(rows, cols, 0.02));
  }

  AttentionHandles attention(const std::string& prefix, int H) {
    AttentionHandles h;
    h.ln_q_g = ones(prefix + ".ln_q_g", 1, H);
    h.ln_q_b = zeros(prefix + ".ln_q_b", 1, H);
    h.ln_kv_g = ones(prefix + ".ln_kv_g", 1, H);
    h.ln_kv_b = zeros(prefix + ".ln_kv_b", 1, H);
    h.wq = weight(prefix + ".wq", H, H);
    h.wk = weight(prefix + ".wk", H, H);
    h.wv = weight(prefix + ".wv", H, H);
    h.wo = weight(prefix + ".wo", H, H);
    return h;
  }

  FFHandles ff(const std::string& prefix, int H, int mult) {
    FFHandles h;
    h.w1 = weight(prefix + ".w1", H, H * mult);
    h.b1 = zeros(prefix + ".b1", 1, H * mult);
    h.w2 = weight(prefix + ".w2", H * mult, H);
    h.b2 = zeros(prefix + ".b2", 1, H);
    return h;
  }

  MergeHandles merge(const std::string& prefix, int H, int mult) {
    MergeHandles h;
    h.sattn = attention(prefix + ".sattn", H);
    h.ln_g = ones(prefix + ".ln_g", 1, H);
    h.ln_b = zeros(prefix + ".ln_b", 1, H);
    h.w = weight(prefix + ".w", H, H);
    h.b = zeros(prefix + ".b", 1, H);
    h.ff = ff(prefix + ".ff", H, mult);
    return h;
  }
};

}  // namespace

ModelParams build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Init init{p.store, std::mt19937_64(seed)};
  int H = config.hidden;
  int mult = config.ff_multiplier;

  p.tok_emb = init.embedding("enc.tok_emb", std::max(config.vocab_size, 1), H);
  p.pos_emb = init.embedding("enc.pos_emb", config.max_sequence, H);
  p.const_emb = init.embedding("enc.const_emb", config.constant_count(), H);
  for (int l = 0; l < config.encoder_layers; ++l) {
    std::string prefix = "enc.L" + std::to_string(l);
    EncoderLayerHandles layer;
    layer.attn = init.attention(prefix + ".attn", H);
    layer.ln2_g = init.ones(prefix + ".ln2_g", 1, H);
    layer.ln2_b = init.zeros(prefix + ".ln2_b", 1, H);
    layer.ff = init.ff(prefix + ".ff", H, mult);
    p.enc_layers.push_back(layer);
  }
  p.final_ln_g = init.ones("enc.final_ln_g", 1, H);
  p.final_ln_b = init.zeros("enc.final_ln_b", 1, H);

  p.merge_add = init.merge("merge.add", H, mult);
  p.merge_mul = init.merge("merge.mul", H, mult);
  p.transform_negate = init.ff("transform.negate", H, mult);
  p.transform_reciprocal = init.ff("transform.reciprocal", H, mult);

  p.infer_ff = init.ff("infer.ff", H, mult);
  p.infer_attn = init.attention("infer.attn", H);
  p.w_r = init.weight("infer.w_r", H, 1);
  p.b_r = init.zeros("infer.b_r", 1, 1);

  p.answer_ff = init.ff("answer.ff", H, mult);
  p.answer_attn = init.attention("answer.attn", H);
  p.w_a = init.weight("answer.w_a", H, 1);
  p.b_a = init.zeros("answer.b_a", 1, 1);
  return p;
}

namespace {

constexpr char kMagic[8] = {'M', 'W', 'P', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw nn::NumericError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  std::string config = params.config.to_json();
  write_u32(out, static_cast<uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  write_u32(out, static_cast<uint32_t>(params.store.count()));
  for (int i = 0; i < params.store.count(); ++i) {
    const std::string& name = params.store.name(i);
    const Tensor& t = params.store.at(i);
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t.rows));
    write_u32(out, static_cast<uint32_t>(t.cols));
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw nn::NumericError("short write on checkpoint " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw nn::NumericError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw nn::NumericError(path + " is not a checkpoint file");
  uint32_t config_len = read_u32(in);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), config_len);
  ModelParams params = build_model(ModelConfig::from_json(config_text), 0);

  uint32_t count = read_u32(in);
  if (count != static_cast<uint32_t>(params.store.count()))
    throw nn::NumericError("checkpoint tensor count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rows = read_u32(in);
    uint32_t cols = read_u32(in);
    int idx = params.store.index_of(name);  // throws on unknown name
    Tensor& t = params.store.at(idx);
    if (t.rows != static_cast<int>(rows) || t.cols != static_cast<int>(cols))
      throw nn::NumericError("checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!in) throw nn::NumericError("truncated checkpoint " + path);
  return params;
}

}  // namespace mwp
