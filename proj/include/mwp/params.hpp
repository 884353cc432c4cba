#pragma once

#include <map>
#include <string>
#include <vector>

#include "mwp/autograd.hpp"

namespace mwp {

enum class GoalMode { PunctuationMark, FullQuestion };

std::string to_string(GoalMode m);
GoalMode goal_mode_from_string(const std::string& s);

struct ModelConfig {
  int hidden = 64;
  int heads = 4;
  int encoder_layers = 2;
  int ff_multiplier = 4;
  int max_sequence = 96;
  double dropout = 0.1;
  GoalMode goal_mode = GoalMode::PunctuationMark;
  bool premise_update_new_only = false;
  bool freeze_encoder = false;
  int vocab_size = 0;
  std::vector<std::string> constant_values;  // rational strings, vocabulary order

  int constant_count() const { return static_cast<int>(constant_values.size()); }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Named parameter tensors with stable integer indices; the single mutable
// store during training, read-only during forward passes.
class ParamStore {
 public:
  int add(const std::string& name, nn::Tensor value);
  int index_of(const std::string& name) const;  // throws on unknown name
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  nn::Tensor& at(int i) { return values_[static_cast<size_t>(i)]; }
  const nn::Tensor& at(int i) const { return values_[static_cast<size_t>(i)]; }
  const std::string& name(int i) const { return names_[static_cast<size_t>(i)]; }
  int count() const { return static_cast<int>(values_.size()); }

  size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<nn::Tensor> values_;
  std::map<std::string, int> index_;
};

struct AttentionHandles {
  int ln_q_g, ln_q_b, ln_kv_g, ln_kv_b, wq, wk, wv, wo;
};

struct FFHandles {
  int w1, b1, w2, b2;
};

struct MergeHandles {
  AttentionHandles sattn;
  int ln_g, ln_b;  // the ℓ layer norm on the pooled self-attention rows
  int w, b;        // H x H projection and H bias
  FFHandles ff;
};

struct EncoderLayerHandles {
  AttentionHandles attn;
  int ln2_g, ln2_b;
  FFHandles ff;
};

struct ModelParams {
  ModelConfig config;
  ParamStore store;

  int tok_emb = -1, pos_emb = -1, const_emb = -1;
  int final_ln_g = -1, final_ln_b = -1;
  std::vector<EncoderLayerHandles> enc_layers;

  MergeHandles merge_add, merge_mul;
  FFHandles transform_negate, transform_reciprocal;

  FFHandles infer_ff;
  AttentionHandles infer_attn;
  int w_r = -1, b_r = -1;

  FFHandles answer_ff;
  AttentionHandles answer_attn;
  int w_a = -1, b_a = -1;
};

ModelParams build_model(const ModelConfig& config, uint64_t seed);

// Versioned binary checkpoint: config JSON plus named tensors (shape +
// row-major doubles). Loading rebuilds the model from the stored config and
// rejects any name or shape mismatch.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mwp
