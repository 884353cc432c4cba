#include "mwp/encoder.hpp"

#include <fstream>

#include <json.hpp>

namespace mwp {

using nn::Graph;
using nn::Tensor;
using nn::Var;

Vocabulary Vocabulary::build(const std::vector<ProblemInstance>& instances) {
  Vocabulary v;
  auto put = [&](const std::string& tok) {
    if (!v.index.count(tok)) {
      v.index[tok] = v.size();
      v.tokens.push_back(tok);
    }
  };
  put(kStartToken);
  put(kMaskToken);
  put(kUnknownToken);
  put("?");
  for (const ProblemInstance& p : instances)
    for (const std::string& tok : p.tokens) put(tok);
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.index[line] = v.size();
    v.tokens.push_back(line);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path);
  for (const std::string& tok : tokens) out << tok << "\n";
}

namespace {

// Thoughts, premise0, and goal extracted from an encoded sequence.
EncodedProblem assemble(Graph& g, const ModelParams& params, const ProblemInstance& p, Var X) {
  EncodedProblem out;
  out.X = X;

  int qi = 0;
  for (size_t i = 0; i < p.tokens.size(); ++i) {
    if (p.tokens[i] == kMaskToken) {
      Thought t;
      t.embedding = g.row(X, static_cast<int>(i));
      t.expr = ExprNode::quantity(qi++);
      t.birth_depth = 0;
      out.initial_thoughts.push_back(std::move(t));
    }
  }
  // Constant thoughts are free parameters appended after the encoding.
  for (int c = 0; c < params.config.constant_count(); ++c) {
    Thought t;
    t.embedding = g.row(g.param(params.store.at(params.const_emb), params.const_emb), c);
    t.expr = ExprNode::constant(c);
    t.birth_depth = 0;
    out.initial_thoughts.push_back(std::move(t));
  }

  out.premise0 = g.row(X, 0);

  if (params.config.goal_mode == GoalMode::PunctuationMark) {
    out.goal = g.row(X, p.goal_index);
  } else {
    if (p.question_begin >= p.question_end)
      throw DataError("record " + p.id + ": full-question goal mode needs a question span");
    out.goal = g.slice_rows(X, p.question_begin, p.question_end);
  }
  return out;
}

}  // namespace

EncodedProblem encode(Graph& g, const ModelParams& params, const Vocabulary& vocab,
                      const ProblemInstance& p, bool strict_oov) {
  const ModelConfig& cfg = params.config;
  int n = static_cast<int>(p.tokens.size());
  if (n > cfg.max_sequence)
    throw DataError("record " + p.id + ": sequence length " + std::to_string(n) +
                    " exceeds max_sequence " + std::to_string(cfg.max_sequence));

  std::vector<int> ids;
  ids.reserve(p.tokens.size());
  for (const std::string& tok : p.tokens) {
    int id = vocab.id_of(tok);
    if (id < 0) {
      if (strict_oov) throw DataError("record " + p.id + ": out-of-vocabulary token '" + tok + "'");
      id = vocab.unknown_id();
    }
    ids.push_back(id);
  }

  Var tok_emb = g.param(params.store.at(params.tok_emb), params.tok_emb);
  Var pos_emb = g.param(params.store.at(params.pos_emb), params.pos_emb);
  Var x = g.add(g.gather_rows(tok_emb, ids), g.slice_rows(pos_emb, 0, n));
  x = g.dropout(x, cfg.dropout);

  for (const EncoderLayerHandles& layer : params.enc_layers) {
    x = attention(g, params.store, layer.attn, cfg.heads, x, x, cfg.dropout).out;
    Var normed = g.layer_norm(x, g.param(params.store.at(layer.ln2_g), layer.ln2_g),
                              g.param(params.store.at(layer.ln2_b), layer.ln2_b));
    x = g.add(x, feed_forward(g, params.store, layer.ff, normed, cfg.dropout));
  }
  x = g.layer_norm(x, g.param(params.store.at(params.final_ln_g), params.final_ln_g),
                   g.param(params.store.at(params.final_ln_b), params.final_ln_b));

  if (cfg.freeze_encoder) x = g.input(g.value(x));  // detach

  return assemble(g, params, p, x);
}

ExternalEmbeddings ExternalEmbeddings::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  ExternalEmbeddings out;
  for (auto& [id, rows] : doc.items()) {
    if (!rows.is_array() || rows.empty()) throw DataError(path + ": bad matrix for " + id);
    Tensor t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int i = 0; i < t.rows; ++i) {
      if (static_cast<int>(rows[static_cast<size_t>(i)].size()) != t.cols)
        throw DataError(path + ": ragged matrix for " + id);
      for (int j = 0; j < t.cols; ++j) t.at(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    out.by_id.emplace(id, std::move(t));
  }
  return out;
}

EncodedProblem encode_external(Graph& g, const ModelParams& params,
                               const ExternalEmbeddings& provider, const ProblemInstance& p) {
  auto it = provider.by_id.find(p.id);
  if (it == provider.by_id.end()) throw DataError("no external embedding for record " + p.id);
  const Tensor& X = it->second;
  if (X.rows != static_cast<int>(p.tokens.size()) || X.cols != params.config.hidden)
    throw DataError("record " + p.id + ": external embedding shape mismatch");
  return assemble(g, params, p, g.input(X));
}

}  // namespace mwp
