#include "mwp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_set>

#include <json.hpp>

namespace mwp {

using nlohmann::json;
using nn::Graph;
using nn::Tensor;
using nn::Var;

void TrainConfig::validate() const {
  if (batch_size <= 0 || epochs <= 0 || lr <= 0) throw nn::NumericError("bad training config");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1)
    throw nn::NumericError("lr decay factor must be in (0,1]");
  if (lr_decay_interval <= 0) throw nn::NumericError("lr decay interval must be positive");
  if (swa_window <= 0 || swa_window > epochs)
    throw nn::NumericError("swa window must be in [1, epochs]");
  if (max_depth < 0) throw nn::NumericError("max depth must be >= 0");
}

double TrainConfig::lr_at(int epoch) const {
  return lr * std::pow(lr_decay_factor, epoch / lr_decay_interval);
}

int DepthLabels::candidate_count() const {
  int n = 0;
  for (const auto& d : per_depth) n += static_cast<int>(d.size());
  return n;
}

int DepthLabels::answer_count() const { return static_cast<int>(answer_ids.size()); }

DepthLabels make_labels(const ProblemInstance& problem, int max_depth) {
  Expr gold = canonical_form(problem.gold);
  int need = required_depth(gold);
  if (need > max_depth)
    throw UnreachableGold("record " + problem.id + ": gold needs depth " + std::to_string(need) +
                          " > D=" + std::to_string(max_depth));

  AcceptFn contained = accept_contained_in(gold);
  DepthLabels out;
  out.final_depth = need;

  std::vector<Expr> exprs;  // by thought id
  std::unordered_set<std::string> seen;
  std::vector<int> ideal;

  std::vector<LabeledCandidate> d0;
  auto leaf = [&](Expr e) {
    LabeledCandidate c;
    c.expr = e;
    c.thought_id = static_cast<int>(exprs.size());
    c.infer_target = contained(e);
    if (c.infer_target) ideal.push_back(c.thought_id);
    seen.insert(e->serial);
    exprs.push_back(std::move(e));
    d0.push_back(std::move(c));
  };
  for (size_t i = 0; i < problem.quantities.size(); ++i)
    leaf(ExprNode::quantity(static_cast<int>(i)));
  for (size_t i = 0; i < problem.env.constants.size(); ++i)
    leaf(ExprNode::constant(static_cast<int>(i)));
  out.per_depth.push_back(std::move(d0));
  out.ideal_ids_after.push_back(ideal);

  for (int d = 1; d <= need; ++d) {
    std::vector<LabeledCandidate> layer;
    auto consider = [&](Expr e, bool is_merge, MergeOp mop, TransformOp top, int pa, int pb) {
      if (!seen.insert(e->serial).second) return;
      LabeledCandidate c;
      c.expr = e;
      c.is_merge = is_merge;
      c.merge_op = mop;
      c.transform_op = top;
      c.parent_a = pa;
      c.parent_b = pb;
      c.thought_id = static_cast<int>(exprs.size());
      c.infer_target = contained(e);
      if (c.infer_target) ideal.push_back(c.thought_id);
      exprs.push_back(e);
      layer.push_back(std::move(c));
    };
    size_t k = ideal.size();
    if (d % 2 == 1) {
      // `ideal` grows only through consider(), which never runs at odd depths
      // on freshly added ids, but copy the working set anyway.
      std::vector<int> parents(ideal.begin(), ideal.begin() + static_cast<long>(k));
      for (int id : parents) {
        Expr x = exprs[static_cast<size_t>(id)];
        consider(x->kind == ExprKind::Negate ? x->left : ExprNode::negate(x), false,
                 MergeOp::Add, TransformOp::Negate, id, -1);
        consider(x->kind == ExprKind::Reciprocal ? x->left : ExprNode::reciprocal(x), false,
                 MergeOp::Add, TransformOp::Reciprocal, id, -1);
      }
    } else {
      std::vector<int> parents(ideal.begin(), ideal.begin() + static_cast<long>(k));
      for (size_t i = 0; i < parents.size(); ++i) {
        for (size_t j = i; j < parents.size(); ++j) {
          Expr a = exprs[static_cast<size_t>(parents[i])];
          Expr b = exprs[static_cast<size_t>(parents[j])];
          bool sorted = a->serial <= b->serial;
          Expr lo = sorted ? a : b;
          Expr hi = sorted ? b : a;
          consider(ExprNode::add(lo, hi), true, MergeOp::Add, TransformOp::Negate, parents[i],
                   parents[j]);
          consider(ExprNode::mul(lo, hi), true, MergeOp::Mul, TransformOp::Negate, parents[i],
                   parents[j]);
        }
      }
    }
    out.per_depth.push_back(std::move(layer));
    out.ideal_ids_after.push_back(ideal);
  }

  for (int id : ideal) {
    out.answer_ids.push_back(id);
    out.answer_targets.push_back(exprs[static_cast<size_t>(id)]->serial == gold->serial);
  }
  return out;
}

double compute_loss(const DepthLabels& labels, const TeacherScores& scores, int* clamped) {
  constexpr double kEps = 1e-7;
  int clamp_count = 0;
  auto bce = [&](double s, bool target) {
    if (s < kEps || s > 1.0 - kEps) {
      ++clamp_count;
      s = std::clamp(s, kEps, 1.0 - kEps);
    }
    return target ? -std::log(s) : -std::log(1.0 - s);
  };
  size_t si = 0;
  double total = 0;
  for (const auto& depth : labels.per_depth)
    for (const LabeledCandidate& c : depth) total += bce(scores.infer.at(si++), c.infer_target);
  for (size_t i = 0; i < labels.answer_ids.size(); ++i)
    total += bce(scores.answer.at(i), labels.answer_targets[i]);
  int terms = labels.candidate_count() + labels.answer_count();
  if (clamped) *clamped += clamp_count;
  return terms > 0 ? total / terms : 0.0;
}

TeacherForward teacher_forward(Graph& g, const ModelParams& params, const Vocabulary& vocab,
                               const ProblemInstance& problem, const DepthLabels& labels) {
  EncodedProblem enc = encode(g, params, vocab, problem);
  if (enc.initial_thoughts.size() != labels.per_depth.at(0).size())
    throw nn::NumericError("record " + problem.id +
                           ": label/encoder disagreement on initial thought count");

  std::vector<Var> embeddings;  // by thought id
  for (const Thought& t : enc.initial_thoughts) embeddings.push_back(t.embedding);

  Var premise = enc.premise0;
  std::vector<Var> infer_logit_blocks;
  std::vector<double> infer_targets;

  auto stack_ids = [&](const std::vector<int>& ids) {
    std::vector<Var> rows;
    rows.reserve(ids.size());
    for (int id : ids) rows.push_back(embeddings[static_cast<size_t>(id)]);
    return g.concat_rows(rows);
  };

  auto score_depth = [&](const std::vector<LabeledCandidate>& layer) {
    if (layer.empty()) return;
    std::vector<Var> rows;
    rows.reserve(layer.size());
    for (const LabeledCandidate& c : layer) {
      rows.push_back(embeddings[static_cast<size_t>(c.thought_id)]);
      infer_targets.push_back(c.infer_target ? 1.0 : 0.0);
    }
    infer_logit_blocks.push_back(infer_logits(g, params, premise, g.concat_rows(rows)));
  };

  score_depth(labels.per_depth[0]);

  for (int d = 1; d <= labels.final_depth; ++d) {
    // Premise update precedes this depth's scoring, using the ideal
    // reasonable set of the previous depth (accumulated or new-only).
    const std::vector<int>& prev = labels.ideal_ids_after[static_cast<size_t>(d - 1)];
    std::vector<int> update_ids = prev;
    if (params.config.premise_update_new_only && d >= 2) {
      size_t before = labels.ideal_ids_after[static_cast<size_t>(d - 2)].size();
      update_ids.assign(prev.begin() + static_cast<long>(before), prev.end());
    }
    if (!update_ids.empty()) {
      Var appended = premise_append_rows(g, params, premise, stack_ids(update_ids));
      premise = g.concat_rows({premise, appended});
    }

    const auto& layer = labels.per_depth[static_cast<size_t>(d)];
    for (const LabeledCandidate& c : layer) {
      Var emb;
      if (c.is_merge) {
        emb = merge_embed(g, params, c.merge_op, embeddings[static_cast<size_t>(c.parent_a)],
                          embeddings[static_cast<size_t>(c.parent_b)]);
      } else {
        emb = transform_embed(g, params, c.transform_op,
                              embeddings[static_cast<size_t>(c.parent_a)]);
      }
      if (static_cast<size_t>(c.thought_id) != embeddings.size())
        throw nn::NumericError("label thought ids out of order");
      embeddings.push_back(emb);
    }
    score_depth(layer);
  }

  TeacherForward out;
  Var infer_all = g.concat_rows(infer_logit_blocks);
  Var answer_all = answer_logits(g, params, enc.goal, stack_ids(labels.answer_ids));
  std::vector<double> answer_targets;
  answer_targets.reserve(labels.answer_targets.size());
  for (bool b : labels.answer_targets) answer_targets.push_back(b ? 1.0 : 0.0);

  int terms = labels.candidate_count() + labels.answer_count();
  Var total = g.add(g.bce_with_logits_sum(infer_all, infer_targets),
                    g.bce_with_logits_sum(answer_all, answer_targets));
  out.loss = g.scale(total, 1.0 / terms);

  for (int i = 0; i < g.value(infer_all).rows; ++i)
    out.scores.infer.push_back(sigmoid_value(g.value(infer_all).at(i, 0)));
  for (int i = 0; i < g.value(answer_all).rows; ++i)
    out.scores.answer.push_back(sigmoid_value(g.value(answer_all).at(i, 0)));
  return out;
}

AdamW::AdamW(ModelParams& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
  m_.resize(static_cast<size_t>(params.store.count()));
  v_.resize(static_cast<size_t>(params.store.count()));
  for (int i = 0; i < params.store.count(); ++i) {
    const Tensor& t = params.store.at(i);
    m_[static_cast<size_t>(i)] = Tensor(t.rows, t.cols);
    v_[static_cast<size_t>(i)] = Tensor(t.rows, t.cols);
  }
}

void AdamW::apply(const std::vector<Tensor>& grads, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
  for (int i = 0; i < params_.store.count(); ++i) {
    Tensor& theta = params_.store.at(i);
    Tensor& m = m_[static_cast<size_t>(i)];
    Tensor& v = v_[static_cast<size_t>(i)];
    const Tensor* grad = i < static_cast<int>(grads.size()) && grads[static_cast<size_t>(i)].size()
                             ? &grads[static_cast<size_t>(i)]
                             : nullptr;
    for (size_t k = 0; k < theta.size(); ++k) {
      double gk = grad ? grad->v[k] : 0.0;
      m.v[k] = cfg_.adam_beta1 * m.v[k] + (1.0 - cfg_.adam_beta1) * gk;
      v.v[k] = cfg_.adam_beta2 * v.v[k] + (1.0 - cfg_.adam_beta2) * gk * gk;
      double mhat = m.v[k] / bc1;
      double vhat = v.v[k] / bc2;
      theta.v[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                          cfg_.weight_decay * theta.v[k]);
    }
  }
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 17) + (b >> 3);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

}  // namespace

double training_step(const std::vector<const ProblemInstance*>& batch,
                     const std::vector<const DepthLabels*>& labels, ModelParams& params,
                     const Vocabulary& vocab, AdamW& optimizer, const TrainConfig& cfg, double lr,
                     uint64_t step_seed, int threads) {
  int n = static_cast<int>(batch.size());
  struct PerProblem {
    double loss = 0;
    int clamped = 0;
    std::vector<std::pair<int, Tensor>> grads;
  };
  std::vector<PerProblem> results(static_cast<size_t>(n));

  parallel_for(n, threads, [&](int i) {
    Graph g(/*train=*/true, mix_seed(step_seed, static_cast<uint64_t>(i)));
    TeacherForward f =
        teacher_forward(g, params, vocab, *batch[static_cast<size_t>(i)],
                        *labels[static_cast<size_t>(i)]);
    PerProblem& out = results[static_cast<size_t>(i)];
    out.loss = g.value(f.loss).v[0];
    if (!std::isfinite(out.loss))
      throw nn::NumericError("non-finite loss at problem " + batch[static_cast<size_t>(i)]->id);
    for (double s : f.scores.infer)
      if (s < 1e-7 || s > 1.0 - 1e-7) ++out.clamped;
    g.backward(f.loss);
    out.grads = g.param_grads();
  });

  // Deterministic reduction in batch order.
  std::vector<Tensor> grads(static_cast<size_t>(params.store.count()));
  double mean_loss = 0;
  double inv = 1.0 / n;
  for (const PerProblem& r : results) {
    mean_loss += r.loss * inv;
    for (const auto& [idx, grad] : r.grads) {
      Tensor& dst = grads[static_cast<size_t>(idx)];
      if (dst.size() == 0) dst = Tensor(grad.rows, grad.cols);
      for (size_t k = 0; k < grad.size(); ++k) dst.v[k] += grad.v[k] * inv;
    }
  }

  if (cfg.grad_clip_norm > 0) {
    double norm_sq = 0;
    for (const Tensor& t : grads)
      for (double v : t.v) norm_sq += v * v;
    double norm = std::sqrt(norm_sq);
    if (norm > cfg.grad_clip_norm) {
      double scale = cfg.grad_clip_norm / norm;
      for (Tensor& t : grads)
        for (double& v : t.v) v *= scale;
    }
  }

  optimizer.apply(grads, lr);
  return mean_loss;
}

FitResult fit(const std::vector<ProblemInstance>& train,
              const std::vector<ProblemInstance>& validation, ModelParams& params,
              const Vocabulary& vocab, const TrainConfig& cfg, const EngineConfig& engine_cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("fit: empty training split");
  auto started = std::chrono::steady_clock::now();

  FitResult result;
  result.report.seed = cfg.seed;
  result.report.adam_beta1 = cfg.adam_beta1;
  result.report.adam_beta2 = cfg.adam_beta2;
  result.report.adam_eps = cfg.adam_eps;

  // Labels are deterministic; build them once.
  std::vector<const ProblemInstance*> usable;
  std::vector<DepthLabels> labels;
  for (const ProblemInstance& p : train) {
    try {
      labels.push_back(make_labels(p, cfg.max_depth));
      usable.push_back(&p);
    } catch (const UnreachableGold& e) {
      ++result.report.skipped_examples;
      result.report.skipped_ids.push_back(p.id);
      (void)e;
    }
  }
  if (usable.empty()) throw DataError("fit: every training example was skipped");

  std::vector<ProblemInstance> val_subset = validation;
  if (cfg.validation_limit > 0 && static_cast<int>(val_subset.size()) > cfg.validation_limit)
    val_subset.resize(static_cast<size_t>(cfg.validation_limit));

  AdamW optimizer(params, cfg);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<size_t> order(usable.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Running sums for the stochastic weight average over the last window.
  std::vector<Tensor> swa_sum(static_cast<size_t>(params.store.count()));
  int swa_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0;
    int seen = 0;
    int step = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size), ++step) {
      size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::vector<const ProblemInstance*> batch;
      std::vector<const DepthLabels*> batch_labels;
      for (size_t i = at; i < end; ++i) {
        batch.push_back(usable[order[i]]);
        batch_labels.push_back(&labels[order[i]]);
      }
      uint64_t step_seed =
          mix_seed(cfg.seed, (static_cast<uint64_t>(epoch) << 24) | static_cast<uint64_t>(step));
      double loss = training_step(batch, batch_labels, params, vocab, optimizer, cfg, lr,
                                  step_seed, cfg.threads);
      epoch_loss += loss * static_cast<double>(batch.size());
      seen += static_cast<int>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss / std::max(seen, 1);
    rec.lr = lr;
    bool validate = cfg.validate_every > 0 && !val_subset.empty() &&
                    ((epoch + 1) % cfg.validate_every == 0 || epoch + 1 == cfg.epochs);
    if (validate)
      rec.val_accuracy = split_accuracy(val_subset, params, vocab, engine_cfg, cfg.threads);
    result.report.epochs.push_back(rec);

    if (epoch >= cfg.epochs - cfg.swa_window) {
      for (int i = 0; i < params.store.count(); ++i) {
        Tensor& sum = swa_sum[static_cast<size_t>(i)];
        const Tensor& t = params.store.at(i);
        if (sum.size() == 0) sum = Tensor(t.rows, t.cols);
        for (size_t k = 0; k < t.size(); ++k) sum.v[k] += t.v[k];
      }
      ++swa_count;
    }
  }

  result.swa = params;
  for (int i = 0; i < result.swa.store.count(); ++i) {
    Tensor& t = result.swa.store.at(i);
    const Tensor& sum = swa_sum[static_cast<size_t>(i)];
    for (size_t k = 0; k < t.size(); ++k) t.v[k] = sum.v[k] / swa_count;
  }

  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void write_train_report(const std::string& path, const TrainReport& report,
                        const TrainConfig& cfg) {
  json doc;
  doc["seed"] = report.seed;
  doc["skipped_examples"] = report.skipped_examples;
  doc["skipped_ids"] = report.skipped_ids;
  doc["wall_seconds"] = report.wall_seconds;
  doc["optimizer"] = {{"name", "adamw"},
                      {"beta1", report.adam_beta1},
                      {"beta2", report.adam_beta2},
                      {"eps", report.adam_eps},
                      {"weight_decay", cfg.weight_decay}};
  doc["schedule"] = {{"lr", cfg.lr},
                     {"decay_interval", cfg.lr_decay_interval},
                     {"decay_factor", cfg.lr_decay_factor},
                     {"epochs", cfg.epochs},
                     {"swa_window", cfg.swa_window}};
  json epochs = json::array();
  for (const EpochRecord& e : report.epochs) {
    json rec = {{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}};
    if (e.val_accuracy >= 0) rec["validation_accuracy"] = e.val_accuracy;
    epochs.push_back(std::move(rec));
  }
  doc["epochs"] = std::move(epochs);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace mwp
