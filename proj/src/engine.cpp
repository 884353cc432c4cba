#include "mwp/engine.hpp"

#include <algorithm>

namespace mwp {

void EngineConfig::validate() const {
  if (accept_threshold <= 0 || accept_threshold >= 1 || confidence_threshold <= 0 ||
      confidence_threshold >= 1)
    throw EngineError("thresholds must lie in (0,1)");
  if (max_depth < 0) throw EngineError("max depth must be >= 0");
  if (candidate_cap <= 0) throw EngineError("candidate cap must be positive");
}

int ExpansionTrace::total_candidates() const {
  int n = 0;
  for (const DepthTrace& d : depths) n += static_cast<int>(d.candidates.size());
  return n;
}

int ExpansionTrace::last_depth_candidates() const {
  return depths.empty() ? 0 : static_cast<int>(depths.back().candidates.size());
}

// --- oracle backends ---------------------------------------------------------

namespace {

class OracleBackend : public ScoringBackend {
 public:
  explicit OracleBackend(Expr gold) : gold_(canonical_form(gold)) {}

  std::vector<Expr> initial_thoughts(const ProblemInstance& p) override {
    std::vector<Expr> out;
    for (size_t i = 0; i < p.quantities.size(); ++i)
      out.push_back(ExprNode::quantity(static_cast<int>(i)));
    for (size_t i = 0; i < p.env.constants.size(); ++i)
      out.push_back(ExprNode::constant(static_cast<int>(i)));
    exprs_ = out;
    return out;
  }

  void on_transform(int id, int, TransformOp, const Expr& e) override { remember(id, e); }
  void on_merge(int id, int, int, MergeOp, const Expr& e) override { remember(id, e); }

  std::vector<double> infer_scores(const std::vector<int>& ids) override {
    std::vector<double> s;
    s.reserve(ids.size());
    for (int id : ids) s.push_back(contains_sub(exprs_[static_cast<size_t>(id)], gold_) ? 1.0 : 0.0);
    return s;
  }

  std::vector<double> answer_scores(const std::vector<int>& ids) override {
    std::vector<double> s;
    s.reserve(ids.size());
    for (int id : ids)
      s.push_back(serialize(exprs_[static_cast<size_t>(id)]) == serialize(gold_) ? 1.0 : 0.0);
    return s;
  }

  int premise_update(const std::vector<int>& ids) override { return static_cast<int>(ids.size()); }

 private:
  void remember(int id, const Expr& e) {
    if (static_cast<size_t>(id) != exprs_.size()) throw EngineError("backend id out of order");
    exprs_.push_back(e);
  }

  Expr gold_;
  std::vector<Expr> exprs_;
};

class AcceptAllBackend : public ScoringBackend {
 public:
  std::vector<Expr> initial_thoughts(const ProblemInstance& p) override {
    std::vector<Expr> out;
    for (size_t i = 0; i < p.quantities.size(); ++i)
      out.push_back(ExprNode::quantity(static_cast<int>(i)));
    for (size_t i = 0; i < p.env.constants.size(); ++i)
      out.push_back(ExprNode::constant(static_cast<int>(i)));
    return out;
  }
  void on_transform(int, int, TransformOp, const Expr&) override {}
  void on_merge(int, int, int, MergeOp, const Expr&) override {}
  std::vector<double> infer_scores(const std::vector<int>& ids) override {
    return std::vector<double>(ids.size(), 1.0);
  }
  std::vector<double> answer_scores(const std::vector<int>& ids) override {
    return std::vector<double>(ids.size(), 0.0);
  }
  int premise_update(const std::vector<int>& ids) override { return static_cast<int>(ids.size()); }
};

// --- neural backend ----------------------------------------------------------

class NeuralBackend : public ScoringBackend {
 public:
  NeuralBackend(const ModelParams& params, const Vocabulary& vocab, bool strict_oov)
      : params_(params), vocab_(vocab), strict_oov_(strict_oov) {}

  std::vector<Expr> initial_thoughts(const ProblemInstance& p) override {
    nn::Graph g;
    EncodedProblem enc = encode(g, params_, vocab_, p, strict_oov_);
    std::vector<Expr> exprs;
    embeddings_.clear();
    for (const Thought& t : enc.initial_thoughts) {
      embeddings_.push_back(g.value(t.embedding));
      exprs.push_back(t.expr);
    }
    premise_ = g.value(enc.premise0);
    goal_ = g.value(enc.goal);
    return exprs;
  }

  void on_transform(int id, int parent, TransformOp op, const Expr&) override {
    nn::Graph g;
    nn::Var out = transform_embed(g, params_, op, g.input(embeddings_[static_cast<size_t>(parent)]));
    store(id, g.value(out));
  }

  void on_merge(int id, int a, int b, MergeOp op, const Expr&) override {
    nn::Graph g;
    nn::Var out = merge_embed(g, params_, op, g.input(embeddings_[static_cast<size_t>(a)]),
                              g.input(embeddings_[static_cast<size_t>(b)]));
    store(id, g.value(out));
  }

  std::vector<double> infer_scores(const std::vector<int>& ids) override {
    return head_scores(ids, /*answer=*/false);
  }

  std::vector<double> answer_scores(const std::vector<int>& ids) override {
    return head_scores(ids, /*answer=*/true);
  }

  int premise_update(const std::vector<int>& ids) override {
    if (ids.empty()) return 0;
    nn::Graph g;
    nn::Var appended = premise_append_rows(g, params_, g.input(premise_), stack(g, ids));
    const nn::Tensor& rows = g.value(appended);
    nn::Tensor grown(premise_.rows + rows.rows, premise_.cols);
    std::copy(premise_.v.begin(), premise_.v.end(), grown.v.begin());
    std::copy(rows.v.begin(), rows.v.end(), grown.v.begin() + static_cast<long>(premise_.size()));
    premise_ = std::move(grown);
    return rows.rows;
  }

 private:
  void store(int id, nn::Tensor emb) {
    if (static_cast<size_t>(id) != embeddings_.size()) throw EngineError("backend id out of order");
    embeddings_.push_back(std::move(emb));
  }

  nn::Var stack(nn::Graph& g, const std::vector<int>& ids) {
    nn::Tensor all(static_cast<int>(ids.size()), premise_.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
      const nn::Tensor& e = embeddings_[static_cast<size_t>(ids[i])];
      std::copy(e.v.begin(), e.v.end(), all.v.begin() + static_cast<long>(i * e.size()));
    }
    return g.input(std::move(all));
  }

  std::vector<double> head_scores(const std::vector<int>& ids, bool answer) {
    if (ids.empty()) return {};
    nn::Graph g;
    nn::Var thoughts = stack(g, ids);
    nn::Var logits = answer ? answer_logits(g, params_, g.input(goal_), thoughts)
                            : infer_logits(g, params_, g.input(premise_), thoughts);
    std::vector<double> out;
    out.reserve(ids.size());
    for (int i = 0; i < static_cast<int>(ids.size()); ++i)
      out.push_back(sigmoid_value(g.value(logits).at(i, 0)));
    return out;
  }

  const ModelParams& params_;
  const Vocabulary& vocab_;
  bool strict_oov_;
  std::vector<nn::Tensor> embeddings_;
  nn::Tensor premise_;
  nn::Tensor goal_;
};

}  // namespace

std::unique_ptr<ScoringBackend> make_oracle_backend(Expr gold) {
  return std::make_unique<OracleBackend>(std::move(gold));
}

std::unique_ptr<ScoringBackend> make_accept_all_backend() {
  return std::make_unique<AcceptAllBackend>();
}

std::unique_ptr<ScoringBackend> make_neural_backend(const ModelParams& params,
                                                    const Vocabulary& vocab, bool strict_oov) {
  return std::make_unique<NeuralBackend>(params, vocab, strict_oov);
}

// --- the expansion loop --------------------------------------------------------

ExpansionRun::ExpansionRun(ScoringBackend& backend, const ProblemInstance& problem,
                           const EngineConfig& cfg)
    : backend_(backend), cfg_(cfg) {
  cfg_.validate();
  exprs_ = backend_.initial_thoughts(problem);
  if (exprs_.empty())
    throw EngineError("problem " + problem.id + " has no quantities or constants");

  DepthTrace rec;
  rec.depth = 0;
  rec.raw_candidates = static_cast<int>(exprs_.size());
  std::vector<int> ids;
  for (size_t i = 0; i < exprs_.size(); ++i) {
    seen_.insert(serialize(exprs_[i]));
    rec.candidates.push_back(serialize(exprs_[i]));
    ids.push_back(static_cast<int>(i));
  }
  answer_score_.assign(exprs_.size(), -1.0);
  trace_.initial_count = static_cast<int>(exprs_.size());

  score_and_accept(ids, rec);
  if (reasonable_.empty()) {
    // Never leave the expansion without prior thoughts.
    trace_.initial_fallback = true;
    reasonable_ = ids;
    newly_accepted_ = ids;
  }
  trace_.initial_accepted = static_cast<int>(reasonable_.size());
  rec.premise_length = premise_rows_;
  check_confidence(rec);
  trace_.depths.push_back(std::move(rec));
  if (depth_ >= cfg_.max_depth) finished_ = true;
}

void ExpansionRun::score_and_accept(const std::vector<int>& candidate_ids, DepthTrace& rec) {
  if (candidate_ids.empty()) return;
  std::vector<double> scores = backend_.infer_scores(candidate_ids);
  std::vector<int> fresh;
  for (size_t i = 0; i < candidate_ids.size(); ++i) {
    rec.infer_scores.push_back(scores[i]);
    if (scores[i] >= cfg_.accept_threshold) {
      reasonable_.push_back(candidate_ids[i]);
      fresh.push_back(candidate_ids[i]);
      rec.accepted_new.push_back(serialize(exprs_[static_cast<size_t>(candidate_ids[i])]));
    }
  }
  if (depth_ > 0) newly_accepted_ = fresh;
  else if (!fresh.empty()) newly_accepted_ = fresh;

  // Answer scores are a fixed function of (goal, thought); computed once when
  // a thought becomes reasonable.
  if (!fresh.empty()) {
    std::vector<double> ans = backend_.answer_scores(fresh);
    for (size_t i = 0; i < fresh.size(); ++i)
      answer_score_[static_cast<size_t>(fresh[i])] = ans[i];
  }
}

void ExpansionRun::check_confidence(DepthTrace& rec) {
  double best = -1.0;
  for (int id : reasonable_) {
    double s = answer_score_[static_cast<size_t>(id)];
    if (s > best) {
      best = s;
      best_id_ = id;
    }
  }
  if (best_id_ >= 0) {
    rec.best_answer_score = best;
    rec.best_answer_expr = serialize(exprs_[static_cast<size_t>(best_id_)]);
  }
  if (best > cfg_.confidence_threshold) {
    finished_ = true;
    trace_.stop = StopReason::Confidence;
  }
}

void ExpansionRun::step() {
  if (finished_) return;
  ++depth_;
  DepthTrace rec;
  rec.depth = depth_;

  // Premise update precedes generation, with the accumulated reasonable set
  // (or only the previous depth's new thoughts when configured).
  premise_rows_ += backend_.premise_update(cfg_.premise_update_new_only ? newly_accepted_
                                                                        : reasonable_);
  rec.premise_length = premise_rows_;
  newly_accepted_.clear();

  std::vector<int> fresh_ids;
  auto consider = [&](Expr e, int parent_a, int parent_b, bool is_merge, TransformOp top,
                      MergeOp mop) {
    ++rec.raw_candidates;
    if (rec.raw_candidates > cfg_.candidate_cap)
      throw EngineError("candidate cap " + std::to_string(cfg_.candidate_cap) +
                        " exceeded at depth " + std::to_string(depth_));
    if (!seen_.insert(e->serial).second) return;
    int id = static_cast<int>(exprs_.size());
    exprs_.push_back(e);
    answer_score_.push_back(-1.0);
    if (is_merge)
      backend_.on_merge(id, parent_a, parent_b, mop, e);
    else
      backend_.on_transform(id, parent_a, top, e);
    rec.candidates.push_back(e->serial);
    fresh_ids.push_back(id);
  };

  size_t k = reasonable_.size();
  if (depth_ % 2 == 1) {
    for (size_t i = 0; i < k; ++i) {
      int id = reasonable_[i];
      Expr x = exprs_[static_cast<size_t>(id)];  // copy: consider() grows exprs_
      Expr neg = x->kind == ExprKind::Negate ? x->left : ExprNode::negate(x);
      consider(neg, id, -1, false, TransformOp::Negate, MergeOp::Add);
      Expr inv = x->kind == ExprKind::Reciprocal ? x->left : ExprNode::reciprocal(x);
      consider(inv, id, -1, false, TransformOp::Reciprocal, MergeOp::Add);
    }
  } else {
    for (size_t i = 0; i < k; ++i) {
      for (size_t j = i; j < k; ++j) {
        int ia = reasonable_[i], ib = reasonable_[j];
        Expr a = exprs_[static_cast<size_t>(ia)];  // copies: consider() grows exprs_
        Expr b = exprs_[static_cast<size_t>(ib)];
        bool sorted = a->serial <= b->serial;
        const Expr& lo = sorted ? a : b;
        const Expr& hi = sorted ? b : a;
        consider(ExprNode::add(lo, hi), ia, ib, true, TransformOp::Negate, MergeOp::Add);
        consider(ExprNode::mul(lo, hi), ia, ib, true, TransformOp::Negate, MergeOp::Mul);
      }
    }
  }

  score_and_accept(fresh_ids, rec);
  check_confidence(rec);
  trace_.depths.push_back(std::move(rec));
  if (depth_ >= cfg_.max_depth) finished_ = true;
}

SolveResult ExpansionRun::finish() {
  while (!finished_) step();
  SolveResult out;
  trace_.final_depth = depth_;
  if (best_id_ >= 0) {
    out.expression = exprs_[static_cast<size_t>(best_id_)];
    trace_.final_expr = serialize(out.expression);
    trace_.final_answer_score = answer_score_[static_cast<size_t>(best_id_)];
  }
  out.trace = trace_;
  return out;
}

SolveResult solve(ScoringBackend& backend, const ProblemInstance& problem,
                  const EngineConfig& cfg) {
  ExpansionRun run(backend, problem, cfg);
  return run.finish();
}

}  // namespace mwp
