#pragma once

#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mwp/encoder.hpp"
#include "mwp/layers.hpp"

namespace mwp {

struct EngineError : std::runtime_error {
  explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

struct EngineConfig {
  int max_depth = 6;                  // D
  double accept_threshold = 0.5;      // t_r; acceptance uses >=
  double confidence_threshold = 0.95; // t_f; early stop uses >
  int candidate_cap = 5000;           // raw candidates per depth
  bool premise_update_new_only = false;

  void validate() const;
};

enum class StopReason { DepthExhausted, Confidence };

struct DepthTrace {
  int depth = 0;
  int raw_candidates = 0;                    // before canonical dedup
  std::vector<std::string> candidates;       // canonical serials, deduped
  std::vector<double> infer_scores;          // parallel to candidates
  std::vector<std::string> accepted_new;     // accepted at this depth
  int premise_length = 1;                    // rows incl the start row
  double best_answer_score = 0.0;
  std::string best_answer_expr;
};

struct ExpansionTrace {
  std::vector<DepthTrace> depths;  // index = depth (0 = initial thoughts)
  StopReason stop = StopReason::DepthExhausted;
  int final_depth = 0;
  std::string final_expr;
  double final_answer_score = 0.0;
  int initial_count = 0;
  int initial_accepted = 0;
  bool initial_fallback = false;  // empty filtered set fell back to all initial thoughts

  int total_candidates() const;
  int last_depth_candidates() const;
};

// Strategy computing embeddings and scores for the expansion loop. Thought
// ids are assigned by the engine in materialization order, initial thoughts
// first.
class ScoringBackend {
 public:
  virtual ~ScoringBackend() = default;

  virtual std::vector<Expr> initial_thoughts(const ProblemInstance& problem) = 0;
  virtual void on_transform(int id, int parent, TransformOp op, const Expr& expr) = 0;
  virtual void on_merge(int id, int a, int b, MergeOp op, const Expr& expr) = 0;
  virtual std::vector<double> infer_scores(const std::vector<int>& ids) = 0;
  virtual std::vector<double> answer_scores(const std::vector<int>& ids) = 0;
  // Appends attention rows for the given thoughts; returns rows appended.
  virtual int premise_update(const std::vector<int>& ids) = 0;
};

// Containment/equivalence oracle against a gold expression.
std::unique_ptr<ScoringBackend> make_oracle_backend(Expr gold);
// Accepts everything; never confident.
std::unique_ptr<ScoringBackend> make_accept_all_backend();
// The trained model; runs the encoder per problem.
std::unique_ptr<ScoringBackend> make_neural_backend(const ModelParams& params,
                                                    const Vocabulary& vocab,
                                                    bool strict_oov = false);

struct SolveResult {
  Expr expression;  // final thought's expression (may be null if nothing scored)
  ExpansionTrace trace;
};

// One problem's depth-scheduled expansion; step() advances one depth.
class ExpansionRun {
 public:
  ExpansionRun(ScoringBackend& backend, const ProblemInstance& problem, const EngineConfig& cfg);

  bool finished() const { return finished_; }
  int depth() const { return depth_; }
  void step();
  SolveResult finish();

  const ExpansionTrace& trace() const { return trace_; }
  const std::vector<Expr>& all_exprs() const { return exprs_; }
  const std::vector<int>& reasonable_ids() const { return reasonable_; }

 private:
  void score_and_accept(const std::vector<int>& candidate_ids, DepthTrace& rec);
  void check_confidence(DepthTrace& rec);

  ScoringBackend& backend_;
  EngineConfig cfg_;
  std::vector<Expr> exprs_;            // by thought id
  std::vector<double> answer_score_;   // by thought id (reasonable only)
  std::unordered_set<std::string> seen_;
  std::vector<int> reasonable_;        // accumulated Θ*, insertion order
  std::vector<int> newly_accepted_;    // accepted at the previous depth
  int depth_ = 0;
  int premise_rows_ = 1;
  bool finished_ = false;
  int best_id_ = -1;
  ExpansionTrace trace_;
};

SolveResult solve(ScoringBackend& backend, const ProblemInstance& problem,
                  const EngineConfig& cfg);

}  // namespace mwp
