#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mwp/engine.hpp"

namespace mwp {

// Value comparison with relative tolerance 1e-4; non-finite predictions are
// wrong. Both expressions must evaluate in env.
bool answer_accuracy(const Expr& pred, const Expr& gold, const QuantityEnv& env);

struct ExampleRecord {
  std::string id;
  std::string predicted;  // canonical serialization; empty on engine failure
  std::string gold;
  double predicted_value = 0.0;
  double gold_value = 0.0;
  bool predicted_finite = false;
  bool correct = false;
  std::string stop_reason;  // "confidence" | "depth-exhausted" | "error: ..."
  int depth_used = 0;
  int total_candidates = 0;
  int last_depth_candidates = 0;
  int path_thoughts = 0;  // distinct subexpressions of the prediction
  int path_depth = 0;     // required depth of the prediction
};

struct StatLine {
  double min = 0, mean = 0, max = 0, stderr_mean = 0;
};

struct EvalReport {
  int evaluated = 0;
  int correct = 0;
  double accuracy = 0.0;
  std::vector<double> per_seed_accuracy;
  double accuracy_stderr = 0.0;
  std::vector<ExampleRecord> examples;  // from the first seed
  StatLine total_candidates, last_depth_candidates, path_thoughts, path_depth;
  std::string scorer;
};

using BackendFactory = std::function<std::unique_ptr<ScoringBackend>(const ProblemInstance&)>;

BackendFactory neural_backend_factory(const ModelParams& params, const Vocabulary& vocab);
BackendFactory oracle_backend_factory();
BackendFactory accept_all_backend_factory();

EvalReport evaluate_dataset(const std::vector<ProblemInstance>& split,
                            const BackendFactory& factory, const EngineConfig& cfg,
                            const std::vector<uint64_t>& seeds, int threads = 0);

// Accuracy only; trainer validation path.
double split_accuracy(const std::vector<ProblemInstance>& split, const ModelParams& params,
                      const Vocabulary& vocab, const EngineConfig& cfg, int threads = 0);

// Thought statistics over a split. "ideal" runs the containment-filtered
// expansion to each problem's required depth; otherwise accept-all to
// max_depth. Problems whose gold is unreachable are skipped.
struct ThoughtStats {
  StatLine total_candidates, path_thoughts, last_depth_candidates, path_depth;
  int count = 0;
  int skipped = 0;
};
ThoughtStats oracle_thought_stats(const std::vector<ProblemInstance>& split, bool ideal,
                                  int max_depth, int candidate_cap = 200000, int threads = 0);

struct SweepCell {
  double confidence_threshold;
  int depth_offset;
  double accuracy;
};
std::vector<SweepCell> sweep_stop_criteria(const std::vector<ProblemInstance>& split,
                                           const ModelParams& params, const Vocabulary& vocab,
                                           const EngineConfig& base,
                                           const std::vector<std::pair<double, int>>& grid,
                                           int threads = 0);

// Answer-layer attention of each reasonable thought over the problem tokens
// (the problem sequence embedding replaces the goal vector). Rows are
// head-averaged and sum to 1.
struct AttentionExport {
  std::vector<std::string> thought_exprs;  // canonical serials, reasonable set at stop
  std::vector<std::string> tokens;
  nn::Tensor weights;  // |thoughts| x |tokens|
};
AttentionExport export_attention(const ProblemInstance& problem, const ModelParams& params,
                                 const Vocabulary& vocab, const EngineConfig& cfg);

// Structured outputs.
void write_eval_report(const std::string& path, const EvalReport& report);
void write_trace(const std::string& path, const ProblemInstance& problem,
                 const ExpansionTrace& trace, const QuantityEnv& env);
void write_attention(const std::string& path, const AttentionExport& att);

void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace mwp
