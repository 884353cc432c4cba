#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwp/eval.hpp"

namespace mwp {

struct UnreachableGold : std::runtime_error {
  explicit UnreachableGold(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-3;
  int lr_decay_interval = 20;    // S_lr, in epochs
  double lr_decay_factor = 0.5;  // γ
  double weight_decay = 1e-5;    // ω, decoupled
  int epochs = 60;
  int swa_window = 10;           // parameters averaged over the last N epochs
  uint64_t seed = 1;
  double grad_clip_norm = 0.0;   // 0 disables clipping
  int max_depth = 6;             // teacher-pass bound D
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int validate_every = 1;        // epochs between validation passes (0 = never)
  int validation_limit = 0;      // cap on validation problems (0 = all)
  int threads = 0;               // 0 = hardware concurrency

  void validate() const;
  double lr_at(int epoch) const;  // lr * γ^floor(epoch / S_lr)
};

// Teacher-forced labels: candidates generated from the ideal accepted sets,
// exactly as the engine would, with containment/equivalence targets.
struct LabeledCandidate {
  Expr expr;
  bool is_merge = false;
  MergeOp merge_op = MergeOp::Add;
  TransformOp transform_op = TransformOp::Negate;
  int parent_a = -1, parent_b = -1;  // thought ids
  bool infer_target = false;
  int thought_id = -1;  // materialization order, initial thoughts first
};

struct DepthLabels {
  int final_depth = 0;  // required depth of the gold expression
  std::vector<std::vector<LabeledCandidate>> per_depth;  // [0] = initial thoughts
  std::vector<std::vector<int>> ideal_ids_after;  // accumulated ideal set per depth
  std::vector<int> answer_ids;                    // final reasonable set, in order
  std::vector<bool> answer_targets;               // 1 iff expression == gold

  int candidate_count() const;
  int answer_count() const;
};

DepthLabels make_labels(const ProblemInstance& problem, int max_depth);

// Loss over plain score values: BCE summed over every labeled candidate's
// infer score and every final reasonable thought's answer score, divided by
// the term count. Scores outside (eps, 1-eps) are clamped and counted.
struct TeacherScores {
  std::vector<double> infer;   // in label order across depths
  std::vector<double> answer;  // in answer_ids order
};
double compute_loss(const DepthLabels& labels, const TeacherScores& scores,
                    int* clamped = nullptr);

// Differentiable teacher-forced pass mirroring the labels.
struct TeacherForward {
  nn::Var loss;
  TeacherScores scores;
};
TeacherForward teacher_forward(nn::Graph& g, const ModelParams& params, const Vocabulary& vocab,
                               const ProblemInstance& problem, const DepthLabels& labels);

// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
 public:
  AdamW(ModelParams& params, const TrainConfig& cfg);
  // grads indexed by parameter id; empty tensors mean zero gradient.
  void apply(const std::vector<nn::Tensor>& grads, double lr);
  int64_t steps() const { return t_; }

 private:
  ModelParams& params_;
  TrainConfig cfg_;
  std::vector<nn::Tensor> m_, v_;
  int64_t t_ = 0;
};

// One optimizer update over the mean batch loss. Deterministic given seed and
// batch order. Throws NumericError (with the problem id) on a non-finite loss.
double training_step(const std::vector<const ProblemInstance*>& batch,
                     const std::vector<const DepthLabels*>& labels, ModelParams& params,
                     const Vocabulary& vocab, AdamW& optimizer, const TrainConfig& cfg,
                     double lr, uint64_t step_seed, int threads);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double val_accuracy = -1.0;  // -1 when not measured this epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int skipped_examples = 0;
  std::vector<std::string> skipped_ids;
  int clamped_scores = 0;
  double adam_beta1 = 0, adam_beta2 = 0, adam_eps = 0;
  uint64_t seed = 0;
  double wall_seconds = 0.0;
};

struct FitResult {
  TrainReport report;
  ModelParams swa;  // stochastic weight average over the last swa_window epochs
};

// Trains params in place; returns the report and the SWA parameters.
FitResult fit(const std::vector<ProblemInstance>& train,
              const std::vector<ProblemInstance>& validation, ModelParams& params,
              const Vocabulary& vocab, const TrainConfig& cfg, const EngineConfig& engine_cfg);

void write_train_report(const std::string& path, const TrainReport& report,
                        const TrainConfig& cfg);

}  // namespace mwp
