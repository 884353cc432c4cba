#include <doctest.h>

#include <cmath>
#include <set>

#include "grad_check.hpp"
#include "mwp/trainer.hpp"

using namespace mwp;
using nn::Graph;
using nn::Tensor;

namespace {

ProblemInstance abc_problem() {
  // gold (a+b)*c over quantities [4, 9, 7]
  return make_instance("abc", "Ann put 4 red pens and 9 blue pens into each of 7 boxes.",
                       "How many pens are in the boxes?", "(4+9)*7");
}

ProblemInstance board_problem() {
  return make_instance("board", "A board is 6 feet by 4 feet.", "What is the area?", "6*4");
}

ModelConfig tiny_config(const Vocabulary& vocab) {
  ModelConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.max_sequence = 64;
  c.dropout = 0.0;
  c.vocab_size = vocab.size();
  return c;
}

const LabeledCandidate* find_candidate(const DepthLabels& labels, int depth,
                                       const std::string& serial) {
  for (const LabeledCandidate& c : labels.per_depth.at(static_cast<size_t>(depth)))
    if (serialize(c.expr) == serial) return &c;
  return nullptr;
}

}  // namespace

TEST_CASE("labels carry containment targets and equivalence answer targets") {
  ProblemInstance p = abc_problem();
  DepthLabels labels = make_labels(p, 6);
  CHECK(labels.final_depth == 4);
  REQUIRE(labels.per_depth.size() == 5);

  // Depth 0: all three quantities are contained in the gold.
  for (const LabeledCandidate& c : labels.per_depth[0]) CHECK(c.infer_target);

  // First merge depth: a+b is a positive, a*c is a negative.
  const LabeledCandidate* plus = find_candidate(labels, 2, "(+ q0 q1)");
  REQUIRE(plus != nullptr);
  CHECK(plus->infer_target);
  const LabeledCandidate* stray = find_candidate(labels, 2, "(* q0 q2)");
  REQUIRE(stray != nullptr);
  CHECK_FALSE(stray->infer_target);

  // Answer targets: exactly the gold expression.
  int answer_ones = 0;
  std::string gold_serial = serialize(p.gold);
  for (size_t i = 0; i < labels.answer_ids.size(); ++i)
    if (labels.answer_targets[i]) {
      ++answer_ones;
    }
  CHECK(answer_ones == 1);

  // Soundness: the gold appears exactly once as a candidate, with target 1,
  // at its required depth.
  int gold_seen = 0;
  for (size_t d = 0; d < labels.per_depth.size(); ++d)
    for (const LabeledCandidate& c : labels.per_depth[d])
      if (serialize(c.expr) == gold_serial) {
        ++gold_seen;
        CHECK(c.infer_target);
        CHECK(static_cast<int>(d) == labels.final_depth);
      }
  CHECK(gold_seen == 1);

  // gold a*b: answer 1 for the product, quantity keeps infer 1 / answer 0.
  ProblemInstance q = board_problem();
  DepthLabels ql = make_labels(q, 6);
  CHECK(ql.final_depth == 2);
  bool saw_q0 = false;
  for (size_t i = 0; i < ql.answer_ids.size(); ++i) {
    // thought id 0 is q0
    if (ql.answer_ids[i] == 0) {
      saw_q0 = true;
      CHECK_FALSE(ql.answer_targets[i]);
    }
  }
  CHECK(saw_q0);

  CHECK_THROWS_AS(make_labels(make_instance("deep", "Field of 80 by 40 grew 10 and 15.", "Gain?",
                                            "(80+10)*(40+15)-(80*40)"),
                              4),
                  UnreachableGold);
}

TEST_CASE("teacher candidate sets equal the containment-filtered enumeration") {
  auto corpus = synth_generate(default_templates(), 30, 3);
  ConstantVocabulary consts = collect_constants(corpus);
  finalize_constants(corpus, consts);
  for (const ProblemInstance& p : corpus) {
    DepthLabels labels = make_labels(p, 6);
    Enumeration en =
        oracle_enumerate(static_cast<int>(p.quantities.size()),
                         static_cast<int>(p.env.constants.size()), labels.final_depth,
                         accept_contained_in(p.gold));
    REQUIRE(static_cast<int>(labels.per_depth.size()) == labels.final_depth + 1);
    for (int d = 0; d <= labels.final_depth; ++d) {
      std::set<std::string> mine, oracle;
      for (const LabeledCandidate& c : labels.per_depth[static_cast<size_t>(d)])
        mine.insert(serialize(c.expr));
      for (const Expr& e : en.at(d).candidates) oracle.insert(serialize(e));
      CHECK(mine == oracle);
      // Ideal accepted set == filter-accepted set.
      std::set<std::string> ideal, accepted;
      for (int id : labels.ideal_ids_after[static_cast<size_t>(d)]) (void)id;
      for (const LabeledCandidate& c : labels.per_depth[static_cast<size_t>(d)])
        if (c.infer_target) ideal.insert(serialize(c.expr));
      for (const Expr& e : en.at(d).accepted_new) accepted.insert(serialize(e));
      CHECK(ideal == accepted);
    }
  }
}

TEST_CASE("loss at uniform half scores is ln 2 and zero at the targets") {
  ProblemInstance p = abc_problem();
  DepthLabels labels = make_labels(p, 6);

  TeacherScores half;
  half.infer.assign(static_cast<size_t>(labels.candidate_count()), 0.5);
  half.answer.assign(static_cast<size_t>(labels.answer_count()), 0.5);
  CHECK(std::abs(compute_loss(labels, half) - std::log(2.0)) < 1e-12);

  TeacherScores exact;
  size_t si = 0;
  for (const auto& depth : labels.per_depth)
    for (const LabeledCandidate& c : depth) {
      (void)si;
      exact.infer.push_back(c.infer_target ? 1.0 - 1e-9 : 1e-9);
    }
  for (size_t i = 0; i < labels.answer_ids.size(); ++i)
    exact.answer.push_back(labels.answer_targets[i] ? 1.0 - 1e-9 : 1e-9);
  CHECK(compute_loss(labels, exact) <= 1e-6);

  // Clamping is counted.
  TeacherScores wild = exact;
  wild.infer[0] = 1.0;
  int clamped = 0;
  compute_loss(labels, wild, &clamped);
  CHECK(clamped >= 1);
}

TEST_CASE("graph loss equals an independently coded BCE over extracted scores") {
  ProblemInstance p = abc_problem();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 31);
  DepthLabels labels = make_labels(p, 6);

  Graph g;
  TeacherForward f = teacher_forward(g, params, vocab, p, labels);

  // Reference: plain BCE over the scores, mean over all terms.
  double total = 0;
  size_t si = 0;
  for (const auto& depth : labels.per_depth)
    for (const LabeledCandidate& c : depth) {
      double s = f.scores.infer.at(si++);
      total += c.infer_target ? -std::log(s) : -std::log(1 - s);
    }
  for (size_t i = 0; i < labels.answer_targets.size(); ++i) {
    double s = f.scores.answer[i];
    total += labels.answer_targets[i] ? -std::log(s) : -std::log(1 - s);
  }
  double ref = total / (labels.candidate_count() + labels.answer_count());
  CHECK(std::abs(g.value(f.loss).v[0] - ref) < 1e-10);
  CHECK(std::abs(compute_loss(labels, f.scores) - ref) < 1e-10);
}

TEST_CASE("full-pipeline gradient check at H=8, D=2") {
  ProblemInstance p = board_problem();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 33);
  DepthLabels labels = make_labels(p, 2);

  auto rep = gradcheck::run_store(params.store, [&](Graph& g) {
    return teacher_forward(g, params, vocab, p, labels).loss;
  });
  CHECK(rep.max_rel <= 1e-4);
  CHECK(rep.checked > 3000);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  ProblemInstance p = board_problem();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 35);
  std::vector<Tensor> before;
  for (int i = 0; i < params.store.count(); ++i) before.push_back(params.store.at(i));

  TrainConfig cfg;
  cfg.max_depth = 2;
  cfg.threads = 1;
  AdamW opt(params, cfg);
  DepthLabels labels = make_labels(p, 2);
  training_step({&p}, {&labels}, params, vocab, opt, cfg, /*lr=*/0.0, 1, 1);
  CHECK(opt.steps() == 1);
  for (int i = 0; i < params.store.count(); ++i) CHECK(params.store.at(i).v == before[i].v);
}

TEST_CASE("fifty-step single-problem overfit decreases the loss") {
  ProblemInstance p = board_problem();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 37);
  TrainConfig cfg;
  cfg.max_depth = 2;
  cfg.lr = 1e-3;
  cfg.threads = 1;
  AdamW opt(params, cfg);
  DepthLabels labels = make_labels(p, 2);

  std::vector<double> losses;
  for (int step = 0; step < 50; ++step)
    losses.push_back(
        training_step({&p}, {&labels}, params, vocab, opt, cfg, cfg.lr, 100, 1));
  int decreasing = 0;
  for (size_t i = 1; i < losses.size(); ++i) decreasing += losses[i] < losses[i - 1] ? 1 : 0;
  CHECK(decreasing >= 45);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("training is deterministic given seed, config, and data") {
  auto corpus = synth_generate(default_templates(), 24, 9);
  ConstantVocabulary consts = collect_constants(corpus);
  finalize_constants(corpus, consts);
  Vocabulary vocab = Vocabulary::build(corpus);

  auto run_once = [&]() {
    ModelConfig mc = tiny_config(vocab);
    mc.constant_values.clear();
    for (const Rational& v : consts.values) mc.constant_values.push_back(v.to_string());
    ModelParams params = build_model(mc, 41);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.swa_window = 1;
    cfg.batch_size = 4;
    cfg.seed = 2024;
    cfg.threads = 2;  // exercise the deterministic parallel reduction
    cfg.validate_every = 0;
    EngineConfig ec;
    FitResult r = fit(corpus, {}, params, vocab, cfg, ec);
    return std::pair<double, double>(r.report.epochs[0].loss, params.store.at(0).v[0]);
  };
  auto [loss1, p1] = run_once();
  auto [loss2, p2] = run_once();
  CHECK(loss1 == loss2);
  CHECK(p1 == p2);
}

TEST_CASE("learning-rate schedule follows the step decay") {
  TrainConfig cfg;
  cfg.lr = 1.3e-5;
  cfg.lr_decay_interval = 10;
  cfg.lr_decay_factor = 0.5;
  CHECK(cfg.lr_at(0) == doctest::Approx(1.3e-5).epsilon(1e-12));
  CHECK(cfg.lr_at(9) == doctest::Approx(1.3e-5).epsilon(1e-12));
  CHECK(cfg.lr_at(10) == doctest::Approx(6.5e-6).epsilon(1e-12));
  CHECK(cfg.lr_at(19) == doctest::Approx(6.5e-6).epsilon(1e-12));
  CHECK(cfg.lr_at(20) == doctest::Approx(3.25e-6).epsilon(1e-12));
}

TEST_CASE("swa checkpoint equals the mean of per-epoch parameters") {
  auto corpus = synth_generate(default_templates(), 16, 13);
  ConstantVocabulary consts = collect_constants(corpus);
  finalize_constants(corpus, consts);
  Vocabulary vocab = Vocabulary::build(corpus);
  ModelConfig mc = tiny_config(vocab);
  for (const Rational& v : consts.values) mc.constant_values.push_back(v.to_string());

  TrainConfig base;
  base.batch_size = 4;
  base.seed = 7;
  base.threads = 1;
  base.validate_every = 0;
  EngineConfig ec;

  // Snapshots after 1, 2, and 3 epochs (same seed => same trajectory).
  std::vector<std::vector<double>> snapshots;
  for (int epochs = 1; epochs <= 3; ++epochs) {
    ModelParams params = build_model(mc, 55);
    TrainConfig cfg = base;
    cfg.epochs = epochs;
    cfg.swa_window = 1;
    fit(corpus, {}, params, vocab, cfg, ec);
    std::vector<double> flat;
    for (int i = 0; i < params.store.count(); ++i)
      flat.insert(flat.end(), params.store.at(i).v.begin(), params.store.at(i).v.end());
    snapshots.push_back(std::move(flat));
  }

  ModelParams params = build_model(mc, 55);
  TrainConfig cfg = base;
  cfg.epochs = 3;
  cfg.swa_window = 3;
  FitResult r = fit(corpus, {}, params, vocab, cfg, ec);
  size_t at = 0;
  for (int i = 0; i < r.swa.store.count(); ++i) {
    const Tensor& t = r.swa.store.at(i);
    for (size_t k = 0; k < t.size(); ++k, ++at) {
      double mean = (snapshots[0][at] + snapshots[1][at] + snapshots[2][at]) / 3.0;
      CHECK(t.v[k] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("full-question goal mode trains and solves end to end") {
  auto corpus = synth_generate(default_templates(), 16, 47);
  ConstantVocabulary consts = collect_constants(corpus);
  finalize_constants(corpus, consts);
  Vocabulary vocab = Vocabulary::build(corpus);
  ModelConfig mc = tiny_config(vocab);
  mc.goal_mode = GoalMode::FullQuestion;
  for (const Rational& v : consts.values) mc.constant_values.push_back(v.to_string());
  ModelParams params = build_model(mc, 53);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.swa_window = 1;
  cfg.batch_size = 4;
  cfg.threads = 1;
  cfg.validate_every = 0;
  EngineConfig ec;
  ec.max_depth = 6;
  ec.candidate_cap = 100000;
  FitResult r = fit(corpus, {}, params, vocab, cfg, ec);
  CHECK(r.report.epochs[1].loss < r.report.epochs[0].loss);

  auto backend = make_neural_backend(params, vocab);
  SolveResult solved = solve(*backend, corpus[0], ec);
  CHECK(solved.expression != nullptr);
}

TEST_CASE("unreachable golds are skipped and reported by fit") {
  std::vector<ProblemInstance> corpus;
  corpus.push_back(board_problem());
  corpus.push_back(make_instance("deep", "Field of 80 by 40 grew 10 and 15.", "Gain?",
                                 "(80+10)*(40+15)-(80*40)"));
  Vocabulary vocab = Vocabulary::build(corpus);
  ModelParams params = build_model(tiny_config(vocab), 61);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.swa_window = 1;
  cfg.max_depth = 2;  // the depth-6 gold cannot be reached
  cfg.threads = 1;
  cfg.validate_every = 0;
  EngineConfig ec;
  FitResult r = fit(corpus, {}, params, vocab, cfg, ec);
  CHECK(r.report.skipped_examples == 1);
  REQUIRE(r.report.skipped_ids.size() == 1);
  CHECK(r.report.skipped_ids[0] == "deep");
}
