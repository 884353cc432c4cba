#include <doctest.h>

#include <algorithm>
#include <set>

#include "mwp/engine.hpp"

using namespace mwp;

namespace {

const char* kCtx =
    "The school playground was originally 80 meters long and 40 meters wide. Later the length "
    "is increased by 10 meters and the width is increased by 15 meters.";
const char* kQ2 = "How many square meters are increased by the current playground area?";
const char* kGoldEq = "(80+10)*(40+15)-(80*40)";

ProblemInstance table1() { return make_instance("t1", kCtx, kQ2, kGoldEq); }

ProblemInstance two_quantities() {
  return make_instance("two", "A board is 6 feet by 4 feet.", "What is the area?", "6*4");
}

std::set<std::string> to_set(const std::vector<std::string>& v) {
  return std::set<std::string>(v.begin(), v.end());
}

std::set<std::string> expr_set(const std::vector<Expr>& v) {
  std::set<std::string> out;
  for (const Expr& e : v) out.insert(serialize(e));
  return out;
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

}  // namespace

TEST_CASE("transform depth produces the four unary candidates") {
  ProblemInstance p = two_quantities();
  EngineConfig cfg;
  cfg.max_depth = 1;
  auto backend = make_accept_all_backend();
  SolveResult r = solve(*backend, p, cfg);
  REQUIRE(r.trace.depths.size() == 2);
  CHECK(to_set(r.trace.depths[1].candidates) ==
        std::set<std::string>{"(neg q0)", "(inv q0)", "(neg q1)", "(inv q1)"});
  CHECK(r.trace.stop == StopReason::DepthExhausted);
}

TEST_CASE("merge depth raw count matches the enumeration oracle") {
  ProblemInstance p = two_quantities();
  EngineConfig cfg;
  cfg.max_depth = 2;
  auto backend = make_accept_all_backend();
  SolveResult r = solve(*backend, p, cfg);
  CHECK(r.trace.depths[1].raw_candidates == 4);
  CHECK(r.trace.depths[2].raw_candidates == 42);

  Enumeration en = oracle_enumerate(2, 0, 2);
  CHECK(r.trace.depths[2].raw_candidates == en.at(2).raw_candidates);
}

TEST_CASE("accept-all engine equals the enumerator at every depth") {
  ProblemInstance p = make_instance("three", "Lia has 3 pears, 5 plums and 7 figs.",
                                    "How many fruits does she have?", "3+5+7");
  EngineConfig cfg;
  cfg.max_depth = 3;
  cfg.candidate_cap = 100000;
  auto backend = make_accept_all_backend();
  SolveResult r = solve(*backend, p, cfg);

  Enumeration en = oracle_enumerate(3, 0, 3);
  REQUIRE(r.trace.depths.size() == 4);
  for (int d = 0; d <= 3; ++d) {
    CHECK(to_set(r.trace.depths[static_cast<size_t>(d)].candidates) ==
          expr_set(en.at(d).candidates));
    CHECK(r.trace.depths[static_cast<size_t>(d)].raw_candidates == en.at(d).raw_candidates);
  }
}

TEST_CASE("containment oracle reproduces teacher sets and finds the gold") {
  ProblemInstance p = table1();
  EngineConfig cfg;
  cfg.max_depth = 6;
  auto backend = make_oracle_backend(p.gold);
  SolveResult r = solve(*backend, p, cfg);

  REQUIRE(r.expression != nullptr);
  CHECK(serialize(r.expression) == serialize(p.gold));
  CHECK(r.trace.stop == StopReason::Confidence);
  CHECK(r.trace.final_depth == 6);
  CHECK(r.trace.final_answer_score == 1.0);

  Enumeration en = oracle_enumerate(4, 0, 6, accept_contained_in(p.gold));
  for (int d = 0; d <= 6; ++d) {
    CHECK(to_set(r.trace.depths[static_cast<size_t>(d)].candidates) ==
          expr_set(en.at(d).candidates));
    CHECK(to_set(r.trace.depths[static_cast<size_t>(d)].accepted_new) ==
          expr_set(en.at(d).accepted_new));
  }
}

TEST_CASE("depth parity of candidate roots") {
  ProblemInstance p = two_quantities();
  EngineConfig cfg;
  cfg.max_depth = 4;
  cfg.candidate_cap = 100000;
  auto backend = make_accept_all_backend();
  SolveResult r = solve(*backend, p, cfg);
  for (size_t d = 1; d < r.trace.depths.size(); ++d) {
    for (const std::string& s : r.trace.depths[d].candidates) {
      bool unary = s.rfind("(neg ", 0) == 0 || s.rfind("(inv ", 0) == 0;
      bool binary = s.rfind("(+ ", 0) == 0 || s.rfind("(* ", 0) == 0;
      if (d % 2 == 1) {
        CHECK(unary);
      } else {
        CHECK(binary);
      }
    }
  }
}

TEST_CASE("premise length bookkeeping in both update modes") {
  ProblemInstance p = two_quantities();

  EngineConfig cfg;
  cfg.max_depth = 3;
  cfg.candidate_cap = 100000;
  auto backend = make_accept_all_backend();
  SolveResult r = solve(*backend, p, cfg);
  // Paper mode re-appends the whole accumulated set every depth.
  int reasonable = r.trace.initial_accepted;
  int expect = 1;
  for (size_t d = 1; d < r.trace.depths.size(); ++d) {
    expect += reasonable;
    CHECK(r.trace.depths[d].premise_length == expect);
    reasonable += static_cast<int>(r.trace.depths[d].accepted_new.size());
  }

  EngineConfig cfg2 = cfg;
  cfg2.premise_update_new_only = true;
  auto backend2 = make_accept_all_backend();
  SolveResult r2 = solve(*backend2, p, cfg2);
  int expect2 = 1;
  int prev_new = r2.trace.initial_accepted;
  for (size_t d = 1; d < r2.trace.depths.size(); ++d) {
    expect2 += prev_new;
    CHECK(r2.trace.depths[d].premise_length == expect2);
    prev_new = static_cast<int>(r2.trace.depths[d].accepted_new.size());
  }
  CHECK(r2.trace.depths.back().premise_length < r.trace.depths.back().premise_length);
}

TEST_CASE("reasonable sets accumulate") {
  ProblemInstance p = table1();
  EngineConfig cfg;
  cfg.max_depth = 6;
  auto backend = make_oracle_backend(p.gold);
  ExpansionRun run(*backend, p, cfg);
  size_t prev = run.reasonable_ids().size();
  while (!run.finished()) {
    run.step();
    CHECK(run.reasonable_ids().size() >= prev);
    prev = run.reasonable_ids().size();
  }
}

TEST_CASE("zero-valued scoring heads accept everything and never stop early") {
  ProblemInstance p = two_quantities();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 21);
  for (double& v : params.store.at(params.w_r).v) v = 0;
  params.store.at(params.b_r).v[0] = 0;
  for (double& v : params.store.at(params.w_a).v) v = 0;
  params.store.at(params.b_a).v[0] = 0;

  EngineConfig cfg;
  cfg.max_depth = 2;
  cfg.candidate_cap = 100000;
  auto backend = make_neural_backend(params, vocab);
  SolveResult r = solve(*backend, p, cfg);

  CHECK(r.trace.stop == StopReason::DepthExhausted);
  for (const DepthTrace& d : r.trace.depths) {
    for (double s : d.infer_scores) CHECK(s == 0.5);
    CHECK(d.accepted_new.size() == d.candidates.size());  // 0.5 >= t_r
    CHECK(d.best_answer_score == 0.5);
  }

  // Same candidate sets as the accept-all oracle run.
  auto oracle = make_accept_all_backend();
  SolveResult q = solve(*oracle, p, cfg);
  for (size_t d = 0; d < q.trace.depths.size(); ++d)
    CHECK(to_set(r.trace.depths[d].candidates) == to_set(q.trace.depths[d].candidates));
}

TEST_CASE("neural run with random parameters produces a bounded trace") {
  ProblemInstance p = two_quantities();
  Vocabulary vocab = Vocabulary::build({p});
  ModelParams params = build_model(tiny_config(vocab), 22);
  EngineConfig cfg;
  cfg.max_depth = 2;
  cfg.candidate_cap = 100000;
  auto backend = make_neural_backend(params, vocab);
  SolveResult r = solve(*backend, p, cfg);
  REQUIRE(r.expression != nullptr);
  for (const DepthTrace& d : r.trace.depths)
    for (double s : d.infer_scores) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }

  // Candidate counts are bounded by the accept-all expansion.
  auto oracle = make_accept_all_backend();
  SolveResult q = solve(*oracle, p, cfg);
  CHECK(r.trace.total_candidates() <= q.trace.total_candidates());
}

TEST_CASE("oracle completeness on synthetic instances") {
  auto corpus = synth_generate(default_templates(), 60, 17);
  ConstantVocabulary consts = collect_constants(corpus);
  finalize_constants(corpus, consts);
  EngineConfig cfg;
  cfg.max_depth = 6;
  for (const ProblemInstance& p : corpus) {
    auto backend = make_oracle_backend(p.gold);
    SolveResult r = solve(*backend, p, cfg);
    REQUIRE(r.expression != nullptr);
    EvalResult pred = evaluate(r.expression, p.env);
    EvalResult gold = evaluate(p.gold, p.env);
    REQUIRE(pred.finite);
    REQUIRE(gold.finite);
    CHECK(pred.value == gold.value);
    CHECK(r.trace.final_depth == required_depth(p.gold));
  }
}

TEST_CASE("candidate cap aborts with a diagnostic") {
  ProblemInstance p = make_instance("big", "Numbers 3 5 7 11 13 17 appear here.",
                                    "What is 3+5?", "3+5");
  EngineConfig cfg;
  cfg.max_depth = 4;
  cfg.candidate_cap = 60;
  auto backend = make_accept_all_backend();
  CHECK_THROWS_AS(solve(*backend, p, cfg), EngineError);
}

TEST_CASE("a problem without quantities or constants is an error") {
  ProblemInstance p;
  p.id = "empty";
  EngineConfig cfg;
  auto backend = make_accept_all_backend();
  CHECK_THROWS_AS(ExpansionRun(*backend, p, cfg), EngineError);
}

TEST_CASE("engine config validation") {
  EngineConfig cfg;
  cfg.accept_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), EngineError);
  cfg = EngineConfig{};
  cfg.candidate_cap = 0;
  CHECK_THROWS_AS(cfg.validate(), EngineError);
}
