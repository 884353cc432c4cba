#include "mwp/eval.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace mwp {

using nlohmann::json;

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  threads = std::min(threads, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

bool answer_accuracy(const Expr& pred, const Expr& gold, const QuantityEnv& env) {
  EvalResult p = evaluate(pred, env);
  EvalResult g = evaluate(gold, env);
  if (!p.finite || !g.finite) return false;
  double pv = p.value.to_double();
  double gv = g.value.to_double();
  return std::abs(pv - gv) <= 1e-4 * std::max(1.0, std::abs(gv));
}

namespace {

int distinct_subexpr_count(const Expr& e) {
  std::unordered_set<std::string> seen;
  std::vector<Expr> stack{e};
  while (!stack.empty()) {
    Expr x = stack.back();
    stack.pop_back();
    if (!seen.insert(x->serial).second) continue;
    if (x->left) stack.push_back(x->left);
    if (x->right) stack.push_back(x->right);
  }
  return static_cast<int>(seen.size());
}

StatLine stat_line(const std::vector<double>& xs) {
  StatLine s;
  if (xs.empty()) return s;
  s.min = xs[0];
  s.max = xs[0];
  double sum = 0;
  for (double x : xs) {
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
    sum += x;
  }
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    var /= static_cast<double>(xs.size() - 1);
    s.stderr_mean = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return s;
}

ExampleRecord run_one(const ProblemInstance& p, const BackendFactory& factory,
                      const EngineConfig& cfg) {
  ExampleRecord rec;
  rec.id = p.id;
  rec.gold = serialize(p.gold);
  EvalResult gv = evaluate(p.gold, p.env);
  rec.gold_value = gv.finite ? gv.value.to_double() : 0.0;
  try {
    auto backend = factory(p);
    SolveResult r = solve(*backend, p, cfg);
    rec.depth_used = r.trace.final_depth;
    rec.total_candidates = r.trace.total_candidates();
    rec.last_depth_candidates = r.trace.last_depth_candidates();
    rec.stop_reason =
        r.trace.stop == StopReason::Confidence ? "confidence" : "depth-exhausted";
    if (r.expression) {
      rec.predicted = serialize(r.expression);
      EvalResult pv = evaluate(r.expression, p.env);
      rec.predicted_finite = pv.finite;
      rec.predicted_value = pv.finite ? pv.value.to_double() : 0.0;
      rec.correct = answer_accuracy(r.expression, p.gold, p.env);
      rec.path_thoughts = distinct_subexpr_count(r.expression);
      rec.path_depth = required_depth(r.expression);
    }
  } catch (const std::exception& e) {
    rec.stop_reason = std::string("error: ") + e.what();
  }
  return rec;
}

}  // namespace

BackendFactory neural_backend_factory(const ModelParams& params, const Vocabulary& vocab) {
  return [&params, &vocab](const ProblemInstance&) { return make_neural_backend(params, vocab); };
}

BackendFactory oracle_backend_factory() {
  return [](const ProblemInstance& p) { return make_oracle_backend(p.gold); };
}

BackendFactory accept_all_backend_factory() {
  return [](const ProblemInstance&) { return make_accept_all_backend(); };
}

EvalReport evaluate_dataset(const std::vector<ProblemInstance>& split,
                            const BackendFactory& factory, const EngineConfig& cfg,
                            const std::vector<uint64_t>& seeds, int threads) {
  EvalReport report;
  std::vector<uint64_t> run_seeds = seeds.empty() ? std::vector<uint64_t>{0} : seeds;
  int n = static_cast<int>(split.size());

  for (size_t si = 0; si < run_seeds.size(); ++si) {
    std::vector<ExampleRecord> records(static_cast<size_t>(n));
    parallel_for(n, threads, [&](int i) {
      records[static_cast<size_t>(i)] = run_one(split[static_cast<size_t>(i)], factory, cfg);
    });
    int correct = 0;
    for (const ExampleRecord& r : records) correct += r.correct ? 1 : 0;
    double acc = n > 0 ? static_cast<double>(correct) / n : 0.0;
    report.per_seed_accuracy.push_back(acc);
    if (si == 0) {
      report.examples = std::move(records);
      report.evaluated = n;
      report.correct = correct;
      report.accuracy = acc;
    }
  }

  StatLine acc_stats = stat_line(report.per_seed_accuracy);
  report.accuracy_stderr = acc_stats.stderr_mean;

  std::vector<double> total, last, thoughts, depth;
  for (const ExampleRecord& r : report.examples) {
    if (r.predicted.empty()) continue;
    total.push_back(r.total_candidates);
    last.push_back(r.last_depth_candidates);
    thoughts.push_back(r.path_thoughts);
    depth.push_back(r.path_depth);
  }
  report.total_candidates = stat_line(total);
  report.last_depth_candidates = stat_line(last);
  report.path_thoughts = stat_line(thoughts);
  report.path_depth = stat_line(depth);
  return report;
}

double split_accuracy(const std::vector<ProblemInstance>& split, const ModelParams& params,
                      const Vocabulary& vocab, const EngineConfig& cfg, int threads) {
  if (split.empty()) return 0.0;
  EvalReport r = evaluate_dataset(split, neural_backend_factory(params, vocab), cfg, {0}, threads);
  return r.accuracy;
}

ThoughtStats oracle_thought_stats(const std::vector<ProblemInstance>& split, bool ideal,
                                  int max_depth, int candidate_cap, int threads) {
  ThoughtStats stats;
  int n = static_cast<int>(split.size());
  struct Row {
    bool ok = false;
    double total = 0, last = 0, thoughts = 0, depth = 0;
  };
  std::vector<Row> rows(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int i) {
    const ProblemInstance& p = split[static_cast<size_t>(i)];
    Row& row = rows[static_cast<size_t>(i)];
    int rd = required_depth(p.gold);
    if (ideal && rd > max_depth) return;
    EngineConfig cfg;
    cfg.max_depth = max_depth;
    cfg.candidate_cap = candidate_cap;
    auto backend = ideal ? make_oracle_backend(p.gold) : make_accept_all_backend();
    SolveResult r = solve(*backend, p, cfg);
    row.ok = true;
    row.total = r.trace.total_candidates();
    row.last = r.trace.last_depth_candidates();
    row.thoughts = distinct_subexpr_count(ideal ? p.gold : r.expression ? r.expression : p.gold);
    row.depth = ideal ? rd : r.trace.final_depth;
  });
  std::vector<double> total, last, thoughts, depth;
  for (const Row& r : rows) {
    if (!r.ok) {
      ++stats.skipped;
      continue;
    }
    total.push_back(r.total);
    last.push_back(r.last);
    thoughts.push_back(r.thoughts);
    depth.push_back(r.depth);
  }
  stats.count = static_cast<int>(total.size());
  stats.total_candidates = stat_line(total);
  stats.last_depth_candidates = stat_line(last);
  stats.path_thoughts = stat_line(thoughts);
  stats.path_depth = stat_line(depth);
  return stats;
}

std::vector<SweepCell> sweep_stop_criteria(const std::vector<ProblemInstance>& split,
                                           const ModelParams& params, const Vocabulary& vocab,
                                           const EngineConfig& base,
                                           const std::vector<std::pair<double, int>>& grid,
                                           int threads) {
  std::vector<SweepCell> cells;
  for (const auto& [tf, offset] : grid) {
    EngineConfig cfg = base;
    cfg.confidence_threshold = tf;
    cfg.max_depth = base.max_depth + offset;
    SweepCell cell;
    cell.confidence_threshold = tf;
    cell.depth_offset = offset;
    cell.accuracy = split_accuracy(split, params, vocab, cfg, threads);
    cells.push_back(cell);
  }
  return cells;
}

AttentionExport export_attention(const ProblemInstance& problem, const ModelParams& params,
                                 const Vocabulary& vocab, const EngineConfig& cfg) {
  auto backend = make_neural_backend(params, vocab);
  ExpansionRun run(*backend, problem, cfg);
  run.finish();

  AttentionExport out;
  out.tokens = problem.tokens;

  nn::Graph g;
  EncodedProblem enc = encode(g, params, vocab, problem);

  // A thought's embedding is a pure function of its canonical expression, so
  // the reasonable set is rebuilt bottom-up from expressions.
  std::unordered_map<std::string, nn::Var> memo;
  for (const Thought& t : enc.initial_thoughts) memo.emplace(serialize(t.expr), t.embedding);
  std::function<nn::Var(const Expr&)> build = [&](const Expr& e) -> nn::Var {
    auto it = memo.find(e->serial);
    if (it != memo.end()) return it->second;
    nn::Var v;
    if (e->is_unary()) {
      TransformOp op =
          e->kind == ExprKind::Negate ? TransformOp::Negate : TransformOp::Reciprocal;
      v = transform_embed(g, params, op, build(e->left));
    } else {
      MergeOp op = e->kind == ExprKind::Add ? MergeOp::Add : MergeOp::Mul;
      v = merge_embed(g, params, op, build(e->left), build(e->right));
    }
    memo.emplace(e->serial, v);
    return v;
  };

  std::vector<nn::Var> rows;
  for (int id : run.reasonable_ids()) {
    const Expr& e = run.all_exprs()[static_cast<size_t>(id)];
    out.thought_exprs.push_back(serialize(e));
    rows.push_back(answer_attention_weights(g, params, enc.X, build(e)));
  }
  out.weights = nn::Tensor(static_cast<int>(rows.size()), static_cast<int>(problem.tokens.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    const nn::Tensor& w = g.value(rows[i]);
    for (int j = 0; j < w.cols; ++j) out.weights.at(static_cast<int>(i), j) = w.at(0, j);
  }
  return out;
}

// --- structured outputs --------------------------------------------------------

namespace {

json stat_json(const StatLine& s) {
  return {{"min", s.min}, {"mean", s.mean}, {"max", s.max}, {"stderr", s.stderr_mean}};
}

}  // namespace

void write_eval_report(const std::string& path, const EvalReport& report) {
  json doc;
  doc["evaluated"] = report.evaluated;
  doc["correct"] = report.correct;
  doc["accuracy"] = report.accuracy;
  doc["accuracy_stderr"] = report.accuracy_stderr;
  doc["per_seed_accuracy"] = report.per_seed_accuracy;
  doc["scorer"] = report.scorer;
  doc["thought_statistics"] = {{"total_candidates", stat_json(report.total_candidates)},
                               {"last_depth_candidates", stat_json(report.last_depth_candidates)},
                               {"path_thoughts", stat_json(report.path_thoughts)},
                               {"path_depth", stat_json(report.path_depth)}};
  json examples = json::array();
  for (const ExampleRecord& r : report.examples) {
    examples.push_back({{"id", r.id},
                        {"predicted", r.predicted},
                        {"gold", r.gold},
                        {"predicted_value", r.predicted_value},
                        {"gold_value", r.gold_value},
                        {"correct", r.correct},
                        {"stop_reason", r.stop_reason},
                        {"depth_used", r.depth_used},
                        {"total_candidates", r.total_candidates}});
  }
  doc["examples"] = std::move(examples);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

void write_trace(const std::string& path, const ProblemInstance& problem,
                 const ExpansionTrace& trace, const QuantityEnv& env) {
  json doc;
  doc["id"] = problem.id;
  doc["stop"] = trace.stop == StopReason::Confidence ? "confidence" : "depth-exhausted";
  doc["final_depth"] = trace.final_depth;
  doc["final_expr"] = trace.final_expr;
  doc["final_answer_score"] = trace.final_answer_score;
  doc["initial_count"] = trace.initial_count;
  doc["initial_accepted"] = trace.initial_accepted;
  doc["initial_fallback"] = trace.initial_fallback;
  json depths = json::array();
  for (const DepthTrace& d : trace.depths) {
    json cands = json::array();
    for (size_t i = 0; i < d.candidates.size(); ++i) {
      json c;
      c["expr"] = d.candidates[i];
      if (i < d.infer_scores.size()) c["infer"] = d.infer_scores[i];
      cands.push_back(std::move(c));
    }
    depths.push_back({{"depth", d.depth},
                      {"raw_candidates", d.raw_candidates},
                      {"candidates", std::move(cands)},
                      {"accepted_new", d.accepted_new},
                      {"premise_length", d.premise_length},
                      {"best_answer_score", d.best_answer_score},
                      {"best_answer_expr", d.best_answer_expr}});
  }
  doc["depths"] = std::move(depths);
  (void)env;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

void write_attention(const std::string& path, const AttentionExport& att) {
  json doc;
  doc["tokens"] = att.tokens;
  json rows = json::array();
  for (int i = 0; i < att.weights.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < att.weights.cols; ++j) row.push_back(att.weights.at(i, j));
    rows.push_back({{"thought", att.thought_exprs[static_cast<size_t>(i)]}, {"weights", row}});
  }
  doc["attention"] = std::move(rows);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace mwp
