// Command-line surface for the thought-expansion math word problem solver.
//
// Subcommands: synth, split, train, eval, solve, oracle-stats, sweep, viz-attn.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mwp/eval.hpp"
#include "mwp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mwp;

namespace {

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  EngineConfig engine;
  std::string scorer;  // engine-section default for --scorer
  bool engine_premise_mode_explicit = false;

  // Inference follows the checkpoint's premise-update mode unless the config
  // file's engine section overrides it.
  void inherit_premise_mode(const ModelConfig& trained) {
    if (!engine_premise_mode_explicit) engine.premise_update_new_only =
        trained.premise_update_new_only;
  }
};

void merge_model(ModelConfig& m, const json& j) {
  m.hidden = j.value("hidden", m.hidden);
  m.heads = j.value("heads", m.heads);
  m.encoder_layers = j.value("encoder_layers", m.encoder_layers);
  m.ff_multiplier = j.value("ff_multiplier", m.ff_multiplier);
  m.max_sequence = j.value("max_sequence", m.max_sequence);
  m.dropout = j.value("dropout", m.dropout);
  if (j.contains("goal_mode")) m.goal_mode = goal_mode_from_string(j["goal_mode"]);
  m.premise_update_new_only = j.value("premise_update_new_only", m.premise_update_new_only);
  m.freeze_encoder = j.value("freeze_encoder", m.freeze_encoder);
}

void merge_train(TrainConfig& t, const json& j) {
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.lr_decay_interval = j.value("lr_decay_interval", t.lr_decay_interval);
  t.lr_decay_factor = j.value("lr_decay_factor", t.lr_decay_factor);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.epochs = j.value("epochs", t.epochs);
  t.swa_window = j.value("swa_window", t.swa_window);
  t.seed = j.value("seed", t.seed);
  t.grad_clip_norm = j.value("grad_clip_norm", t.grad_clip_norm);
  t.max_depth = j.value("max_depth", t.max_depth);
  t.validate_every = j.value("validate_every", t.validate_every);
  t.validation_limit = j.value("validation_limit", t.validation_limit);
  t.threads = j.value("threads", t.threads);
}

void merge_engine(EngineConfig& e, const json& j) {
  e.max_depth = j.value("max_depth", e.max_depth);
  e.accept_threshold = j.value("accept_threshold", e.accept_threshold);
  e.confidence_threshold = j.value("confidence_threshold", e.confidence_threshold);
  e.candidate_cap = j.value("candidate_cap", e.candidate_cap);
  e.premise_update_new_only = j.value("premise_update_new_only", e.premise_update_new_only);
}

AppConfig load_config(const std::string& path) {
  AppConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (doc.contains("model")) merge_model(cfg.model, doc["model"]);
  if (doc.contains("train")) merge_train(cfg.train, doc["train"]);
  if (doc.contains("engine")) {
    merge_engine(cfg.engine, doc["engine"]);
    cfg.scorer = doc["engine"].value("scorer", cfg.scorer);
    cfg.engine_premise_mode_explicit = doc["engine"].contains("premise_update_new_only");
  }
  if (!cfg.engine_premise_mode_explicit)
    cfg.engine.premise_update_new_only = cfg.model.premise_update_new_only;
  return cfg;
}

// Maximum reasoning depth of the test examples per benchmark.
const std::map<std::string, int> kDatasetDepth = {
    {"mawps", 7}, {"asdiv-a", 5}, {"svamp", 5}, {"math23k", 19}, {"unbiasedmwp", 9}};

std::vector<ProblemInstance> load_split_file(const std::string& path, const std::string& dialect,
                                             const ConstantVocabulary& constants,
                                             LoadDiagnostics* diag) {
  auto instances = load_problems(path, dialect, nullptr, diag);
  finalize_constants(instances, constants, diag);
  return instances;
}

// For checkpoint-free paths: bind constants harvested from the data itself.
std::vector<ProblemInstance> load_self_contained(const std::string& path,
                                                 const std::string& dialect,
                                                 LoadDiagnostics* diag) {
  auto instances = load_problems(path, dialect, nullptr, diag);
  ConstantVocabulary constants = collect_constants(instances);
  finalize_constants(instances, constants, diag);
  return instances;
}

ConstantVocabulary constants_from_config(const ModelConfig& cfg) {
  ConstantVocabulary vocab;
  for (const std::string& s : cfg.constant_values) vocab.values.push_back(Rational::parse(s));
  return vocab;
}

struct LoadedModel {
  ModelParams params;
  Vocabulary vocab;
  ConstantVocabulary constants;
};

LoadedModel load_model(const std::string& checkpoint, const std::string& vocab_path) {
  LoadedModel m{load_checkpoint(checkpoint), Vocabulary::load(vocab_path), {}};
  m.constants = constants_from_config(m.params.config);
  return m;
}

void report_diagnostics(const LoadDiagnostics& diag) {
  if (diag.skipped == 0) return;
  std::cerr << diag.skipped << " record(s) skipped:\n";
  for (size_t i = 0; i < diag.messages.size() && i < 10; ++i)
    std::cerr << "  " << diag.messages[i] << "\n";
  if (diag.messages.size() > 10)
    std::cerr << "  ... and " << diag.messages.size() - 10 << " more\n";
}

std::vector<std::pair<double, int>> parse_grid(const std::string& text) {
  // "0.95:0,0.5:0,0.95:2" -> {(0.95,0),(0.5,0),(0.95,2)}
  std::vector<std::pair<double, int>> grid;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    std::string cell = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
    size_t colon = cell.find(':');
    if (colon == std::string::npos) throw DataError("bad sweep grid cell: " + cell);
    grid.emplace_back(std::stod(cell.substr(0, colon)), std::stoi(cell.substr(colon + 1)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return grid;
}

int run(int argc, char** argv) {
  CLI::App app{"thought-expansion math word problem solver"};
  app.require_subcommand(1);

  std::string config_path, data_path, val_path, dialect = "jsonl", out_dir = ".";
  std::string checkpoint, vocab_path, report_path, problem_id, out_path;
  std::string protocol = "one-to-many", scorer = "neural", mode = "ideal", dataset, grid_text;
  int count = 2000, seeds = 1, depth = -1, threads = 0;
  uint64_t seed = 1;
  double train_frac = 0.85, val_frac = 0.05;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--count", count, "minimum instance count (rounded up to whole groups)");
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_path, "output jsonl path")->required();

  auto* split = app.add_subcommand("split", "split a dataset by context groups");
  split->add_option("--data", data_path)->required();
  split->add_option("--dialect", dialect);
  split->add_option("--protocol", protocol, "one-to-many | random");
  split->add_option("--seed", seed);
  split->add_option("--train-frac", train_frac);
  split->add_option("--val-frac", val_frac);
  split->add_option("--out-dir", out_dir);

  auto* train = app.add_subcommand("train", "teacher-forced training");
  train->add_option("--data", data_path)->required();
  train->add_option("--val", val_path);
  train->add_option("--dialect", dialect);
  train->add_option("--config", config_path);
  train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--threads", threads);
  train->add_option("--resume", checkpoint, "checkpoint to continue from");
  train->add_option("--out-dir", out_dir);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--data", data_path)->required();
  eval->add_option("--dialect", dialect);
  eval->add_option("--checkpoint", checkpoint);
  eval->add_option("--vocab", vocab_path);
  eval->add_option("--scorer", scorer, "neural | oracle | accept-all");
  eval->add_option("--seed", seed, "base seed for the repeats");
  eval->add_option("--seeds", seeds, "number of evaluation repeats");
  eval->add_option("--depth", depth, "max expansion depth D");
  eval->add_option("--dataset", dataset, "named depth preset (mawps, asdiv-a, ...)");
  eval->add_option("--config", config_path);
  eval->add_option("--threads", threads);
  eval->add_option("--report", report_path);

  auto* solve_cmd = app.add_subcommand("solve", "solve one problem (from --data or stdin)");
  solve_cmd->add_option("--checkpoint", checkpoint);
  solve_cmd->add_option("--vocab", vocab_path);
  solve_cmd->add_option("--data", data_path);
  solve_cmd->add_option("--dialect", dialect);
  solve_cmd->add_option("--id", problem_id, "problem id within --data");
  solve_cmd->add_option("--scorer", scorer, "neural | oracle");
  solve_cmd->add_option("--depth", depth);
  solve_cmd->add_option("--config", config_path);
  solve_cmd->add_option("--trace", out_path, "write the expansion trace here");

  auto* stats = app.add_subcommand("oracle-stats", "thought statistics over a dataset");
  stats->add_option("--data", data_path)->required();
  stats->add_option("--dialect", dialect);
  stats->add_option("--mode", mode, "ideal | accept-all");
  stats->add_option("--depth", depth);
  stats->add_option("--dataset", dataset);
  stats->add_option("--threads", threads);
  stats->add_option("--report", report_path);

  auto* sweep = app.add_subcommand("sweep", "stop-criteria sweep over (t_f, D) cells");
  sweep->add_option("--data", data_path)->required();
  sweep->add_option("--dialect", dialect);
  sweep->add_option("--checkpoint", checkpoint)->required();
  sweep->add_option("--vocab", vocab_path)->required();
  sweep->add_option("--grid", grid_text, "cells as tf:depth_offset, e.g. 0.95:0,0.5:0,0.95:2");
  sweep->add_option("--depth", depth);
  sweep->add_option("--config", config_path);
  sweep->add_option("--threads", threads);
  sweep->add_option("--report", report_path);

  auto* viz = app.add_subcommand("viz-attn", "export answer-layer attention over tokens");
  viz->add_option("--data", data_path)->required();
  viz->add_option("--dialect", dialect);
  viz->add_option("--checkpoint", checkpoint)->required();
  viz->add_option("--vocab", vocab_path)->required();
  viz->add_option("--id", problem_id);
  viz->add_option("--depth", depth);
  viz->add_option("--config", config_path);
  viz->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  AppConfig cfg = load_config(config_path);
  if (!cfg.scorer.empty() && !eval->count("--scorer") && !solve_cmd->count("--scorer"))
    scorer = cfg.scorer;
  if (threads > 0) cfg.train.threads = threads;
  if (!dataset.empty()) {
    auto it = kDatasetDepth.find(dataset);
    if (it == kDatasetDepth.end()) throw DataError("unknown dataset preset: " + dataset);
    if (depth < 0) depth = it->second;
  }
  if (depth >= 0) {
    cfg.engine.max_depth = depth;
    cfg.train.max_depth = std::max(cfg.train.max_depth, depth);
  }

  if (*synth) {
    auto corpus = synth_generate(default_templates(), count, seed);
    write_jsonl(out_path, corpus);
    std::cout << "wrote " << corpus.size() << " instances to " << out_path << "\n";
    return 0;
  }

  if (*split) {
    LoadDiagnostics diag;
    auto instances = load_problems(data_path, dialect, nullptr, &diag);
    report_diagnostics(diag);
    DatasetSplit s;
    if (protocol == "one-to-many")
      s = one_to_many_split(instances, normalized_context_key, seed);
    else if (protocol == "random")
      s = random_group_split(instances, normalized_context_key, train_frac, val_frac, seed);
    else
      throw DataError("unknown split protocol: " + protocol);
    fs::create_directories(out_dir);
    write_jsonl(out_dir + "/train.jsonl", s.train);
    write_jsonl(out_dir + "/validation.jsonl", s.validation);
    write_jsonl(out_dir + "/test.jsonl", s.test);
    write_split_manifest(out_dir + "/manifest.json", s);
    std::cout << "protocol " << s.protocol << " seed " << s.seed << ": " << s.train.size()
              << " train / " << s.validation.size() << " validation / " << s.test.size()
              << " test (" << s.group_count_multi << " multi-groups, " << s.group_count_single
              << " singletons)\n";
    return 0;
  }

  if (*train) {
    if (train->count("--seed")) cfg.train.seed = seed;
    LoadDiagnostics diag;
    auto train_set = load_problems(data_path, dialect, nullptr, &diag);
    ConstantVocabulary constants = collect_constants(train_set);
    finalize_constants(train_set, constants, &diag);
    std::vector<ProblemInstance> val_set;
    if (!val_path.empty()) val_set = load_split_file(val_path, dialect, constants, &diag);
    report_diagnostics(diag);

    Vocabulary vocab = Vocabulary::build(train_set);
    ModelParams params = [&]() {
      if (!checkpoint.empty()) return load_checkpoint(checkpoint);
      ModelConfig mc = cfg.model;
      mc.vocab_size = vocab.size();
      mc.constant_values.clear();
      for (const Rational& v : constants.values) mc.constant_values.push_back(v.to_string());
      return build_model(mc, cfg.train.seed);
    }();

    FitResult result = fit(train_set, val_set, params, vocab, cfg.train, cfg.engine);

    fs::create_directories(out_dir);
    save_checkpoint(out_dir + "/last.ckpt", params);
    save_checkpoint(out_dir + "/swa.ckpt", result.swa);
    vocab.save(out_dir + "/vocab.txt");
    write_train_report(out_dir + "/train_report.json", result.report, cfg.train);
    const EpochRecord& last = result.report.epochs.back();
    std::cout << "trained " << cfg.train.epochs << " epochs in " << result.report.wall_seconds
              << " s; final loss " << last.loss;
    if (last.val_accuracy >= 0) std::cout << ", validation accuracy " << last.val_accuracy;
    std::cout << "\ncheckpoints: " << out_dir << "/last.ckpt, " << out_dir << "/swa.ckpt\n";
    return 0;
  }

  if (*eval) {
    std::optional<LoadedModel> model;
    BackendFactory factory;
    ConstantVocabulary constants;
    if (scorer == "neural") {
      if (checkpoint.empty() || vocab_path.empty())
        throw DataError("neural evaluation needs --checkpoint and --vocab");
      model.emplace(load_model(checkpoint, vocab_path));
      cfg.inherit_premise_mode(model->params.config);
      constants = model->constants;
      factory = neural_backend_factory(model->params, model->vocab);
    } else if (scorer == "oracle") {
      factory = oracle_backend_factory();
    } else if (scorer == "accept-all") {
      factory = accept_all_backend_factory();
    } else {
      throw DataError("unknown scorer: " + scorer);
    }
    LoadDiagnostics diag;
    auto instances = scorer == "neural" ? load_split_file(data_path, dialect, constants, &diag)
                                        : load_self_contained(data_path, dialect, &diag);
    report_diagnostics(diag);

    std::vector<uint64_t> seed_list;
    for (int i = 0; i < std::max(seeds, 1); ++i) seed_list.push_back(seed + static_cast<uint64_t>(i));
    EvalReport report = evaluate_dataset(instances, factory, cfg.engine, seed_list,
                                         cfg.train.threads);
    report.scorer = scorer;
    std::cout << "accuracy " << report.accuracy << " +- " << report.accuracy_stderr << " over "
              << report.evaluated << " problems (" << scorer << ", D=" << cfg.engine.max_depth
              << ")\n";
    std::cout << "thoughts: total " << report.total_candidates.mean << ", last depth "
              << report.last_depth_candidates.mean << ", path " << report.path_thoughts.mean
              << ", depth " << report.path_depth.mean << "\n";
    if (!report_path.empty()) write_eval_report(report_path, report);
    return 0;
  }

  if (*solve_cmd) {
    ConstantVocabulary constants;
    std::optional<LoadedModel> model;
    if (scorer == "neural") {
      if (checkpoint.empty() || vocab_path.empty())
        throw DataError("neural solving needs --checkpoint and --vocab");
      model.emplace(load_model(checkpoint, vocab_path));
      cfg.inherit_premise_mode(model->params.config);
      constants = model->constants;
    }
    std::vector<ProblemInstance> instances;
    LoadDiagnostics diag;
    if (!data_path.empty()) {
      instances = scorer == "neural" ? load_split_file(data_path, dialect, constants, &diag)
                                     : load_self_contained(data_path, dialect, &diag);
    } else {
      std::string line;
      std::getline(std::cin, line);
      json rec = json::parse(line);
      instances.push_back(make_instance(rec.value("id", "stdin"), rec.value("context", ""),
                                        rec.value("question", ""), rec.value("equation", "")));
      finalize_constants(instances, constants, &diag);
    }
    report_diagnostics(diag);
    if (instances.empty()) throw DataError("no problem to solve");
    const ProblemInstance* problem = &instances[0];
    if (!problem_id.empty()) {
      problem = nullptr;
      for (const auto& p : instances)
        if (p.id == problem_id) problem = &p;
      if (!problem) throw DataError("problem id not found: " + problem_id);
    }

    auto backend = scorer == "neural" ? make_neural_backend(model->params, model->vocab)
                                      : make_oracle_backend(problem->gold);
    SolveResult r = solve(*backend, *problem, cfg.engine);
    std::cout << "problem " << problem->id << "\n";
    if (r.expression) {
      EvalResult value = evaluate(r.expression, problem->env);
      std::cout << "predicted " << to_infix(r.expression, &problem->env.quantities,
                                            &problem->env.constants)
                << " = " << (value.finite ? value.value.to_string() : "non-finite") << "\n";
      std::cout << "gold      " << to_infix(problem->gold, &problem->env.quantities,
                                            &problem->env.constants)
                << (answer_accuracy(r.expression, problem->gold, problem->env) ? "  [correct]"
                                                                               : "  [wrong]")
                << "\n";
    }
    std::cout << "stop: " << (r.trace.stop == StopReason::Confidence ? "confidence" : "depth")
              << " at depth " << r.trace.final_depth << ", " << r.trace.total_candidates()
              << " candidates\n";
    if (!out_path.empty()) write_trace(out_path, *problem, r.trace, problem->env);
    return 0;
  }

  if (*stats) {
    LoadDiagnostics diag;
    auto instances = load_self_contained(data_path, dialect, &diag);
    report_diagnostics(diag);
    int d = depth >= 0 ? depth : cfg.engine.max_depth;
    ThoughtStats ts = oracle_thought_stats(instances, mode == "ideal", d, 200000,
                                           cfg.train.threads);
    auto line = [](const char* name, const StatLine& s) {
      std::cout << name << ": min " << s.min << ", mean " << s.mean << " +- " << s.stderr_mean
                << ", max " << s.max << "\n";
    };
    std::cout << "mode " << mode << ", D=" << d << ", " << ts.count << " problems";
    if (ts.skipped) std::cout << " (" << ts.skipped << " skipped)";
    std::cout << "\n";
    line("candidates in total depth", ts.total_candidates);
    line("in a reasoning path", ts.path_thoughts);
    line("candidates in last depth", ts.last_depth_candidates);
    line("depth of reasoning path", ts.path_depth);
    if (!report_path.empty()) {
      json doc = {{"mode", mode},
                  {"max_depth", d},
                  {"count", ts.count},
                  {"skipped", ts.skipped},
                  {"total_candidates",
                   {{"min", ts.total_candidates.min},
                    {"mean", ts.total_candidates.mean},
                    {"max", ts.total_candidates.max},
                    {"stderr", ts.total_candidates.stderr_mean}}},
                  {"path_thoughts",
                   {{"min", ts.path_thoughts.min},
                    {"mean", ts.path_thoughts.mean},
                    {"max", ts.path_thoughts.max}}},
                  {"last_depth_candidates",
                   {{"min", ts.last_depth_candidates.min},
                    {"mean", ts.last_depth_candidates.mean},
                    {"max", ts.last_depth_candidates.max}}},
                  {"path_depth",
                   {{"min", ts.path_depth.min},
                    {"mean", ts.path_depth.mean},
                    {"max", ts.path_depth.max}}}};
      std::ofstream out(report_path);
      out << doc.dump(2) << "\n";
    }
    return 0;
  }

  if (*sweep) {
    LoadedModel model = load_model(checkpoint, vocab_path);
    cfg.inherit_premise_mode(model.params.config);
    LoadDiagnostics diag;
    auto instances = load_split_file(data_path, dialect, model.constants, &diag);
    report_diagnostics(diag);
    std::vector<std::pair<double, int>> grid =
        grid_text.empty() ? std::vector<std::pair<double, int>>{{0.95, 0}, {0.5, 0}, {0.95, 2},
                                                                {0.95, 4}}
                          : parse_grid(grid_text);
    auto cells = sweep_stop_criteria(instances, model.params, model.vocab, cfg.engine, grid,
                                     cfg.train.threads);
    json rows = json::array();
    for (const SweepCell& c : cells) {
      std::cout << "t_f=" << c.confidence_threshold << " D+" << c.depth_offset << ": accuracy "
                << c.accuracy << "\n";
      rows.push_back({{"confidence_threshold", c.confidence_threshold},
                      {"depth_offset", c.depth_offset},
                      {"accuracy", c.accuracy}});
    }
    if (!report_path.empty()) {
      std::ofstream out(report_path);
      out << rows.dump(2) << "\n";
    }
    return 0;
  }

  if (*viz) {
    LoadedModel model = load_model(checkpoint, vocab_path);
    cfg.inherit_premise_mode(model.params.config);
    LoadDiagnostics diag;
    auto instances = load_split_file(data_path, dialect, model.constants, &diag);
    report_diagnostics(diag);
    const ProblemInstance* problem = instances.empty() ? nullptr : &instances[0];
    if (!problem_id.empty()) {
      problem = nullptr;
      for (const auto& p : instances)
        if (p.id == problem_id) problem = &p;
    }
    if (!problem) throw DataError("no problem selected");
    AttentionExport att = export_attention(*problem, model.params, model.vocab, cfg.engine);
    write_attention(out_path, att);
    std::cout << "wrote " << att.weights.rows << " x " << att.weights.cols
              << " attention matrix to " << out_path << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ExprError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const EngineError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const nn::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const RationalOverflow& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
