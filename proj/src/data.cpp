#include "mwp/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace mwp {

namespace {

using nlohmann::json;

bool is_word_byte(unsigned char c) { return std::isalpha(c) || c >= 0x80 || c == '\''; }

bool is_digit(unsigned char c) { return std::isdigit(c); }

// Strips brackets placed around numbers ("[80]" -> " 80 ").
std::string strip_number_brackets(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '[') {
      size_t j = i + 1;
      while (j < text.size() && (is_digit(text[j]) || text[j] == '.')) ++j;
      if (j < text.size() && text[j] == ']' && j > i + 1) {
        out += ' ';
        out += text.substr(i + 1, j - i - 1);
        out += ' ';
        i = j;
        continue;
      }
    }
    out += text[i];
  }
  return out;
}

}  // namespace

bool is_punctuation_token(const std::string& tok) {
  return tok.size() == 1 && !std::isalnum(static_cast<unsigned char>(tok[0])) &&
         !(static_cast<unsigned char>(tok[0]) >= 0x80);
}

TokenizedText tokenize_text(const std::string& raw) {
  std::string text = strip_number_brackets(raw);
  TokenizedText out;
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c = text[i];
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_digit(c)) {
      size_t j = i;
      while (j < text.size() &&
             (is_digit(text[j]) ||
              (text[j] == '.' && j + 1 < text.size() && is_digit(text[j + 1]))))
        ++j;
      out.values.push_back(Rational::parse(text.substr(i, j - i)));
      out.tokens.push_back(kMaskToken);
      i = j;
      continue;
    }
    if (is_word_byte(c)) {
      size_t j = i;
      while (j < text.size() && is_word_byte(text[j])) ++j;
      std::string word = text.substr(i, j - i);
      for (char& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.tokens.push_back(word);
      i = j;
      continue;
    }
    out.tokens.push_back(std::string(1, text[i]));
    ++i;
  }
  return out;
}

ProblemInstance make_instance(const std::string& id, const std::string& context,
                              const std::string& question, const std::string& equation,
                              const ConstantVocabulary* constants) {
  ProblemInstance p;
  p.id = id;
  p.context = context;
  p.question = question;
  p.equation_text = equation;

  TokenizedText ctx = tokenize_text(context);
  TokenizedText q = tokenize_text(question);

  p.tokens.push_back(kStartToken);
  p.tokens.insert(p.tokens.end(), ctx.tokens.begin(), ctx.tokens.end());
  p.question_begin = static_cast<int>(p.tokens.size());
  p.tokens.insert(p.tokens.end(), q.tokens.begin(), q.tokens.end());
  p.question_end = static_cast<int>(p.tokens.size());

  p.quantities = ctx.values;
  p.quantities.insert(p.quantities.end(), q.values.begin(), q.values.end());

  // Goal token: last punctuation mark of the question, or of the whole text
  // when the question is absent. A terminal '?' is appended if none exists.
  int lo = q.tokens.empty() ? 1 : p.question_begin;
  p.goal_index = -1;
  for (int i = p.question_end - 1; i >= lo; --i) {
    if (is_punctuation_token(p.tokens[static_cast<size_t>(i)])) {
      p.goal_index = i;
      break;
    }
  }
  if (p.goal_index < 0) {
    p.tokens.push_back("?");
    p.goal_index = static_cast<int>(p.tokens.size()) - 1;
    p.question_end = static_cast<int>(p.tokens.size());
    if (q.tokens.empty()) p.question_begin = p.question_end - 1;
  }

  p.env.quantities = p.quantities;
  if (constants) p.env.constants = constants->values;

  try {
    if (constants) {
      p.gold = parse_equation(equation, p.env);
    } else {
      p.gold = parse_equation(equation, p.env, &p.unbound_values);
    }
  } catch (const ExprError& e) {
    throw DataError("record " + id + ": " + e.what());
  }
  return p;
}

std::vector<ProblemInstance> load_problems(const std::string& path, const std::string& dialect,
                                           const ConstantVocabulary* constants,
                                           LoadDiagnostics* diag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  LoadDiagnostics local;
  LoadDiagnostics& d = diag ? *diag : local;
  std::vector<ProblemInstance> out;

  auto add = [&](const std::string& id, const std::string& ctx, const std::string& q,
                 const std::string& eq) {
    try {
      out.push_back(make_instance(id, ctx, q, eq, constants));
    } catch (const DataError& e) {
      d.report(e.what());
    }
  };

  if (dialect == "jsonl") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception& e) {
        d.report(path + ":" + std::to_string(lineno) + ": " + e.what());
        continue;
      }
      std::string id = rec.contains("id") ? rec["id"].is_string()
                                                ? rec["id"].get<std::string>()
                                                : rec["id"].dump()
                                          : path + ":" + std::to_string(lineno);
      add(id, rec.value("context", ""), rec.value("question", ""), rec.value("equation", ""));
    }
    return out;
  }

  if (dialect == "svamp") {
    json arr;
    try {
      in >> arr;
    } catch (const json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
    if (!arr.is_array()) throw DataError(path + ": expected a JSON array");
    for (const auto& rec : arr) {
      std::string id = rec.contains("ID") ? (rec["ID"].is_string() ? rec["ID"].get<std::string>()
                                                                   : rec["ID"].dump())
                                          : std::to_string(out.size());
      std::string eq = rec.value("Equation", "");
      // Some releases write "X = <expr>".
      auto pos = eq.find('=');
      if (pos != std::string::npos) eq = eq.substr(pos + 1);
      add(id, rec.value("Body", ""), rec.value("Question", ""), eq);
    }
    return out;
  }

  throw DataError("unknown dataset dialect: " + dialect);
}

ConstantVocabulary collect_constants(const std::vector<ProblemInstance>& train) {
  ConstantVocabulary vocab;
  for (const ProblemInstance& p : train)
    for (const Rational& v : p.unbound_values)
      if (!vocab.index_of(v)) vocab.values.push_back(v);
  return vocab;
}

void finalize_constants(std::vector<ProblemInstance>& instances, const ConstantVocabulary& vocab,
                        LoadDiagnostics* diag) {
  LoadDiagnostics local;
  LoadDiagnostics& d = diag ? *diag : local;
  std::vector<ProblemInstance> kept;
  kept.reserve(instances.size());
  for (ProblemInstance& p : instances) {
    p.env.constants = vocab.values;
    if (p.unbound_values.empty()) {
      kept.push_back(std::move(p));
      continue;
    }
    try {
      p.gold = parse_equation(p.equation_text, p.env);
      p.unbound_values.clear();
      kept.push_back(std::move(p));
    } catch (const ExprError& e) {
      d.report("record " + p.id + ": " + e.what());
    }
  }
  instances = std::move(kept);
}

std::string normalized_context_key(const ProblemInstance& p) {
  TokenizedText t = tokenize_text(p.context);
  std::string key;
  size_t vi = 0;
  for (const std::string& tok : t.tokens) {
    if (!key.empty()) key += ' ';
    if (tok == kMaskToken && vi < t.values.size())
      key += t.values[vi++].to_string();
    else
      key += tok;
  }
  return key;
}

namespace {

struct Groups {
  std::vector<std::string> keys;                 // first-occurrence order
  std::vector<std::vector<size_t>> members;      // parallel to keys
};

Groups group_by(const std::vector<ProblemInstance>& instances, const ContextKeyFn& key) {
  Groups g;
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < instances.size(); ++i) {
    std::string k = key(instances[i]);
    auto it = index.find(k);
    if (it == index.end()) {
      index.emplace(k, g.keys.size());
      g.keys.push_back(k);
      g.members.push_back({i});
    } else {
      g.members[it->second].push_back(i);
    }
  }
  return g;
}

}  // namespace

DatasetSplit one_to_many_split(const std::vector<ProblemInstance>& instances,
                               const ContextKeyFn& key, uint64_t seed) {
  if (instances.empty()) throw DataError("one_to_many_split: empty input");
  Groups g = group_by(instances, key);
  DatasetSplit split;
  split.protocol = "one-to-many";
  split.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& members : g.members) {
    if (members.size() == 1) {
      ++split.group_count_single;
      split.validation.push_back(instances[members[0]]);
      continue;
    }
    ++split.group_count_multi;
    size_t pick = std::uniform_int_distribution<size_t>(0, members.size() - 1)(rng);
    for (size_t i = 0; i < members.size(); ++i) {
      if (i == pick)
        split.train.push_back(instances[members[i]]);
      else
        split.test.push_back(instances[members[i]]);
    }
  }
  return split;
}

DatasetSplit random_group_split(const std::vector<ProblemInstance>& instances,
                                const ContextKeyFn& key, double train_frac, double val_frac,
                                uint64_t seed) {
  if (instances.empty()) throw DataError("random_group_split: empty input");
  Groups g = group_by(instances, key);
  std::vector<size_t> order(g.members.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.protocol = "random-group";
  split.seed = seed;
  size_t n = instances.size();
  auto target_train = static_cast<size_t>(train_frac * static_cast<double>(n));
  auto target_val = static_cast<size_t>(val_frac * static_cast<double>(n));
  for (size_t gi : order) {
    auto& dest = split.train.size() < target_train      ? split.train
                 : split.validation.size() < target_val ? split.validation
                                                        : split.test;
    for (size_t i : g.members[gi]) dest.push_back(instances[i]);
    if (g.members[gi].size() > 1)
      ++split.group_count_multi;
    else
      ++split.group_count_single;
  }
  return split;
}

void write_jsonl(const std::string& path, const std::vector<ProblemInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const ProblemInstance& p : instances) {
    json rec;
    rec["id"] = p.id;
    rec["context"] = p.context;
    rec["question"] = p.question;
    rec["equation"] = p.equation_text;
    if (p.unbound_values.empty()) {
      EvalResult r = evaluate(p.gold, p.env);
      if (r.finite) rec["answer"] = r.value.to_double();
    }
    out << rec.dump() << "\n";
  }
}

void write_split_manifest(const std::string& path, const DatasetSplit& split) {
  json doc;
  doc["protocol"] = split.protocol;
  doc["seed"] = split.seed;
  doc["groups_multi"] = split.group_count_multi;
  doc["groups_single"] = split.group_count_single;
  auto ids = [](const std::vector<ProblemInstance>& xs) {
    std::vector<std::string> v;
    v.reserve(xs.size());
    for (const auto& p : xs) v.push_back(p.id);
    return v;
  };
  doc["counts"] = {{"train", split.train.size()},
                   {"validation", split.validation.size()},
                   {"test", split.test.size()}};
  doc["train"] = ids(split.train);
  doc["validation"] = ids(split.validation);
  doc["test"] = ids(split.test);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace mwp
