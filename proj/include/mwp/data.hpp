#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwp/expr.hpp"

namespace mwp {

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr const char* kStartToken = "<s>";
inline constexpr const char* kMaskToken = "[MASK]";
inline constexpr const char* kUnknownToken = "<unk>";

// One normalized problem record. Tokens are lowercased words / punctuation
// marks with every number replaced by the mask sentinel; the sequence always
// starts with kStartToken.
struct ProblemInstance {
  std::string id;
  std::string context;
  std::string question;  // may be empty
  std::string equation_text;

  std::vector<std::string> tokens;
  std::vector<Rational> quantities;  // surface order, one per mask token
  int goal_index = -1;               // punctuation token position
  int question_begin = -1;           // token span of the question, [begin, end)
  int question_end = -1;

  Expr gold;                              // canonical
  std::vector<Rational> unbound_values;   // numbers the provisional parse could not bind
  QuantityEnv env;
};

struct LoadDiagnostics {
  int skipped = 0;
  std::vector<std::string> messages;

  void report(const std::string& msg) {
    ++skipped;
    messages.push_back(msg);
  }
};

struct ConstantVocabulary {
  std::vector<Rational> values;  // first-occurrence order over the training set

  std::optional<int> index_of(const Rational& v) const {
    for (size_t i = 0; i < values.size(); ++i)
      if (values[i] == v) return static_cast<int>(i);
    return std::nullopt;
  }
};

// Word/number/punctuation tokenizer used for masking and context keys.
// Returns masked tokens (without the start sentinel) and the number values.
struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<Rational> values;
};
TokenizedText tokenize_text(const std::string& text);

bool is_punctuation_token(const std::string& tok);

// Builds a masked instance from raw fields; throws DataError on a malformed
// equation. With constants == nullptr the parse is provisional: numbers bound
// to neither text nor constants are tagged in unbound_values. With constants
// given, such numbers throw.
ProblemInstance make_instance(const std::string& id, const std::string& context,
                              const std::string& question, const std::string& equation,
                              const ConstantVocabulary* constants = nullptr);

// Dialects: "jsonl" (one {id, context, question, equation, answer} object per
// line) and "svamp" (a JSON array of {ID, Body, Question, Equation}).
std::vector<ProblemInstance> load_problems(const std::string& path, const std::string& dialect,
                                           const ConstantVocabulary* constants = nullptr,
                                           LoadDiagnostics* diag = nullptr);

// Numbers appearing in training gold equations but never in problem text.
ConstantVocabulary collect_constants(const std::vector<ProblemInstance>& train);

// Re-parses golds against the vocabulary; instances that still cannot bind are
// dropped with a diagnostic. Sets env.constants on every surviving instance.
void finalize_constants(std::vector<ProblemInstance>& instances, const ConstantVocabulary& vocab,
                        LoadDiagnostics* diag = nullptr);

struct DatasetSplit {
  std::vector<ProblemInstance> train, validation, test;
  std::string protocol;
  uint64_t seed = 0;
  int group_count_multi = 0;
  int group_count_single = 0;
};

using ContextKeyFn = std::function<std::string(const ProblemInstance&)>;

// Whitespace- and number-format-normalized context string (values preserved).
std::string normalized_context_key(const ProblemInstance& p);

// Per shared-context group: one random example to train, the rest to test;
// singleton groups go to validation. Deterministic in the seed.
DatasetSplit one_to_many_split(const std::vector<ProblemInstance>& instances,
                               const ContextKeyFn& key, uint64_t seed);

// Plain random split by context group (keeps variants of one context
// together). Fractions are for train and validation; the rest is test.
DatasetSplit random_group_split(const std::vector<ProblemInstance>& instances,
                                const ContextKeyFn& key, double train_frac, double val_frac,
                                uint64_t seed);

// --- synthetic corpus --------------------------------------------------------

struct SynthTemplate {
  std::string name;
  std::string context_pattern;  // placeholders {q0}, {q1}, ...
  struct Variant {
    std::string question_pattern;
    std::string gold_pattern;  // infix over the same placeholders
  };
  std::vector<Variant> variants;
  int quantity_count = 0;
  // Draws one group's quantity values; must return quantity_count values.
  std::function<std::vector<long long>(std::mt19937_64&)> sampler;
};

std::vector<SynthTemplate> default_templates();

// Emits whole context groups (each carrying every template variant) until at
// least `count` instances exist; count == 0 gives an empty corpus.
std::vector<ProblemInstance> synth_generate(const std::vector<SynthTemplate>& templates,
                                            int count, uint64_t seed);

// --- record/manifest io ------------------------------------------------------

void write_jsonl(const std::string& path, const std::vector<ProblemInstance>& instances);
void write_split_manifest(const std::string& path, const DatasetSplit& split);

}  // namespace mwp
