#pragma once

#include <map>
#include <string>
#include <vector>

#include "mwp/data.hpp"
#include "mwp/layers.hpp"

namespace mwp {

// Token -> id map; ids are line numbers in the plain-text vocabulary file.
// Slots 0..2 are the start, mask, and unknown sentinels.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;

  static Vocabulary build(const std::vector<ProblemInstance>& instances);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? -1 : it->second;
  }
  int unknown_id() const { return id_of(kUnknownToken); }
  int size() const { return static_cast<int>(tokens.size()); }
};

// The model's starting state for one problem.
struct EncodedProblem {
  nn::Var X;                     // n x H token embeddings
  std::vector<Thought> initial_thoughts;  // quantity thoughts in surface order, then constants
  nn::Var premise0;              // 1 x H, the sequence-start row
  nn::Var goal;                  // 1 x H (punctuation mode) or q x H (full-question mode)
};

// Runs the toy bidirectional encoder. OOV tokens throw in strict mode and map
// to the unknown id otherwise.
EncodedProblem encode(nn::Graph& g, const ModelParams& params, const Vocabulary& vocab,
                      const ProblemInstance& problem, bool strict_oov = false);

// File-based adapter for external embedding providers: a JSON object mapping
// problem id to an n x H float matrix over the instance's token sequence.
struct ExternalEmbeddings {
  std::map<std::string, nn::Tensor> by_id;
  static ExternalEmbeddings load(const std::string& path);
};

EncodedProblem encode_external(nn::Graph& g, const ModelParams& params,
                               const ExternalEmbeddings& provider,
                               const ProblemInstance& problem);

}  // namespace mwp
