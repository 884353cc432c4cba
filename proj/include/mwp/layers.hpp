#pragma once

#include "mwp/autograd.hpp"
#include "mwp/expr.hpp"
#include "mwp/params.hpp"

namespace mwp {

enum class MergeOp { Add, Mul };
enum class TransformOp { Negate, Reciprocal };

// An embedding paired with the expression it represents.
struct Thought {
  nn::Var embedding;  // 1 x H, bound to the graph it was built on
  Expr expr;          // canonical
  int birth_depth = 0;
  double infer_score = -1.0;   // latest, in [0,1] once computed
  double answer_score = -1.0;  // latest, in [0,1] once computed
};

// Pre-layer-norm multi-head attention with queries q and keys = values = kv;
// the residual path carries q. head_avg_weights is the per-query attention
// distribution averaged over heads (m x k, rows sum to 1).
struct AttentionOut {
  nn::Var out;
  nn::Var head_avg_weights;
};

AttentionOut attention(nn::Graph& g, const ParamStore& ps, const AttentionHandles& h, int heads,
                       nn::Var q, nn::Var kv, double dropout_p);

nn::Var feed_forward(nn::Graph& g, const ParamStore& ps, const FFHandles& h, nn::Var x,
                     double dropout_p);

// Embedding halves of the operation layers (the symbolic halves live on
// Thought). All take 1 x H rows unless noted.
nn::Var merge_embed(nn::Graph& g, const ModelParams& p, MergeOp op, nn::Var a, nn::Var b);
nn::Var transform_embed(nn::Graph& g, const ModelParams& p, TransformOp op, nn::Var a);

// Correlation logits; scores are sigmoid(logit). Batched: thoughts stacked
// k x H give a k x 1 logit column.
nn::Var infer_logits(nn::Graph& g, const ModelParams& p, nn::Var premise, nn::Var thoughts);
nn::Var answer_logits(nn::Graph& g, const ModelParams& p, nn::Var goal, nn::Var thoughts);

// Attention rows appended by a premise update: Attn(FF([thoughts]), premise),
// sharing the infer layer parameters. The caller concatenates.
nn::Var premise_append_rows(nn::Graph& g, const ModelParams& p, nn::Var premise,
                            nn::Var thoughts);

// Answer-layer attention weights of one thought over an arbitrary key matrix
// (the problem sequence for the visualization export). 1 x k, sums to 1.
nn::Var answer_attention_weights(nn::Graph& g, const ModelParams& p, nn::Var keys,
                                 nn::Var thought);

// Thought-level wrappers.
Thought merge(nn::Graph& g, const ModelParams& p, const Thought& a, const Thought& b, MergeOp op,
              int depth);
Thought transform(nn::Graph& g, const ModelParams& p, const Thought& a, TransformOp op,
                  int depth);

double sigmoid_value(double logit);

}  // namespace mwp
