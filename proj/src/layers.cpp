#include "mwp/layers.hpp"

#include <cmath>

namespace mwp {

using nn::Graph;
using nn::Var;

AttentionOut attention(Graph& g, const ParamStore& ps, const AttentionHandles& h, int heads,
                       Var q, Var kv, double dropout_p) {
  if (g.value(kv).rows < 1) throw nn::NumericError("attention needs at least one key");
  int H = g.value(q).cols;
  int dh = H / heads;

  Var qn = g.layer_norm(q, g.param(ps.at(h.ln_q_g), h.ln_q_g), g.param(ps.at(h.ln_q_b), h.ln_q_b));
  Var kn = g.layer_norm(kv, g.param(ps.at(h.ln_kv_g), h.ln_kv_g),
                        g.param(ps.at(h.ln_kv_b), h.ln_kv_b));
  Var qp = g.matmul(qn, g.param(ps.at(h.wq), h.wq));
  Var kp = g.matmul(kn, g.param(ps.at(h.wk), h.wk));
  Var vp = g.matmul(kn, g.param(ps.at(h.wv), h.wv));

  double scalef = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_outs;
  Var weight_sum;
  for (int head = 0; head < heads; ++head) {
    Var qh = g.slice_cols(qp, head * dh, (head + 1) * dh);
    Var kh = g.slice_cols(kp, head * dh, (head + 1) * dh);
    Var vh = g.slice_cols(vp, head * dh, (head + 1) * dh);
    Var scores = g.scale(g.matmul(qh, g.transpose(kh)), scalef);
    Var weights = g.softmax_rows(scores);
    weight_sum = head == 0 ? weights : g.add(weight_sum, weights);
    Var dropped = g.dropout(weights, dropout_p);
    head_outs.push_back(g.matmul(dropped, vh));
  }
  Var merged = heads == 1 ? head_outs[0] : g.concat_cols(head_outs);
  Var out = g.add(q, g.matmul(merged, g.param(ps.at(h.wo), h.wo)));
  return {out, g.scale(weight_sum, 1.0 / heads)};
}

Var feed_forward(Graph& g, const ParamStore& ps, const FFHandles& h, Var x, double dropout_p) {
  Var hidden = g.gelu(g.add_rowvec(g.matmul(x, g.param(ps.at(h.w1), h.w1)),
                                   g.param(ps.at(h.b1), h.b1)));
  hidden = g.dropout(hidden, dropout_p);
  return g.add_rowvec(g.matmul(hidden, g.param(ps.at(h.w2), h.w2)), g.param(ps.at(h.b2), h.b2));
}

Var merge_embed(Graph& g, const ModelParams& p, MergeOp op, Var a, Var b) {
  const MergeHandles& h = op == MergeOp::Add ? p.merge_add : p.merge_mul;
  // FF(θi + θj + ℓ(1₂ᵀ SAttn([θi; θj]))W + b): the 2-row self-attention has no
  // positional encodings and the rows are summed, so the whole path is
  // bit-exactly symmetric in (a, b).
  Var stack = g.concat_rows({a, b});
  Var sattn = attention(g, p.store, h.sattn, p.config.heads, stack, stack, p.config.dropout).out;
  Var pooled = g.sum_rows(sattn);
  Var normed = g.layer_norm(pooled, g.param(p.store.at(h.ln_g), h.ln_g),
                            g.param(p.store.at(h.ln_b), h.ln_b));
  Var projected = g.add_rowvec(g.matmul(normed, g.param(p.store.at(h.w), h.w)),
                               g.param(p.store.at(h.b), h.b));
  Var z = g.add(g.add(a, b), projected);
  return feed_forward(g, p.store, h.ff, z, p.config.dropout);
}

Var transform_embed(Graph& g, const ModelParams& p, TransformOp op, Var a) {
  const FFHandles& h = op == TransformOp::Negate ? p.transform_negate : p.transform_reciprocal;
  return feed_forward(g, p.store, h, a, p.config.dropout);
}

Var infer_logits(Graph& g, const ModelParams& p, Var premise, Var thoughts) {
  if (g.value(premise).rows < 1) throw nn::NumericError("infer needs a nonempty premise");
  Var h = feed_forward(g, p.store, p.infer_ff, thoughts, p.config.dropout);
  Var o = attention(g, p.store, p.infer_attn, p.config.heads, h, premise, p.config.dropout).out;
  return g.add_rowvec(g.matmul(o, g.param(p.store.at(p.w_r), p.w_r)),
                      g.param(p.store.at(p.b_r), p.b_r));
}

Var answer_logits(Graph& g, const ModelParams& p, Var goal, Var thoughts) {
  if (g.value(goal).rows < 1) throw nn::NumericError("answer needs a nonempty goal");
  Var h = feed_forward(g, p.store, p.answer_ff, thoughts, p.config.dropout);
  Var o = attention(g, p.store, p.answer_attn, p.config.heads, h, goal, p.config.dropout).out;
  return g.add_rowvec(g.matmul(o, g.param(p.store.at(p.w_a), p.w_a)),
                      g.param(p.store.at(p.b_a), p.b_a));
}

Var premise_append_rows(Graph& g, const ModelParams& p, Var premise, Var thoughts) {
  Var h = feed_forward(g, p.store, p.infer_ff, thoughts, p.config.dropout);
  return attention(g, p.store, p.infer_attn, p.config.heads, h, premise, p.config.dropout).out;
}

Var answer_attention_weights(Graph& g, const ModelParams& p, Var keys, Var thought) {
  Var h = feed_forward(g, p.store, p.answer_ff, thought, p.config.dropout);
  return attention(g, p.store, p.answer_attn, p.config.heads, h, keys, p.config.dropout)
      .head_avg_weights;
}

Thought merge(Graph& g, const ModelParams& p, const Thought& a, const Thought& b, MergeOp op,
              int depth) {
  Thought t;
  t.embedding = merge_embed(g, p, op, a.embedding, b.embedding);
  Expr raw = op == MergeOp::Add ? ExprNode::add(a.expr, b.expr) : ExprNode::mul(a.expr, b.expr);
  t.expr = canonical_form(raw);
  t.birth_depth = depth;
  return t;
}

Thought transform(Graph& g, const ModelParams& p, const Thought& a, TransformOp op, int depth) {
  Thought t;
  t.embedding = transform_embed(g, p, op, a.embedding);
  Expr raw = op == TransformOp::Negate ? ExprNode::negate(a.expr) : ExprNode::reciprocal(a.expr);
  t.expr = canonical_form(raw);
  t.birth_depth = depth;
  return t;
}

double sigmoid_value(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

}  // namespace mwp
