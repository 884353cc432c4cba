#include "mwp/expr.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

namespace mwp {

namespace {

Expr make_node(ExprKind kind, int index, Expr left, Expr right, std::string serial,
               int node_count) {
  auto n = std::make_shared<ExprNode>();
  n->kind = kind;
  n->index = index;
  n->left = std::move(left);
  n->right = std::move(right);
  n->serial = std::move(serial);
  n->node_count = node_count;
  return n;
}

}  // namespace

Expr ExprNode::quantity(int index) {
  return make_node(ExprKind::Quantity, index, nullptr, nullptr, "q" + std::to_string(index), 1);
}

Expr ExprNode::constant(int index) {
  return make_node(ExprKind::Constant, index, nullptr, nullptr, "c" + std::to_string(index), 1);
}

Expr ExprNode::negate(Expr x) {
  std::string s = "(neg " + x->serial + ")";
  int count = x->node_count + 1;
  return make_node(ExprKind::Negate, -1, std::move(x), nullptr, std::move(s), count);
}

Expr ExprNode::reciprocal(Expr x) {
  std::string s = "(inv " + x->serial + ")";
  int count = x->node_count + 1;
  return make_node(ExprKind::Reciprocal, -1, std::move(x), nullptr, std::move(s), count);
}

Expr ExprNode::add(Expr a, Expr b) {
  std::string s = "(+ " + a->serial + " " + b->serial + ")";
  int count = a->node_count + b->node_count + 1;
  return make_node(ExprKind::Add, -1, std::move(a), std::move(b), std::move(s), count);
}

Expr ExprNode::mul(Expr a, Expr b) {
  std::string s = "(* " + a->serial + " " + b->serial + ")";
  int count = a->node_count + b->node_count + 1;
  return make_node(ExprKind::Mul, -1, std::move(a), std::move(b), std::move(s), count);
}

const std::string& serialize(const Expr& e) { return e->serial; }

Expr canonical_form(const Expr& e) {
  switch (e->kind) {
    case ExprKind::Quantity:
    case ExprKind::Constant:
      return e;
    case ExprKind::Negate: {
      Expr c = canonical_form(e->left);
      if (c->kind == ExprKind::Negate) return c->left;
      if (c == e->left) return e;
      return ExprNode::negate(c);
    }
    case ExprKind::Reciprocal: {
      Expr c = canonical_form(e->left);
      if (c->kind == ExprKind::Reciprocal) return c->left;
      if (c == e->left) return e;
      return ExprNode::reciprocal(c);
    }
    case ExprKind::Add:
    case ExprKind::Mul: {
      Expr a = canonical_form(e->left);
      Expr b = canonical_form(e->right);
      if (b->serial < a->serial) std::swap(a, b);
      if (a == e->left && b == e->right) return e;
      return e->kind == ExprKind::Add ? ExprNode::add(a, b) : ExprNode::mul(a, b);
    }
  }
  throw ExprError("unreachable expression kind");
}

bool is_canonical(const Expr& e) {
  if (e->is_leaf()) return true;
  if (e->is_unary()) {
    if (e->left->kind == e->kind) return false;
    return is_canonical(e->left);
  }
  if (e->right->serial < e->left->serial) return false;
  return is_canonical(e->left) && is_canonical(e->right);
}

bool equivalent(const Expr& a, const Expr& b) {
  return canonical_form(a)->serial == canonical_form(b)->serial;
}

// --- parser -----------------------------------------------------------------

namespace {

struct Token {
  enum Kind { Number, Plus, Minus, Star, Slash, LParen, RParen, End } kind;
  Rational value;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : s_(text) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ >= s_.size()) {
      tok_ = {Token::End, {}};
      return;
    }
    char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < s_.size() &&
             (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.'))
        ++pos_;
      try {
        tok_ = {Token::Number, Rational::parse(s_.substr(start, pos_ - start))};
      } catch (const std::invalid_argument& e) {
        throw ExprError(std::string("parse failure: ") + e.what());
      }
      return;
    }
    switch (c) {
      case '+': tok_ = {Token::Plus, {}}; ++pos_; return;
      case '-': tok_ = {Token::Minus, {}}; ++pos_; return;
      case '*': tok_ = {Token::Star, {}}; ++pos_; return;
      case '/': tok_ = {Token::Slash, {}}; ++pos_; return;
      case '(': tok_ = {Token::LParen, {}}; ++pos_; return;
      case ')': tok_ = {Token::RParen, {}}; ++pos_; return;
      default: break;
    }
    // UTF-8 operator spellings and the pi constant.
    if (s_.compare(pos_, 2, "\xc3\x97") == 0) {  // ×
      tok_ = {Token::Star, {}};
      pos_ += 2;
      return;
    }
    if (s_.compare(pos_, 2, "\xc3\xb7") == 0) {  // ÷
      tok_ = {Token::Slash, {}};
      pos_ += 2;
      return;
    }
    if (s_.compare(pos_, 3, "\xe2\x88\x92") == 0) {  // − (minus sign)
      tok_ = {Token::Minus, {}};
      pos_ += 3;
      return;
    }
    if (s_.compare(pos_, 2, "\xcf\x80") == 0) {  // π
      tok_ = {Token::Number, Rational(314, 100)};
      pos_ += 2;
      return;
    }
    if (s_.compare(pos_, 2, "pi") == 0 || s_.compare(pos_, 2, "PI") == 0) {
      tok_ = {Token::Number, Rational(314, 100)};
      pos_ += 2;
      return;
    }
    throw ExprError("parse failure: unexpected character '" + std::string(1, c) + "'");
  }

  const std::string& s_;
  size_t pos_ = 0;
  Token tok_{Token::End, {}};
};

class Parser {
 public:
  Parser(const std::string& text, const QuantityEnv& env, std::vector<Rational>* unbound)
      : lex_(text), env_(env), unbound_(unbound) {}

  Expr parse() {
    Expr e = expr();
    if (lex_.peek().kind != Token::End) throw ExprError("parse failure: trailing input");
    return e;
  }

 private:
  Expr expr() {
    Expr e = term();
    for (;;) {
      if (lex_.peek().kind == Token::Plus) {
        lex_.take();
        e = ExprNode::add(e, term());
      } else if (lex_.peek().kind == Token::Minus) {
        lex_.take();
        e = ExprNode::add(e, ExprNode::negate(term()));
      } else {
        return e;
      }
    }
  }

  Expr term() {
    Expr e = factor();
    for (;;) {
      if (lex_.peek().kind == Token::Star) {
        lex_.take();
        e = ExprNode::mul(e, factor());
      } else if (lex_.peek().kind == Token::Slash) {
        lex_.take();
        e = ExprNode::mul(e, ExprNode::reciprocal(factor()));
      } else {
        return e;
      }
    }
  }

  Expr factor() {
    if (lex_.peek().kind == Token::Minus) {
      lex_.take();
      return ExprNode::negate(factor());
    }
    return primary();
  }

  Expr primary() {
    Token t = lex_.take();
    if (t.kind == Token::Number) return bind(t.value);
    if (t.kind == Token::LParen) {
      Expr e = expr();
      if (lex_.take().kind != Token::RParen) throw ExprError("parse failure: expected ')'");
      return e;
    }
    throw ExprError("parse failure: expected number or '('");
  }

  Expr bind(const Rational& v) {
    for (size_t i = 0; i < env_.quantities.size(); ++i)
      if (env_.quantities[i] == v) return ExprNode::quantity(static_cast<int>(i));
    for (size_t i = 0; i < env_.constants.size(); ++i)
      if (env_.constants[i] == v) return ExprNode::constant(static_cast<int>(i));
    if (unbound_ != nullptr) {
      for (size_t k = 0; k < unbound_->size(); ++k)
        if ((*unbound_)[k] == v) return ExprNode::constant(-1 - static_cast<int>(k));
      unbound_->push_back(v);
      return ExprNode::constant(-static_cast<int>(unbound_->size()));
    }
    throw ExprError("unbound number " + v.to_string());
  }

  Lexer lex_;
  const QuantityEnv& env_;
  std::vector<Rational>* unbound_;
};

}  // namespace

Expr parse_equation(const std::string& text, const QuantityEnv& env,
                    std::vector<Rational>* unbound) {
  Parser p(text, env, unbound);
  return canonical_form(p.parse());
}

// --- evaluation -------------------------------------------------------------

namespace {

EvalResult eval_rec(const Expr& e, const QuantityEnv& env) {
  switch (e->kind) {
    case ExprKind::Quantity:
      if (e->index < 0 || static_cast<size_t>(e->index) >= env.quantities.size())
        throw ExprError("unbound quantity leaf q" + std::to_string(e->index));
      return EvalResult::of(env.quantities[static_cast<size_t>(e->index)]);
    case ExprKind::Constant:
      if (e->index < 0 || static_cast<size_t>(e->index) >= env.constants.size())
        throw ExprError("unbound constant leaf c" + std::to_string(e->index));
      return EvalResult::of(env.constants[static_cast<size_t>(e->index)]);
    case ExprKind::Negate: {
      EvalResult r = eval_rec(e->left, env);
      if (!r.finite) return r;
      return EvalResult::of(-r.value);
    }
    case ExprKind::Reciprocal: {
      EvalResult r = eval_rec(e->left, env);
      if (!r.finite || r.value.is_zero()) return EvalResult::non_finite();
      return EvalResult::of(r.value.inverse());
    }
    case ExprKind::Add: {
      EvalResult a = eval_rec(e->left, env);
      EvalResult b = eval_rec(e->right, env);
      if (!a.finite || !b.finite) return EvalResult::non_finite();
      return EvalResult::of(a.value + b.value);
    }
    case ExprKind::Mul: {
      EvalResult a = eval_rec(e->left, env);
      EvalResult b = eval_rec(e->right, env);
      if (!a.finite || !b.finite) return EvalResult::non_finite();
      return EvalResult::of(a.value * b.value);
    }
  }
  throw ExprError("unreachable expression kind");
}

}  // namespace

EvalResult evaluate(const Expr& e, const QuantityEnv& env) {
  try {
    return eval_rec(e, env);
  } catch (const RationalOverflow&) {
    return EvalResult::non_finite();
  }
}

// --- containment ------------------------------------------------------------

namespace {

bool contains_rec(const std::string& needle, const Expr& hay) {
  if (hay->serial.size() < needle.size()) return false;
  if (hay->serial == needle) return true;
  if (hay->left && contains_rec(needle, hay->left)) return true;
  if (hay->right && contains_rec(needle, hay->right)) return true;
  return false;
}

}  // namespace

bool contains_sub(const Expr& needle, const Expr& hay) {
  Expr n = canonical_form(needle);
  Expr h = canonical_form(hay);
  return contains_rec(n->serial, h);
}

// --- required depth ---------------------------------------------------------

int required_depth(const Expr& e) {
  if (e->is_leaf()) return 0;
  if (e->is_unary()) {
    int r = required_depth(e->left);
    return r % 2 == 0 ? r + 1 : r + 2;  // smallest odd depth > r
  }
  int m = std::max(required_depth(e->left), required_depth(e->right));
  return m % 2 == 0 ? m + 2 : m + 1;  // smallest even depth > m
}

// --- enumeration ------------------------------------------------------------

AcceptFn accept_all() {
  return [](const Expr&) { return true; };
}

AcceptFn accept_contained_in(Expr gold) {
  Expr canon = canonical_form(gold);
  return [canon](const Expr& e) { return contains_rec(canonical_form(e)->serial, canon); };
}

Enumeration oracle_enumerate(int quantity_count, int constant_count, int max_depth,
                             const AcceptFn& accept, int candidate_cap) {
  Enumeration out;
  std::unordered_set<std::string> seen;

  EnumDepth d0;
  d0.depth = 0;
  for (int i = 0; i < quantity_count; ++i) d0.candidates.push_back(ExprNode::quantity(i));
  for (int i = 0; i < constant_count; ++i) d0.candidates.push_back(ExprNode::constant(i));
  d0.raw_candidates = static_cast<int>(d0.candidates.size());
  for (const Expr& e : d0.candidates) {
    seen.insert(e->serial);
    if (accept(e)) {
      d0.accepted_new.push_back(e);
      out.accepted.push_back(e);
    }
  }
  d0.accepted_total = static_cast<int>(out.accepted.size());
  out.total_candidates += static_cast<int>(d0.candidates.size());
  out.depths.push_back(std::move(d0));

  for (int d = 1; d <= max_depth; ++d) {
    EnumDepth rec;
    rec.depth = d;
    auto consider = [&](Expr e) {
      ++rec.raw_candidates;
      if (candidate_cap > 0 && rec.raw_candidates > candidate_cap)
        throw ExprError("candidate cap exceeded at depth " + std::to_string(d));
      if (seen.insert(e->serial).second) rec.candidates.push_back(std::move(e));
    };
    size_t k = out.accepted.size();
    if (d % 2 == 1) {
      for (size_t i = 0; i < k; ++i) {
        const Expr& x = out.accepted[i];
        if (x->kind == ExprKind::Negate)
          consider(x->left);
        else
          consider(ExprNode::negate(x));
        if (x->kind == ExprKind::Reciprocal)
          consider(x->left);
        else
          consider(ExprNode::reciprocal(x));
      }
    } else {
      for (size_t i = 0; i < k; ++i) {
        for (size_t j = i; j < k; ++j) {
          const Expr& a = out.accepted[i];
          const Expr& b = out.accepted[j];
          bool sorted = a->serial <= b->serial;
          const Expr& lo = sorted ? a : b;
          const Expr& hi = sorted ? b : a;
          consider(ExprNode::add(lo, hi));
          consider(ExprNode::mul(lo, hi));
        }
      }
    }
    for (const Expr& e : rec.candidates)
      if (accept(e)) rec.accepted_new.push_back(e);
    for (const Expr& e : rec.accepted_new) out.accepted.push_back(e);
    rec.accepted_total = static_cast<int>(out.accepted.size());
    out.total_candidates += static_cast<int>(rec.candidates.size());
    out.depths.push_back(std::move(rec));
  }
  return out;
}

// --- infix rendering ----------------------------------------------------------

namespace {

std::string leaf_text(const Expr& e, const std::vector<Rational>* quantities,
                      const std::vector<Rational>* constants) {
  if (e->kind == ExprKind::Quantity) {
    if (quantities && e->index >= 0 && static_cast<size_t>(e->index) < quantities->size())
      return (*quantities)[static_cast<size_t>(e->index)].to_string();
    return e->serial;
  }
  if (constants && e->index >= 0 && static_cast<size_t>(e->index) < constants->size())
    return (*constants)[static_cast<size_t>(e->index)].to_string();
  return e->serial;
}

// prec: 0 add-level, 1 mul-level, 2 atom
std::string infix_rec(const Expr& e, int parent_prec, const std::vector<Rational>* q,
                      const std::vector<Rational>* c) {
  std::string s;
  int prec;
  switch (e->kind) {
    case ExprKind::Quantity:
    case ExprKind::Constant:
      return leaf_text(e, q, c);
    case ExprKind::Add: {
      prec = 0;
      if (e->right->kind == ExprKind::Negate)
        s = infix_rec(e->left, 0, q, c) + " - " + infix_rec(e->right->left, 1, q, c);
      else if (e->left->kind == ExprKind::Negate)
        s = infix_rec(e->right, 0, q, c) + " - " + infix_rec(e->left->left, 1, q, c);
      else
        s = infix_rec(e->left, 0, q, c) + " + " + infix_rec(e->right, 0, q, c);
      break;
    }
    case ExprKind::Mul: {
      prec = 1;
      if (e->right->kind == ExprKind::Reciprocal)
        s = infix_rec(e->left, 1, q, c) + " / " + infix_rec(e->right->left, 2, q, c);
      else if (e->left->kind == ExprKind::Reciprocal)
        s = infix_rec(e->right, 1, q, c) + " / " + infix_rec(e->left->left, 2, q, c);
      else
        s = infix_rec(e->left, 1, q, c) + " * " + infix_rec(e->right, 1, q, c);
      break;
    }
    case ExprKind::Negate:
      prec = 1;
      s = "-" + infix_rec(e->left, 2, q, c);
      break;
    case ExprKind::Reciprocal:
      prec = 1;
      s = "1 / " + infix_rec(e->left, 2, q, c);
      break;
    default:
      throw ExprError("unreachable expression kind");
  }
  if (prec < parent_prec) return "(" + s + ")";
  return s;
}

}  // namespace

std::string to_infix(const Expr& e, const std::vector<Rational>* quantities,
                     const std::vector<Rational>* constants) {
  return infix_rec(e, 0, quantities, constants);
}

}  // namespace mwp
