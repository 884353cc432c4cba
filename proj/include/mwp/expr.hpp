#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mwp/rational.hpp"

namespace mwp {

// Arithmetic expression trees over problem quantities and a constant
// vocabulary. Subtraction and division are never node kinds: a-b is
// add(a, negate(b)) and a/b is mul(a, reciprocal(b)), matching the
// transform/merge expansion algebra.
enum class ExprKind { Quantity, Constant, Negate, Reciprocal, Add, Mul };

class ExprNode;
using Expr = std::shared_ptr<const ExprNode>;

class ExprNode {
 public:
  ExprKind kind;
  int index = -1;  // leaf provenance: quantity position or constant slot
  Expr left, right;
  std::string serial;  // structural key, built once at construction
  int node_count = 1;

  static Expr quantity(int index);
  static Expr constant(int index);
  static Expr negate(Expr x);
  static Expr reciprocal(Expr x);
  static Expr add(Expr a, Expr b);
  static Expr mul(Expr a, Expr b);

  bool is_leaf() const { return kind == ExprKind::Quantity || kind == ExprKind::Constant; }
  bool is_unary() const { return kind == ExprKind::Negate || kind == ExprKind::Reciprocal; }
  bool is_binary() const { return kind == ExprKind::Add || kind == ExprKind::Mul; }
};

// Deterministic prefix serialization; equal strings iff equal trees.
const std::string& serialize(const Expr& e);

// Infix rendering with explicit -, / where the tree shape allows it; for
// reports and logs only.
std::string to_infix(const Expr& e, const std::vector<Rational>* quantities = nullptr,
                     const std::vector<Rational>* constants = nullptr);

// Quantity bindings plus the constant vocabulary values.
struct QuantityEnv {
  std::vector<Rational> quantities;  // surface order
  std::vector<Rational> constants;   // vocabulary order
};

// Exact evaluation result; non-finite marks division by zero (or a 128-bit
// overflow, which we refuse to round).
struct EvalResult {
  bool finite = false;
  Rational value;

  static EvalResult of(Rational r) { return {true, r}; }
  static EvalResult non_finite() { return {}; }
};

struct ExprError : std::runtime_error {
  explicit ExprError(const std::string& what) : std::runtime_error(what) {}
};

// Canonical form: add/mul children sorted by the serialization order of their
// canonical forms, double negate/reciprocal collapsed. Idempotent.
Expr canonical_form(const Expr& e);
bool is_canonical(const Expr& e);

// Structural equality modulo canonical form.
bool equivalent(const Expr& a, const Expr& b);

// Infix parser binding numbers to quantity indices by value (first surface
// match wins), then to constants. Numbers bound to neither throw ExprError
// unless collected into `unbound`, in which case they become Constant leaves
// with index -1 - k into that list (a provisional form used while harvesting
// the constant vocabulary).
Expr parse_equation(const std::string& text, const QuantityEnv& env,
                    std::vector<Rational>* unbound = nullptr);

EvalResult evaluate(const Expr& e, const QuantityEnv& env);

// True iff canonical_form(needle) equals some subtree of canonical_form(hay).
bool contains_sub(const Expr& needle, const Expr& hay);

// Minimum depth at which e is constructible when transforms happen at odd
// depths and merges at even depths, with accepted sets accumulating.
int required_depth(const Expr& e);

// --- brute-force expansion enumeration -------------------------------------
//
// Reproduces the thought-expansion candidate generation symbolically with an
// arbitrary accept predicate: transforms of every accepted expression at odd
// depths, merges over unordered pairs (i <= j) of accepted expressions at
// even depths, deduplicated by canonical form against everything generated
// before. Depth 0 candidates are the initial leaves themselves.

using AcceptFn = std::function<bool(const Expr&)>;

struct EnumDepth {
  int depth = 0;
  int raw_candidates = 0;           // before canonical dedup
  std::vector<Expr> candidates;     // deduped, generation order
  std::vector<Expr> accepted_new;   // candidates passing the filter
  int accepted_total = 0;           // accumulated accepted count after this depth
};

struct Enumeration {
  std::vector<EnumDepth> depths;    // index = depth, starting at 0
  std::vector<Expr> accepted;       // accumulated accepted, insertion order
  int total_candidates = 0;         // distinct candidates over all depths

  const EnumDepth& at(int d) const { return depths.at(static_cast<size_t>(d)); }
};

AcceptFn accept_all();
AcceptFn accept_contained_in(Expr gold);

// cap = 0 means unlimited; otherwise throws ExprError if one depth's raw
// candidate count exceeds it.
Enumeration oracle_enumerate(int quantity_count, int constant_count, int max_depth,
                             const AcceptFn& accept = accept_all(), int candidate_cap = 0);

}  // namespace mwp
