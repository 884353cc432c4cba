#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mwp::nn {

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Row-major matrix of 64-bit floats.
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c)) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

class Graph;

// Handle to a graph node; cheap to copy.
struct Var {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
};

// Dynamic computation tape. One graph per forward pass; parameters are
// referenced by index into an external store, and their gradients are
// collected per graph so independent graphs can run in parallel and be
// reduced deterministically.
class Graph {
 public:
  explicit Graph(bool train_mode = false, uint64_t dropout_seed = 0)
      : train_(train_mode), rng_(dropout_seed) {}

  bool training() const { return train_; }

  // Leaves.
  Var param(const Tensor& value, int param_index);
  Var input(Tensor value);
  Var constant(double value);  // 1x1

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var row);  // broadcast 1xC over rows of a
  Var sum_rows(Var a);             // 1xC

  // Shape plumbing.
  Var row(Var a, int r);
  Var slice_rows(Var a, int r0, int r1);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_rows(const std::vector<Var>& xs);
  Var concat_cols(const std::vector<Var>& xs);
  Var gather_rows(Var a, std::vector<int> ids);

  // Nonlinearities.
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gain, Var bias);  // row-wise, eps 1e-5
  Var dropout(Var a, double p);               // inverted dropout, train mode only

  // Sum of binary cross entropies computed from logits (k x 1).
  Var bce_with_logits_sum(Var logits, std::vector<double> targets);

  const Tensor& value(Var v) const;

  // Reverse pass from a scalar node.
  void backward(Var loss);

  // After backward: gradient per parameter index, ordered by index.
  std::vector<std::pair<int, Tensor>> param_grads() const;

  std::mt19937_64& rng() { return rng_; }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Graph&, const Tensor&)> back;  // receives this node's grad
    int param_index = -1;
  };

  Var emit(Tensor val, std::function<void(Graph&, const Tensor&)> back = nullptr);
  Tensor& grad_of(int id);
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::map<int, int> param_nodes_;  // param index -> node id
  bool train_ = false;
  std::mt19937_64 rng_;

  friend struct Var;
};

inline int Var::rows() const { return g->value(*this).rows; }
inline int Var::cols() const { return g->value(*this).cols; }

}  // namespace mwp::nn
