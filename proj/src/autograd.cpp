#include "mwp/autograd.hpp"

#include <cmath>

namespace mwp::nn {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check(bool cond, const char* what) {
  if (!cond) throw NumericError(what);
}

}  // namespace

Var Graph::emit(Tensor val, std::function<void(Graph&, const Tensor&)> back) {
  Node n;
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_of(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor(n.val.rows, n.val.cols);
  return n.grad;
}

const Tensor& Graph::value(Var v) const { return node(v.id).val; }

Var Graph::param(const Tensor& value, int param_index) {
  auto it = param_nodes_.find(param_index);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Var v = emit(value);
  nodes_.back().param_index = param_index;
  param_nodes_[param_index] = v.id;
  return v;
}

Var Graph::input(Tensor value) { return emit(std::move(value)); }

Var Graph::constant(double value) {
  Tensor t(1, 1);
  t.v[0] = value;
  return emit(std::move(t));
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check(A.cols == B.rows, "matmul shape mismatch");
  Tensor C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    double* crow = &C.v[static_cast<size_t>(i) * C.cols];
    for (int k = 0; k < A.cols; ++k) {
      double aik = A.at(i, k);
      const double* brow = &B.v[static_cast<size_t>(k) * B.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  int ia = a.id, ib = b.id;
  return emit(std::move(C), [ia, ib](Graph& g, const Tensor& dC) {
    const Tensor& A = g.node(ia).val;
    const Tensor& B = g.node(ib).val;
    Tensor& dA = g.grad_of(ia);
    Tensor& dB = g.grad_of(ib);
    // dA = dC * B^T: rows of dC against rows of B, contiguous dots.
    for (int i = 0; i < A.rows; ++i) {
      const double* drow = &dC.v[static_cast<size_t>(i) * dC.cols];
      double* darow = &dA.v[static_cast<size_t>(i) * dA.cols];
      for (int k = 0; k < A.cols; ++k) {
        const double* brow = &B.v[static_cast<size_t>(k) * B.cols];
        double acc = 0;
        for (int j = 0; j < B.cols; ++j) acc += drow[j] * brow[j];
        darow[k] += acc;
      }
    }
    // dB = A^T * dC: axpy over dC rows.
    for (int i = 0; i < A.rows; ++i) {
      const double* arow = &A.v[static_cast<size_t>(i) * A.cols];
      const double* drow = &dC.v[static_cast<size_t>(i) * dC.cols];
      for (int k = 0; k < A.cols; ++k) {
        double aik = arow[k];
        double* dbrow = &dB.v[static_cast<size_t>(k) * dB.cols];
        for (int j = 0; j < dC.cols; ++j) dbrow[j] += aik * drow[j];
      }
    }
  });
}

Var Graph::transpose(Var a) {
  const Tensor& A = value(a);
  Tensor T(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) T.at(j, i) = A.at(i, j);
  int ia = a.id;
  return emit(std::move(T), [ia](Graph& g, const Tensor& dT) {
    Tensor& dA = g.grad_of(ia);
    for (int i = 0; i < dA.rows; ++i)
      for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += dT.at(j, i);
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check(A.same_shape(B), "add shape mismatch");
  Tensor C = A;
  for (size_t i = 0; i < C.size(); ++i) C.v[i] += B.v[i];
  int ia = a.id, ib = b.id;
  return emit(std::move(C), [ia, ib](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    Tensor& dB = g.grad_of(ib);
    for (size_t i = 0; i < dC.size(); ++i) {
      dA.v[i] += dC.v[i];
      dB.v[i] += dC.v[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check(A.same_shape(B), "sub shape mismatch");
  Tensor C = A;
  for (size_t i = 0; i < C.size(); ++i) C.v[i] -= B.v[i];
  int ia = a.id, ib = b.id;
  return emit(std::move(C), [ia, ib](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    Tensor& dB = g.grad_of(ib);
    for (size_t i = 0; i < dC.size(); ++i) {
      dA.v[i] += dC.v[i];
      dB.v[i] -= dC.v[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check(A.same_shape(B), "mul shape mismatch");
  Tensor C = A;
  for (size_t i = 0; i < C.size(); ++i) C.v[i] *= B.v[i];
  int ia = a.id, ib = b.id;
  return emit(std::move(C), [ia, ib](Graph& g, const Tensor& dC) {
    const Tensor& A = g.node(ia).val;
    const Tensor& B = g.node(ib).val;
    Tensor& dA = g.grad_of(ia);
    Tensor& dB = g.grad_of(ib);
    for (size_t i = 0; i < dC.size(); ++i) {
      dA.v[i] += dC.v[i] * B.v[i];
      dB.v[i] += dC.v[i] * A.v[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor C = value(a);
  for (double& x : C.v) x *= s;
  int ia = a.id;
  return emit(std::move(C), [ia, s](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (size_t i = 0; i < dC.size(); ++i) dA.v[i] += s * dC.v[i];
  });
}

Var Graph::add_rowvec(Var a, Var rowv) {
  const Tensor& A = value(a);
  const Tensor& R = value(rowv);
  check(R.rows == 1 && R.cols == A.cols, "add_rowvec shape mismatch");
  Tensor C = A;
  for (int i = 0; i < C.rows; ++i)
    for (int j = 0; j < C.cols; ++j) C.at(i, j) += R.at(0, j);
  int ia = a.id, ir = rowv.id;
  return emit(std::move(C), [ia, ir](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    Tensor& dR = g.grad_of(ir);
    for (int i = 0; i < dC.rows; ++i)
      for (int j = 0; j < dC.cols; ++j) {
        dA.at(i, j) += dC.at(i, j);
        dR.at(0, j) += dC.at(i, j);
      }
  });
}

Var Graph::sum_rows(Var a) {
  const Tensor& A = value(a);
  Tensor C(1, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C.at(0, j) += A.at(i, j);
  int ia = a.id;
  return emit(std::move(C), [ia](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (int i = 0; i < dA.rows; ++i)
      for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += dC.at(0, j);
  });
}

Var Graph::row(Var a, int r) { return slice_rows(a, r, r + 1); }

Var Graph::slice_rows(Var a, int r0, int r1) {
  const Tensor& A = value(a);
  check(0 <= r0 && r0 < r1 && r1 <= A.rows, "slice_rows out of range");
  Tensor C(r1 - r0, A.cols);
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < A.cols; ++j) C.at(i - r0, j) = A.at(i, j);
  int ia = a.id;
  return emit(std::move(C), [ia, r0](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (int i = 0; i < dC.rows; ++i)
      for (int j = 0; j < dC.cols; ++j) dA.at(i + r0, j) += dC.at(i, j);
  });
}

Var Graph::slice_cols(Var a, int c0, int c1) {
  const Tensor& A = value(a);
  check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols out of range");
  Tensor C(A.rows, c1 - c0);
  for (int i = 0; i < A.rows; ++i)
    for (int j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  int ia = a.id;
  return emit(std::move(C), [ia, c0](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (int i = 0; i < dC.rows; ++i)
      for (int j = 0; j < dC.cols; ++j) dA.at(i, j + c0) += dC.at(i, j);
  });
}

Var Graph::concat_rows(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_rows of nothing");
  int cols = value(xs[0]).cols;
  int rows = 0;
  for (const Var& x : xs) {
    check(value(x).cols == cols, "concat_rows col mismatch");
    rows += value(x).rows;
  }
  Tensor C(rows, cols);
  int at = 0;
  std::vector<int> ids;
  ids.reserve(xs.size());
  for (const Var& x : xs) {
    const Tensor& X = value(x);
    for (int i = 0; i < X.rows; ++i)
      for (int j = 0; j < cols; ++j) C.at(at + i, j) = X.at(i, j);
    at += X.rows;
    ids.push_back(x.id);
  }
  return emit(std::move(C), [ids](Graph& g, const Tensor& dC) {
    int at = 0;
    for (int id : ids) {
      Tensor& dX = g.grad_of(id);
      for (int i = 0; i < dX.rows; ++i)
        for (int j = 0; j < dX.cols; ++j) dX.at(i, j) += dC.at(at + i, j);
      at += dX.rows;
    }
  });
}

Var Graph::concat_cols(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_cols of nothing");
  int rows = value(xs[0]).rows;
  int cols = 0;
  for (const Var& x : xs) {
    check(value(x).rows == rows, "concat_cols row mismatch");
    cols += value(x).cols;
  }
  Tensor C(rows, cols);
  int at = 0;
  std::vector<int> ids;
  ids.reserve(xs.size());
  for (const Var& x : xs) {
    const Tensor& X = value(x);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < X.cols; ++j) C.at(i, at + j) = X.at(i, j);
    at += X.cols;
    ids.push_back(x.id);
  }
  return emit(std::move(C), [ids](Graph& g, const Tensor& dC) {
    int at = 0;
    for (int id : ids) {
      Tensor& dX = g.grad_of(id);
      for (int i = 0; i < dX.rows; ++i)
        for (int j = 0; j < dX.cols; ++j) dX.at(i, j) += dC.at(i, at + j);
      at += dX.cols;
    }
  });
}

Var Graph::gather_rows(Var a, std::vector<int> ids) {
  const Tensor& A = value(a);
  Tensor C(static_cast<int>(ids.size()), A.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    check(0 <= ids[i] && ids[i] < A.rows, "gather_rows out of range");
    for (int j = 0; j < A.cols; ++j) C.at(static_cast<int>(i), j) = A.at(ids[i], j);
  }
  int ia = a.id;
  return emit(std::move(C), [ia, ids = std::move(ids)](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < dC.cols; ++j) dA.at(ids[i], j) += dC.at(static_cast<int>(i), j);
  });
}

Var Graph::gelu(Var a) {
  const Tensor& A = value(a);
  Tensor C = A;
  for (double& x : C.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  int ia = a.id;
  return emit(std::move(C), [ia](Graph& g, const Tensor& dC) {
    const Tensor& A = g.node(ia).val;
    Tensor& dA = g.grad_of(ia);
    for (size_t i = 0; i < dC.size(); ++i) {
      double x = A.v[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      dA.v[i] += dC.v[i] * (cdf + x * pdf);
    }
  });
}

Var Graph::sigmoid(Var a) {
  const Tensor& A = value(a);
  Tensor C = A;
  for (double& x : C.v) x = 1.0 / (1.0 + std::exp(-x));
  int ia = a.id, ic = static_cast<int>(nodes_.size());
  return emit(std::move(C), [ia, ic](Graph& g, const Tensor& dC) {
    const Tensor& S = g.node(ic).val;
    Tensor& dA = g.grad_of(ia);
    for (size_t i = 0; i < dC.size(); ++i) dA.v[i] += dC.v[i] * S.v[i] * (1.0 - S.v[i]);
  });
}

Var Graph::softmax_rows(Var a) {
  const Tensor& A = value(a);
  Tensor C(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double mx = A.at(i, 0);
    for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(i, j));
    double sum = 0;
    for (int j = 0; j < A.cols; ++j) {
      double e = std::exp(A.at(i, j) - mx);
      C.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < A.cols; ++j) C.at(i, j) /= sum;
  }
  int ia = a.id, ic = static_cast<int>(nodes_.size());
  return emit(std::move(C), [ia, ic](Graph& g, const Tensor& dC) {
    const Tensor& S = g.node(ic).val;
    Tensor& dA = g.grad_of(ia);
    for (int i = 0; i < S.rows; ++i) {
      double dot = 0;
      for (int j = 0; j < S.cols; ++j) dot += dC.at(i, j) * S.at(i, j);
      for (int j = 0; j < S.cols; ++j) dA.at(i, j) += S.at(i, j) * (dC.at(i, j) - dot);
    }
  });
}

Var Graph::layer_norm(Var a, Var gain, Var bias) {
  const Tensor& A = value(a);
  const Tensor& G = value(gain);
  const Tensor& B = value(bias);
  check(G.rows == 1 && G.cols == A.cols && B.rows == 1 && B.cols == A.cols,
        "layer_norm shape mismatch");
  int n = A.cols;
  Tensor C(A.rows, n);
  Tensor xhat(A.rows, n);
  std::vector<double> inv_std(static_cast<size_t>(A.rows));
  for (int i = 0; i < A.rows; ++i) {
    double mean = 0;
    for (int j = 0; j < n; ++j) mean += A.at(i, j);
    mean /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) {
      double d = A.at(i, j) - mean;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (A.at(i, j) - mean) * is;
      xhat.at(i, j) = xh;
      C.at(i, j) = G.at(0, j) * xh + B.at(0, j);
    }
  }
  int ia = a.id, ig = gain.id, ib = bias.id;
  return emit(std::move(C), [ia, ig, ib, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)](Graph& g, const Tensor& dC) {
    const Tensor& G = g.node(ig).val;
    Tensor& dA = g.grad_of(ia);
    Tensor& dG = g.grad_of(ig);
    Tensor& dB = g.grad_of(ib);
    int n = dC.cols;
    for (int i = 0; i < dC.rows; ++i) {
      double mean_dxhat = 0, mean_dxhat_xhat = 0;
      for (int j = 0; j < n; ++j) {
        double dxh = dC.at(i, j) * G.at(0, j);
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat.at(i, j);
        dG.at(0, j) += dC.at(i, j) * xhat.at(i, j);
        dB.at(0, j) += dC.at(i, j);
      }
      mean_dxhat /= n;
      mean_dxhat_xhat /= n;
      double is = inv_std[static_cast<size_t>(i)];
      for (int j = 0; j < n; ++j) {
        double dxh = dC.at(i, j) * G.at(0, j);
        dA.at(i, j) += is * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
      }
    }
  });
}

Var Graph::dropout(Var a, double p) {
  if (!train_ || p <= 0.0) return a;
  check(p < 1.0, "dropout probability must be < 1");
  const Tensor& A = value(a);
  Tensor mask(A.rows, A.cols);
  std::bernoulli_distribution keep(1.0 - p);
  double scalef = 1.0 / (1.0 - p);
  for (double& m : mask.v) m = keep(rng_) ? scalef : 0.0;
  Tensor C = A;
  for (size_t i = 0; i < C.size(); ++i) C.v[i] *= mask.v[i];
  int ia = a.id;
  return emit(std::move(C), [ia, mask = std::move(mask)](Graph& g, const Tensor& dC) {
    Tensor& dA = g.grad_of(ia);
    for (size_t i = 0; i < dC.size(); ++i) dA.v[i] += dC.v[i] * mask.v[i];
  });
}

Var Graph::bce_with_logits_sum(Var logits, std::vector<double> targets) {
  const Tensor& Z = value(logits);
  check(Z.cols == 1 && static_cast<size_t>(Z.rows) == targets.size(),
        "bce_with_logits_sum shape mismatch");
  double total = 0;
  for (int i = 0; i < Z.rows; ++i) {
    double z = Z.at(i, 0);
    double y = targets[static_cast<size_t>(i)];
    total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor C(1, 1);
  C.v[0] = total;
  int iz = logits.id;
  return emit(std::move(C), [iz, targets = std::move(targets)](Graph& g, const Tensor& dC) {
    const Tensor& Z = g.node(iz).val;
    Tensor& dZ = g.grad_of(iz);
    double d = dC.v[0];
    for (int i = 0; i < Z.rows; ++i) {
      double s = 1.0 / (1.0 + std::exp(-Z.at(i, 0)));
      dZ.at(i, 0) += d * (s - targets[static_cast<size_t>(i)]);
    }
  });
}

void Graph::backward(Var loss) {
  check(loss.valid() && value(loss).size() == 1, "backward needs a scalar");
  grad_of(loss.id).v[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

std::vector<std::pair<int, Tensor>> Graph::param_grads() const {
  std::vector<std::pair<int, Tensor>> out;
  for (const auto& [pidx, nid] : param_nodes_) {
    const Node& n = node(nid);
    if (n.grad.size() == 0)
      out.emplace_back(pidx, Tensor(n.val.rows, n.val.cols));
    else
      out.emplace_back(pidx, n.grad);
  }
  return out;
}

}  // namespace mwp::nn
