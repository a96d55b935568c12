// Copyright 2026 The stale-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "stale/common.hpp"

namespace stale {

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation of one forward pass in topological
// order; backward() replays the recorded pullbacks in reverse. Handles
// (V) are plain indices, so they stay valid while the tape grows.
// Matrices are (channels x positions) unless an op says otherwise.
template <class S>
class Tape {
 public:
  struct V {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() { nodes_.reserve(1024); }

  V leaf(Mat<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, {});
  }

  V constant(Mat<S> value) { return leaf(std::move(value), false); }

  const Mat<S>& val(V v) const { return nodes_[v.id].value; }
  Mat<S>& grad(V v) { return nodes_[v.id].grad; }
  bool needs_grad(V v) const { return nodes_[v.id].needs_grad; }
  Index rows(V v) const { return nodes_[v.id].value.rows(); }
  Index cols(V v) const { return nodes_[v.id].value.cols(); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node
  // that (transitively) requires them. root must be 1x1.
  void backward(V root) {
    require(val(root).rows() == 1 && val(root).cols() == 1,
            "backward: root must be scalar");
    for (auto& n : nodes_)
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    nodes_[root.id].grad(0, 0) = S(1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.pull && n.needs_grad) n.pull(*this, i);
    }
  }

  // ---- primitive ops ----

  V add(V a, V b) {
    check_same_shape(a, b, "add");
    return push(val(a) + val(b), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t, int id) {
                  t.acc(a, t.nodes_[id].grad);
                  t.acc(b, t.nodes_[id].grad);
                });
  }

  V sub(V a, V b) {
    check_same_shape(a, b, "sub");
    return push(val(a) - val(b), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t, int id) {
                  t.acc(a, t.nodes_[id].grad);
                  t.acc(b, -t.nodes_[id].grad);
                });
  }

  V neg(V a) {
    return push(-val(a), needs_grad(a),
                [a](Tape& t, int id) { t.acc(a, -t.nodes_[id].grad); });
  }

  // Elementwise (Hadamard) product.
  V mul(V a, V b) {
    check_same_shape(a, b, "mul");
    return push(val(a).cwiseProduct(val(b)), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t, int id) {
                  const Mat<S>& g = t.nodes_[id].grad;
                  t.acc(a, g.cwiseProduct(t.val(b)));
                  t.acc(b, g.cwiseProduct(t.val(a)));
                });
  }

  // Elementwise division; caller guarantees the denominator is nonzero.
  V div(V a, V b) {
    check_same_shape(a, b, "div");
    return push(val(a).cwiseQuotient(val(b)), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t, int id) {
                  const Mat<S>& g = t.nodes_[id].grad;
                  const Mat<S>& bv = t.val(b);
                  t.acc(a, g.cwiseQuotient(bv));
                  t.acc(b, -g.cwiseProduct(t.val(a))
                             .cwiseQuotient(bv.cwiseProduct(bv)));
                });
  }

  V matmul(V a, V b) {
    require(cols(a) == rows(b), "matmul: inner dims");
    return push(val(a) * val(b), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t, int id) {
                  const Mat<S>& g = t.nodes_[id].grad;
                  t.acc(a, g * t.val(b).transpose());
                  t.acc(b, t.val(a).transpose() * g);
                });
  }

  V scale(V a, S c) {
    return push(val(a) * c, needs_grad(a),
                [a, c](Tape& t, int id) { t.acc(a, t.nodes_[id].grad * c); });
  }

  V transpose(V a) {
    return push(val(a).transpose(), needs_grad(a), [a](Tape& t, int id) {
      t.acc(a, t.nodes_[id].grad.transpose());
    });
  }

  V sigmoid(V a) {
    Mat<S> y = val(a).unaryExpr([](S x) {
      return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                       : std::exp(x) / (S(1) + std::exp(x));
    });
    return push(std::move(y), needs_grad(a), [a](Tape& t, int id) {
      const Mat<S>& y = t.nodes_[id].value;
      t.acc(a, t.nodes_[id].grad.cwiseProduct(
                   y.cwiseProduct(Mat<S>::Ones(y.rows(), y.cols()) - y)));
    });
  }

  // Exact GELU (erf form); smooth, so finite-difference friendly.
  V gelu(V a) {
    Mat<S> y = val(a).unaryExpr([](S x) {
      return S(0.5) * x * (S(1) + std::erf(x * S(M_SQRT1_2)));
    });
    return push(std::move(y), needs_grad(a), [a](Tape& t, int id) {
      const Mat<S>& x = t.val(a);
      Mat<S> d = x.unaryExpr([](S v) {
        const S cdf = S(0.5) * (S(1) + std::erf(v * S(M_SQRT1_2)));
        const S pdf = std::exp(S(-0.5) * v * v) * S(0.3989422804014327);
        return cdf + v * pdf;
      });
      t.acc(a, t.nodes_[id].grad.cwiseProduct(d));
    });
  }

  V exp(V a) {
    Mat<S> y = val(a).array().exp().matrix();
    return push(std::move(y), needs_grad(a), [a](Tape& t, int id) {
      t.acc(a, t.nodes_[id].grad.cwiseProduct(t.nodes_[id].value));
    });
  }

  // log(x + eps)
  V log_eps(V a, S eps) {
    Mat<S> y = (val(a).array() + eps).log().matrix();
    return push(std::move(y), needs_grad(a), [a, eps](Tape& t, int id) {
      t.acc(a, t.nodes_[id].grad.cwiseQuotient(
                   (t.val(a).array() + eps).matrix()));
    });
  }

  V square(V a) {
    return push(val(a).cwiseProduct(val(a)), needs_grad(a),
                [a](Tape& t, int id) {
                  t.acc(a, S(2) * t.nodes_[id].grad.cwiseProduct(t.val(a)));
                });
  }

  // 1/sqrt(x + eps)
  V rsqrt_eps(V a, S eps) {
    Mat<S> y = (val(a).array() + eps).rsqrt().matrix();
    return push(std::move(y), needs_grad(a), [a, eps](Tape& t, int id) {
      const Mat<S>& y = t.nodes_[id].value;
      t.acc(a, S(-0.5) * t.nodes_[id].grad.cwiseProduct(
                   y.cwiseProduct(y).cwiseProduct(y)));
    });
  }

  // (n,m) -> (1,m), sum down each column.
  V colwise_sum(V a) {
    Mat<S> y = val(a).colwise().sum();
    const Index n = rows(a);
    return push(std::move(y), needs_grad(a), [a, n](Tape& t, int id) {
      t.acc(a, t.nodes_[id].grad.replicate(n, 1));
    });
  }

  // (n,m) -> (n,1), sum across each row.
  V rowwise_sum(V a) {
    Mat<S> y = val(a).rowwise().sum();
    const Index m = cols(a);
    return push(std::move(y), needs_grad(a), [a, m](Tape& t, int id) {
      t.acc(a, t.nodes_[id].grad.replicate(1, m));
    });
  }

  V sum_all(V a) {
    Mat<S> y(1, 1);
    y(0, 0) = val(a).sum();
    const Index n = rows(a), m = cols(a);
    return push(std::move(y), needs_grad(a), [a, n, m](Tape& t, int id) {
      t.acc(a, Mat<S>::Constant(n, m, t.nodes_[id].grad(0, 0)));
    });
  }

  // (1,m) -> (n,m)
  V broadcast_rows(V row, Index n) {
    require(rows(row) == 1, "broadcast_rows: expects a row vector");
    return push(val(row).replicate(n, 1), needs_grad(row),
                [row](Tape& t, int id) {
                  t.acc(row, t.nodes_[id].grad.colwise().sum());
                });
  }

  // (n,1) -> (n,m)
  V broadcast_cols(V col, Index m) {
    require(cols(col) == 1, "broadcast_cols: expects a column vector");
    return push(val(col).replicate(1, m), needs_grad(col),
                [col](Tape& t, int id) {
                  t.acc(col, t.nodes_[id].grad.rowwise().sum());
                });
  }

  // (1,1) -> (n,m)
  V broadcast_scalar(V s, Index n, Index m) {
    require(rows(s) == 1 && cols(s) == 1, "broadcast_scalar: expects 1x1");
    return push(Mat<S>::Constant(n, m, val(s)(0, 0)), needs_grad(s),
                [s](Tape& t, int id) {
                  Mat<S> g(1, 1);
                  g(0, 0) = t.nodes_[id].grad.sum();
                  t.acc(s, g);
                });
  }

  // Numerically stable softmax down each column.
  V softmax_cols(V a) {
    Mat<S> y = val(a);
    for (Index j = 0; j < y.cols(); ++j) {
      const S mx = y.col(j).maxCoeff();
      y.col(j) = (y.col(j).array() - mx).exp();
      y.col(j) /= y.col(j).sum();
    }
    return push(std::move(y), needs_grad(a), [a](Tape& t, int id) {
      const Mat<S>& y = t.nodes_[id].value;
      const Mat<S>& g = t.nodes_[id].grad;
      Mat<S> gy = g.cwiseProduct(y);
      Eigen::Matrix<S, 1, Eigen::Dynamic> dots = gy.colwise().sum();
      Mat<S> out(y.rows(), y.cols());
      for (Index j = 0; j < y.cols(); ++j)
        out.col(j) = gy.col(j) - y.col(j) * dots(j);
      t.acc(a, out);
    });
  }

  // Zero-safe L2 normalization of each column: columns with norm below
  // `tiny` map to zero (and receive zero gradient).
  V normalize_cols(V a, S tiny = S(1e-12)) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    std::vector<S> norms(static_cast<std::size_t>(x.cols()));
    for (Index j = 0; j < x.cols(); ++j) {
      const S n = x.col(j).norm();
      norms[static_cast<std::size_t>(j)] = n;
      y.col(j) = n > tiny ? (x.col(j) / n).eval() : Vec<S>::Zero(x.rows());
    }
    return push(std::move(y), needs_grad(a),
                [a, norms, tiny](Tape& t, int id) {
                  const Mat<S>& y = t.nodes_[id].value;
                  const Mat<S>& g = t.nodes_[id].grad;
                  Mat<S> out = Mat<S>::Zero(y.rows(), y.cols());
                  for (Index j = 0; j < y.cols(); ++j) {
                    const S n = norms[static_cast<std::size_t>(j)];
                    if (n <= tiny) continue;
                    const S dot = y.col(j).dot(g.col(j));
                    out.col(j) = (g.col(j) - y.col(j) * dot) / n;
                  }
                  t.acc(a, out);
                });
  }

  V slice_rows(V a, Index r0, Index nrows) {
    require(r0 >= 0 && r0 + nrows <= rows(a), "slice_rows: range");
    const Index total = rows(a), m = cols(a);
    return push(val(a).middleRows(r0, nrows), needs_grad(a),
                [a, r0, nrows, total, m](Tape& t, int id) {
                  Mat<S> g = Mat<S>::Zero(total, m);
                  g.middleRows(r0, nrows) = t.nodes_[id].grad;
                  t.acc(a, g);
                });
  }

  V slice_cols(V a, Index c0, Index ncols) {
    require(c0 >= 0 && c0 + ncols <= cols(a), "slice_cols: range");
    const Index n = rows(a), total = cols(a);
    return push(val(a).middleCols(c0, ncols), needs_grad(a),
                [a, c0, ncols, n, total](Tape& t, int id) {
                  Mat<S> g = Mat<S>::Zero(n, total);
                  g.middleCols(c0, ncols) = t.nodes_[id].grad;
                  t.acc(a, g);
                });
  }

  V concat_rows(const std::vector<V>& parts) {
    require(!parts.empty(), "concat_rows: empty");
    Index n = 0;
    const Index m = cols(parts[0]);
    bool ng = false;
    for (V p : parts) {
      require(cols(p) == m, "concat_rows: column mismatch");
      n += rows(p);
      ng = ng || needs_grad(p);
    }
    Mat<S> y(n, m);
    Index at = 0;
    for (V p : parts) {
      y.middleRows(at, rows(p)) = val(p);
      at += rows(p);
    }
    return push(std::move(y), ng, [parts](Tape& t, int id) {
      Index at = 0;
      for (V p : parts) {
        t.acc(p, t.nodes_[id].grad.middleRows(at, t.rows(p)));
        at += t.rows(p);
      }
    });
  }

  V concat_cols(const std::vector<V>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    Index m = 0;
    const Index n = rows(parts[0]);
    bool ng = false;
    for (V p : parts) {
      require(rows(p) == n, "concat_cols: row mismatch");
      m += cols(p);
      ng = ng || needs_grad(p);
    }
    Mat<S> y(n, m);
    Index at = 0;
    for (V p : parts) {
      y.middleCols(at, cols(p)) = val(p);
      at += cols(p);
    }
    return push(std::move(y), ng, [parts](Tape& t, int id) {
      Index at = 0;
      for (V p : parts) {
        t.acc(p, t.nodes_[id].grad.middleCols(at, t.cols(p)));
        at += t.cols(p);
      }
    });
  }

  // Gathers columns; duplicate indices accumulate in the backward pass.
  V select_cols(V a, std::vector<Index> idx) {
    Mat<S> y(rows(a), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      require(idx[j] >= 0 && idx[j] < cols(a), "select_cols: index");
      y.col(static_cast<Index>(j)) = val(a).col(idx[j]);
    }
    const Index n = rows(a), m = cols(a);
    return push(std::move(y), needs_grad(a),
                [a, idx = std::move(idx), n, m](Tape& t, int id) {
                  Mat<S> g = Mat<S>::Zero(n, m);
                  for (std::size_t j = 0; j < idx.size(); ++j)
                    g.col(idx[j]) += t.nodes_[id].grad.col(
                        static_cast<Index>(j));
                  t.acc(a, g);
                });
  }

  // out[:,t] = a[:, clamp(t+delta, 0, m-1)]. Replicate padding keeps
  // constant-in-time inputs exactly constant through convolutions.
  V shift_cols_clamp(V a, Index delta) {
    const Index n = rows(a), m = cols(a);
    Mat<S> y(n, m);
    for (Index t = 0; t < m; ++t)
      y.col(t) = val(a).col(clamp_idx(t + delta, m));
    return push(std::move(y), needs_grad(a), [a, delta, n, m](Tape& t, int id) {
      Mat<S> g = Mat<S>::Zero(n, m);
      for (Index j = 0; j < m; ++j)
        g.col(clamp_idx(j + delta, m)) += t.nodes_[id].grad.col(j);
      t.acc(a, g);
    });
  }

  // Foreground gate with a hard threshold in the forward pass and a
  // straight-through backward: d(out)/d(lhat) treats the binarization
  // as identity. lhat is (1,T), x is (C,T).
  V st_gate(V x, V lhat, S theta) {
    require(rows(lhat) == 1 && cols(lhat) == cols(x), "st_gate: shapes");
    Vec<S> bin(cols(x));
    for (Index t = 0; t < cols(x); ++t)
      bin(t) = val(lhat)(0, t) >= theta ? S(1) : S(0);
    Mat<S> y =
        (val(x).array().rowwise() * bin.transpose().array()).matrix();
    return push(std::move(y), needs_grad(x) || needs_grad(lhat),
                [x, lhat, bin](Tape& t, int id) {
                  const Mat<S>& g = t.nodes_[id].grad;
                  t.acc(x, (g.array().rowwise() * bin.transpose().array())
                               .matrix());
                  t.acc(lhat, g.cwiseProduct(t.val(x)).colwise().sum());
                });
  }

  // ---- composites ----

  V mean_all(V a) {
    return scale(sum_all(a), S(1) / S(rows(a) * cols(a)));
  }

  V colwise_mean(V a) { return scale(colwise_sum(a), S(1) / S(rows(a))); }

  // y = W x + b, with b broadcast across columns. b may be invalid() to
  // skip the bias.
  V linear(V W, V x, V b) {
    V y = matmul(W, x);
    if (b.valid()) y = add(y, broadcast_cols(b, cols(x)));
    return y;
  }

  // Cosine similarity between two column vectors, zero-safe. Returns 1x1.
  V cosine(V a, V b) {
    return matmul(transpose(normalize_cols(a)), normalize_cols(b));
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void(Tape&, int)> pull;
    bool needs_grad = false;
  };

  static Index clamp_idx(Index i, Index m) {
    return i < 0 ? 0 : (i >= m ? m - 1 : i);
  }

  void check_same_shape(V a, V b, const char* op) {
    require(rows(a) == rows(b) && cols(a) == cols(b),
            std::string(op) + ": shape mismatch");
  }

  void acc(V parent, const Mat<S>& g) {
    if (nodes_[parent.id].needs_grad) nodes_[parent.id].grad += g;
  }

  V push(Mat<S> value, bool needs_grad, std::function<void(Tape&, int)> pull) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return V{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

template <class S>
using V = typename Tape<S>::V;

}  // namespace stale
