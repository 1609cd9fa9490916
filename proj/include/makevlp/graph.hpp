#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "makevlp/errors.hpp"
#include "makevlp/tensor.hpp"

namespace makevlp {

// A named, trainable tensor living outside any graph. Gradients accumulate
// into `grad` when a graph that references the parameter flushes.
template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool decay = true;  // subject to weight decay (matrices yes, gains/biases no)

  ParamT() = default;
  ParamT(std::string n, TensorT<T> v, bool d = true)
      : name(std::move(n)), value(std::move(v)), grad(TensorT<T>::zeros(value.shape)), decay(d) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct NodeT {
  TensorT<T> val;
  TensorT<T> grad;
  std::function<void()> back;  // empty for leaves
};

// Reverse-mode tape. Nodes are created in topological order, so the backward
// sweep is a plain reverse iteration. One graph per forward pass, confined to
// one thread. Reductions accumulate in double so that values are stable under
// summand reordering at the 1e-6 level the oracles require.
template <typename T>
class GraphT {
 public:
  using Node = NodeT<T>;

  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  size_t size() const { return nodes_.size(); }

  // ---- leaves ----

  Node* input(TensorT<T> t) {
    Node* n = make(t.shape);
    n->val = std::move(t);
    return n;
  }

  Node* param(ParamT<T>& p) {
    Node* n = input(p.value);
    bound_.emplace_back(n, &p);
    return n;
  }

  // ---- elementwise ----

  Node* add(Node* a, Node* b) {
    require_same_shape(a->val, b->val, "add");
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] + b->val.v[i];
    out->back = [out, a, b] {
      for (int64_t i = 0; i < out->val.numel(); ++i) {
        a->grad.v[i] += out->grad.v[i];
        b->grad.v[i] += out->grad.v[i];
      }
    };
    return out;
  }

  Node* sub(Node* a, Node* b) {
    require_same_shape(a->val, b->val, "sub");
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] - b->val.v[i];
    out->back = [out, a, b] {
      for (int64_t i = 0; i < out->val.numel(); ++i) {
        a->grad.v[i] += out->grad.v[i];
        b->grad.v[i] -= out->grad.v[i];
      }
    };
    return out;
  }

  Node* mul(Node* a, Node* b) {
    require_same_shape(a->val, b->val, "mul");
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] * b->val.v[i];
    out->back = [out, a, b] {
      for (int64_t i = 0; i < out->val.numel(); ++i) {
        a->grad.v[i] += out->grad.v[i] * b->val.v[i];
        b->grad.v[i] += out->grad.v[i] * a->val.v[i];
      }
    };
    return out;
  }

  Node* scale(Node* a, T c) {
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] * c;
    out->back = [out, a, c] {
      for (int64_t i = 0; i < out->val.numel(); ++i) a->grad.v[i] += out->grad.v[i] * c;
    };
    return out;
  }

  Node* neg(Node* a) { return scale(a, T(-1)); }

  // Elementwise multiply by a fixed tensor. Doubles as the masking-select
  // primitive: masked-out entries have zero value and zero gradient.
  Node* mul_const(Node* a, TensorT<T> w) {
    require_same_shape(a->val, w, "mul_const");
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] * w.v[i];
    auto wp = std::make_shared<TensorT<T>>(std::move(w));
    out->back = [out, a, wp] {
      for (int64_t i = 0; i < out->val.numel(); ++i) a->grad.v[i] += out->grad.v[i] * wp->v[i];
    };
    return out;
  }

  Node* mask_select(Node* a, const TensorT<T>& mask) { return mul_const(a, mask); }

  // Broadcast multiply by a scalar node (e.g. the inverse temperature).
  Node* mul_scalar(Node* a, Node* s) {
    if (s->val.numel() != 1) throw ShapeMismatch("mul_scalar: scalar operand expected");
    Node* out = make(a->val.shape);
    const T sv = s->val.v[0];
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = a->val.v[i] * sv;
    out->back = [out, a, s] {
      const T sv = s->val.v[0];
      double acc = 0.0;
      for (int64_t i = 0; i < out->val.numel(); ++i) {
        a->grad.v[i] += out->grad.v[i] * sv;
        acc += static_cast<double>(out->grad.v[i]) * a->val.v[i];
      }
      s->grad.v[0] += static_cast<T>(acc);
    };
    return out;
  }

  Node* exp_(Node* a) {
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = std::exp(a->val.v[i]);
    out->back = [out, a] {
      for (int64_t i = 0; i < out->val.numel(); ++i)
        a->grad.v[i] += out->grad.v[i] * out->val.v[i];
    };
    return out;
  }

  // log(max(x, 1e-12)). The guard never binds on well-formed inputs; it turns
  // NaN storms into detectable drift instead.
  Node* log_(Node* a) {
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i)
      out->val.v[i] = std::log(std::max(a->val.v[i], kLogFloor));
    out->back = [out, a] {
      for (int64_t i = 0; i < out->val.numel(); ++i)
        if (a->val.v[i] >= kLogFloor) a->grad.v[i] += out->grad.v[i] / a->val.v[i];
    };
    return out;
  }

  Node* reciprocal(Node* a) {
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) out->val.v[i] = T(1) / a->val.v[i];
    out->back = [out, a] {
      for (int64_t i = 0; i < out->val.numel(); ++i)
        a->grad.v[i] -= out->grad.v[i] * out->val.v[i] * out->val.v[i];
    };
    return out;
  }

  // clamp(exp(x), lo, hi) on a scalar; gradient is zero while clamped.
  Node* clamp_exp(Node* a, T lo, T hi) {
    if (a->val.numel() != 1) throw ShapeMismatch("clamp_exp: scalar expected");
    Node* out = make(a->val.shape);
    const T t = std::exp(a->val.v[0]);
    out->val.v[0] = std::min(std::max(t, lo), hi);
    const bool interior = t > lo && t < hi;
    out->back = [out, a, interior] {
      if (interior) a->grad.v[0] += out->grad.v[0] * out->val.v[0];
    };
    return out;
  }

  Node* gelu(Node* a) {
    Node* out = make(a->val.shape);
    for (int64_t i = 0; i < out->val.numel(); ++i) {
      const T x = a->val.v[i];
      const T u = kGeluC * (x + T(0.044715) * x * x * x);
      out->val.v[i] = T(0.5) * x * (T(1) + std::tanh(u));
    }
    out->back = [out, a] {
      for (int64_t i = 0; i < out->val.numel(); ++i) {
        const T x = a->val.v[i];
        const T u = kGeluC * (x + T(0.044715) * x * x * x);
        const T t = std::tanh(u);
        const T sech2 = T(1) - t * t;
        const T du = kGeluC * (T(1) + T(3) * T(0.044715) * x * x);
        a->grad.v[i] += out->grad.v[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * sech2 * du);
      }
    };
    return out;
  }

  // ---- linear algebra ----

  Node* matmul(Node* a, Node* b) {
    const int m = a->val.rows(), k = a->val.cols();
    if (b->val.rows() != k)
      throw ShapeMismatch("matmul " + a->val.shape_string() + " x " + b->val.shape_string());
    const int n = b->val.cols();
    Node* out = make({m, n});
    std::vector<double> row(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int kk = 0; kk < k; ++kk) {
        const double av = a->val.at(i, kk);
        const T* brow = &b->val.v[static_cast<size_t>(kk) * n];
        for (int j = 0; j < n; ++j) row[j] += av * brow[j];
      }
      for (int j = 0; j < n; ++j) out->val.at(i, j) = static_cast<T>(row[j]);
    }
    out->back = [out, a, b, m, k, n] {
      for (int i = 0; i < m; ++i) {
        const T* grow = &out->grad.v[static_cast<size_t>(i) * n];
        for (int kk = 0; kk < k; ++kk) {
          const T* brow = &b->val.v[static_cast<size_t>(kk) * n];
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += static_cast<double>(grow[j]) * brow[j];
          a->grad.at(i, kk) += static_cast<T>(acc);
        }
        for (int kk = 0; kk < k; ++kk) {
          const T av = a->val.at(i, kk);
          T* gbrow = &b->grad.v[static_cast<size_t>(kk) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    };
    return out;
  }

  Node* matvec(Node* m, Node* x) {
    const int r = m->val.rows(), c = m->val.cols();
    if (x->val.rank() != 1 || x->val.shape[0] != c)
      throw ShapeMismatch("matvec " + m->val.shape_string() + " x " + x->val.shape_string());
    Node* out = make({r});
    for (int i = 0; i < r; ++i) {
      double acc = 0.0;
      for (int j = 0; j < c; ++j) acc += static_cast<double>(m->val.at(i, j)) * x->val.v[j];
      out->val.v[i] = static_cast<T>(acc);
    }
    out->back = [out, m, x, r, c] {
      for (int i = 0; i < r; ++i) {
        const T g = out->grad.v[i];
        if (g == T(0)) continue;
        for (int j = 0; j < c; ++j) {
          m->grad.at(i, j) += g * x->val.v[j];
          x->grad.v[j] += g * m->val.at(i, j);
        }
      }
    };
    return out;
  }

  Node* vecmat(Node* x, Node* m) {
    const int r = m->val.rows(), c = m->val.cols();
    if (x->val.rank() != 1 || x->val.shape[0] != r)
      throw ShapeMismatch("vecmat " + x->val.shape_string() + " x " + m->val.shape_string());
    Node* out = make({c});
    std::vector<double> acc(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < r; ++i) {
      const double xv = x->val.v[i];
      for (int j = 0; j < c; ++j) acc[j] += xv * m->val.at(i, j);
    }
    for (int j = 0; j < c; ++j) out->val.v[j] = static_cast<T>(acc[j]);
    out->back = [out, x, m, r, c] {
      for (int i = 0; i < r; ++i) {
        double gx = 0.0;
        for (int j = 0; j < c; ++j) {
          const T g = out->grad.v[j];
          m->grad.at(i, j) += x->val.v[i] * g;
          gx += static_cast<double>(g) * m->val.at(i, j);
        }
        x->grad.v[i] += static_cast<T>(gx);
      }
    };
    return out;
  }

  Node* transpose(Node* a) {
    const int r = a->val.rows(), c = a->val.cols();
    Node* out = make({c, r});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out->val.at(j, i) = a->val.at(i, j);
    out->back = [out, a, r, c] {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a->grad.at(i, j) += out->grad.at(j, i);
    };
    return out;
  }

  Node* add_bias(Node* m, Node* b) {
    const int r = m->val.rows(), c = m->val.cols();
    if (b->val.rank() != 1 || b->val.shape[0] != c)
      throw ShapeMismatch("add_bias " + m->val.shape_string() + " + " + b->val.shape_string());
    Node* out = make({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out->val.at(i, j) = m->val.at(i, j) + b->val.v[j];
    out->back = [out, m, b, r, c] {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          m->grad.at(i, j) += out->grad.at(i, j);
          b->grad.v[j] += out->grad.at(i, j);
        }
    };
    return out;
  }

  // ---- rows/columns plumbing ----

  Node* take_row(Node* m, int r) {
    const int c = m->val.cols();
    if (r < 0 || r >= m->val.rows()) throw ShapeMismatch("take_row out of range");
    Node* out = make({c});
    for (int j = 0; j < c; ++j) out->val.v[j] = m->val.at(r, j);
    out->back = [out, m, r, c] {
      for (int j = 0; j < c; ++j) m->grad.at(r, j) += out->grad.v[j];
    };
    return out;
  }

  // Row gather (embedding lookup); repeated indices accumulate on backward.
  Node* take_rows(Node* m, std::vector<int> idx) {
    const int c = m->val.cols();
    for (int r : idx)
      if (r < 0 || r >= m->val.rows()) throw ShapeMismatch("take_rows index out of range");
    Node* out = make({static_cast<int>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j) out->val.at(static_cast<int>(i), j) = m->val.at(idx[i], j);
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    out->back = [out, m, ip, c] {
      for (size_t i = 0; i < ip->size(); ++i)
        for (int j = 0; j < c; ++j)
          m->grad.at((*ip)[i], j) += out->grad.at(static_cast<int>(i), j);
    };
    return out;
  }

  Node* slice_cols(Node* m, int c0, int c1) {
    const int r = m->val.rows(), c = m->val.cols();
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeMismatch("slice_cols range");
    Node* out = make({r, c1 - c0});
    for (int i = 0; i < r; ++i)
      for (int j = c0; j < c1; ++j) out->val.at(i, j - c0) = m->val.at(i, j);
    out->back = [out, m, r, c0, c1] {
      for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j) m->grad.at(i, j) += out->grad.at(i, j - c0);
    };
    return out;
  }

  Node* concat_cols(const std::vector<Node*>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
    const int r = parts[0]->val.rows();
    int c = 0;
    for (Node* p : parts) {
      if (p->val.rows() != r) throw ShapeMismatch("concat_cols: row mismatch");
      c += p->val.cols();
    }
    Node* out = make({r, c});
    int off = 0;
    for (Node* p : parts) {
      const int pc = p->val.cols();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < pc; ++j) out->val.at(i, off + j) = p->val.at(i, j);
      off += pc;
    }
    auto pp = std::make_shared<std::vector<Node*>>(parts);
    out->back = [out, pp, r] {
      int off = 0;
      for (Node* p : *pp) {
        const int pc = p->val.cols();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < pc; ++j) p->grad.at(i, j) += out->grad.at(i, off + j);
        off += pc;
      }
    };
    return out;
  }

  // Stack rank-1 nodes of equal length into a matrix.
  Node* stack_rows(const std::vector<Node*>& parts) {
    if (parts.empty()) throw ShapeMismatch("stack_rows: empty");
    const int c = parts[0]->val.shape.at(0);
    for (Node* p : parts)
      if (p->val.rank() != 1 || p->val.shape[0] != c)
        throw ShapeMismatch("stack_rows: length mismatch");
    Node* out = make({static_cast<int>(parts.size()), c});
    for (size_t i = 0; i < parts.size(); ++i)
      for (int j = 0; j < c; ++j) out->val.at(static_cast<int>(i), j) = parts[i]->val.v[j];
    auto pp = std::make_shared<std::vector<Node*>>(parts);
    out->back = [out, pp, c] {
      for (size_t i = 0; i < pp->size(); ++i)
        for (int j = 0; j < c; ++j) (*pp)[i]->grad.v[j] += out->grad.at(static_cast<int>(i), j);
    };
    return out;
  }

  Node* concat_rows(const std::vector<Node*>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: empty");
    const int c = parts[0]->val.cols();
    int r = 0;
    for (Node* p : parts) {
      if (p->val.cols() != c) throw ShapeMismatch("concat_rows: column mismatch");
      r += p->val.rows();
    }
    Node* out = make({r, c});
    int off = 0;
    for (Node* p : parts) {
      for (int i = 0; i < p->val.rows(); ++i)
        for (int j = 0; j < c; ++j) out->val.at(off + i, j) = p->val.at(i, j);
      off += p->val.rows();
    }
    auto pp = std::make_shared<std::vector<Node*>>(parts);
    out->back = [out, pp, c] {
      int off = 0;
      for (Node* p : *pp) {
        for (int i = 0; i < p->val.rows(); ++i)
          for (int j = 0; j < c; ++j) p->grad.at(i, j) += out->grad.at(off + i, j);
        off += p->val.rows();
      }
    };
    return out;
  }

  Node* gather_vec(Node* v, std::vector<int> idx) {
    if (v->val.rank() != 1) throw ShapeMismatch("gather_vec expects rank 1");
    for (int i : idx)
      if (i < 0 || i >= v->val.shape[0]) throw ShapeMismatch("gather_vec index out of range");
    Node* out = make({static_cast<int>(idx.size())});
    for (size_t i = 0; i < idx.size(); ++i) out->val.v[i] = v->val.v[static_cast<size_t>(idx[i])];
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    out->back = [out, v, ip] {
      for (size_t i = 0; i < ip->size(); ++i)
        v->grad.v[static_cast<size_t>((*ip)[i])] += out->grad.v[i];
    };
    return out;
  }

  Node* gather_entries(Node* m, std::vector<std::pair<int, int>> rc) {
    Node* out = make({static_cast<int>(rc.size())});
    for (size_t i = 0; i < rc.size(); ++i) out->val.v[i] = m->val.at(rc[i].first, rc[i].second);
    auto ip = std::make_shared<std::vector<std::pair<int, int>>>(std::move(rc));
    out->back = [out, m, ip] {
      for (size_t i = 0; i < ip->size(); ++i)
        m->grad.at((*ip)[i].first, (*ip)[i].second) += out->grad.v[i];
    };
    return out;
  }

  // ---- reductions & normalizations ----

  Node* sum(Node* a) {
    Node* out = make({});
    double acc = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) acc += a->val.v[i];
    out->val.v[0] = static_cast<T>(acc);
    out->back = [out, a] {
      for (int64_t i = 0; i < a->val.numel(); ++i) a->grad.v[i] += out->grad.v[0];
    };
    return out;
  }

  Node* mean(Node* a) {
    const int64_t n = a->val.numel();
    if (n == 0) throw ShapeMismatch("mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  Node* row_mean(Node* m) {
    const int r = m->val.rows(), c = m->val.cols();
    if (r == 0) throw ShapeMismatch("row_mean of empty matrix");
    Node* out = make({c});
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int i = 0; i < r; ++i) acc += m->val.at(i, j);
      out->val.v[j] = static_cast<T>(acc / r);
    }
    out->back = [out, m, r, c] {
      const T inv = T(1) / static_cast<T>(r);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m->grad.at(i, j) += out->grad.v[j] * inv;
    };
    return out;
  }

  // Softmax over the last axis; rank-1 input is treated as a single row.
  Node* softmax_rows(Node* a) {
    auto [r, c] = row_view(a->val);
    Node* out = make(a->val.shape);
    for (int i = 0; i < r; ++i) {
      const T* x = &a->val.v[static_cast<size_t>(i) * c];
      T* y = &out->val.v[static_cast<size_t>(i) * c];
      T mx = x[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
      double denom = 0.0;
      for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(x[j]) - mx);
      for (int j = 0; j < c; ++j)
        y[j] = static_cast<T>(std::exp(static_cast<double>(x[j]) - mx) / denom);
    }
    out->back = [out, a, r, c] {
      for (int i = 0; i < r; ++i) {
        const T* y = &out->val.v[static_cast<size_t>(i) * c];
        const T* g = &out->grad.v[static_cast<size_t>(i) * c];
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(g[j]) * y[j];
        for (int j = 0; j < c; ++j)
          a->grad.v[static_cast<size_t>(i) * c + j] += y[j] * (g[j] - static_cast<T>(dot));
      }
    };
    return out;
  }

  // L2-normalize the last axis; rank-1 input is a single row.
  Node* l2norm_rows(Node* a) {
    auto [r, c] = row_view(a->val);
    Node* out = make(a->val.shape);
    auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
      const T* x = &a->val.v[static_cast<size_t>(i) * c];
      double sq = 0.0;
      for (int j = 0; j < c; ++j) sq += static_cast<double>(x[j]) * x[j];
      const T nrm = std::max(static_cast<T>(std::sqrt(sq)), T(1e-12));
      (*norms)[i] = nrm;
      for (int j = 0; j < c; ++j) out->val.v[static_cast<size_t>(i) * c + j] = x[j] / nrm;
    }
    out->back = [out, a, norms, r, c] {
      for (int i = 0; i < r; ++i) {
        const T* y = &out->val.v[static_cast<size_t>(i) * c];
        const T* g = &out->grad.v[static_cast<size_t>(i) * c];
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(g[j]) * y[j];
        const T inv = T(1) / (*norms)[i];
        for (int j = 0; j < c; ++j)
          a->grad.v[static_cast<size_t>(i) * c + j] += (g[j] - static_cast<T>(dot) * y[j]) * inv;
      }
    };
    return out;
  }

  Node* layernorm_rows(Node* a, Node* gain, Node* bias) {
    const int r = a->val.rows(), c = a->val.cols();
    if (gain->val.rank() != 1 || gain->val.shape[0] != c || bias->val.rank() != 1 ||
        bias->val.shape[0] != c)
      throw ShapeMismatch("layernorm_rows gain/bias");
    Node* out = make({r, c});
    auto xhat = std::make_shared<TensorT<T>>(TensorT<T>::zeros({r, c}));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
      const T* x = &a->val.v[static_cast<size_t>(i) * c];
      double mu = 0.0;
      for (int j = 0; j < c; ++j) mu += x[j];
      mu /= c;
      double var = 0.0;
      for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= c;
      const T inv = static_cast<T>(1.0 / std::sqrt(var + 1e-5));
      (*inv_std)[i] = inv;
      for (int j = 0; j < c; ++j) {
        const T xh = (x[j] - static_cast<T>(mu)) * inv;
        xhat->at(i, j) = xh;
        out->val.at(i, j) = gain->val.v[j] * xh + bias->val.v[j];
      }
    }
    out->back = [out, a, gain, bias, xhat, inv_std, r, c] {
      for (int i = 0; i < r; ++i) {
        double sum_gh = 0.0, sum_gh_xh = 0.0;
        for (int j = 0; j < c; ++j) {
          const T g = out->grad.at(i, j);
          const T xh = xhat->at(i, j);
          gain->grad.v[j] += g * xh;
          bias->grad.v[j] += g;
          const double gh = static_cast<double>(g) * gain->val.v[j];
          sum_gh += gh;
          sum_gh_xh += gh * xh;
        }
        const T m_gh = static_cast<T>(sum_gh / c);
        const T m_gh_xh = static_cast<T>(sum_gh_xh / c);
        for (int j = 0; j < c; ++j) {
          const T gh = out->grad.at(i, j) * gain->val.v[j];
          a->grad.at(i, j) += (*inv_std)[i] * (gh - m_gh - xhat->at(i, j) * m_gh_xh);
        }
      }
    };
    return out;
  }

  // Stable log-sum-exp per row, restricted to columns where col_mask is
  // nonzero (empty mask = all columns).
  Node* logsumexp_rows(Node* a, std::vector<uint8_t> col_mask = {}) {
    const int r = a->val.rows(), c = a->val.cols();
    if (!col_mask.empty() && static_cast<int>(col_mask.size()) != c)
      throw ShapeMismatch("logsumexp_rows: mask length");
    bool any = col_mask.empty();
    for (uint8_t m : col_mask) any = any || m;
    if (!any) throw NumericError("logsumexp over an empty column set");
    Node* out = make({r});
    auto mp = std::make_shared<std::vector<uint8_t>>(std::move(col_mask));
    for (int i = 0; i < r; ++i) {
      const T* x = &a->val.v[static_cast<size_t>(i) * c];
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < c; ++j)
        if (mp->empty() || (*mp)[j]) mx = std::max(mx, x[j]);
      double acc = 0.0;
      for (int j = 0; j < c; ++j)
        if (mp->empty() || (*mp)[j]) acc += std::exp(static_cast<double>(x[j]) - mx);
      out->val.v[i] = mx + static_cast<T>(std::log(acc));
    }
    out->back = [out, a, mp, r, c] {
      for (int i = 0; i < r; ++i) {
        const T g = out->grad.v[i];
        if (g == T(0)) continue;
        const T* x = &a->val.v[static_cast<size_t>(i) * c];
        const T lse = out->val.v[i];
        for (int j = 0; j < c; ++j)
          if (mp->empty() || (*mp)[j])
            a->grad.v[static_cast<size_t>(i) * c + j] +=
                g * static_cast<T>(std::exp(static_cast<double>(x[j]) - lse));
      }
    };
    return out;
  }

  // ---- driving the tape ----

  // Seeds the target and sweeps the tape once. Interior gradients are
  // consumed by the sweep and reset afterwards; leaf gradients accumulate, so
  // backward over several scalars adds up exactly.
  void backward(Node* out) {
    if (out->val.numel() != 1) throw ShapeMismatch("backward target must be scalar");
    out->grad.v[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->back) it->back();
    for (Node& n : nodes_)
      if (n.back) n.grad.fill(T(0));
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.fill(T(0));
  }

  // Accumulate node gradients into the bound parameters. Call once after all
  // backward passes on this graph are finished.
  void add_param_grads() {
    for (auto& [node, p] : bound_)
      for (int64_t i = 0; i < node->grad.numel(); ++i) p->grad.v[i] += node->grad.v[i];
  }

 private:
  static constexpr T kLogFloor = T(1e-12);
  static constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

  static std::pair<int, int> row_view(const TensorT<T>& t) {
    if (t.rank() == 1) return {1, t.shape[0]};
    if (t.rank() == 2) return {t.shape[0], t.shape[1]};
    throw ShapeMismatch("rank-1 or rank-2 expected, got " + t.shape_string());
  }

  Node* make(std::vector<int> shape) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.val = TensorT<T>(shape);
    n.grad = TensorT<T>(std::move(shape));
    return &n;
  }

  std::deque<Node> nodes_;
  std::vector<std::pair<Node*, ParamT<T>*>> bound_;
};

using Param = ParamT<float>;
using Node = NodeT<float>;
using Graph = GraphT<float>;

}  // namespace makevlp
