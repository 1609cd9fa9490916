#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "makevlp/graph.hpp"
#include "makevlp/rng.hpp"

namespace makevlp {

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    int coords_checked = 0;
  };
  std::vector<Entry> entries;
  double eps = 0.0;
  double tol = 0.0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Builds the computation off the current parameter values and returns the
// scalar output node. Must be deterministic.
template <typename T>
using ScalarFnT = std::function<NodeT<T>*(GraphT<T>&)>;

namespace detail {

template <typename T>
inline double eval_scalar(const ScalarFnT<T>& fn) {
  GraphT<T> g;
  NodeT<T>* out = fn(g);
  if (out->val.numel() != 1) throw ShapeMismatch("grad_check: scalar function expected");
  return static_cast<double>(out->val.v[0]);
}

inline std::vector<int64_t> sample_coords(int64_t n, int64_t want, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  if (n <= want) return idx;
  for (int64_t i = 0; i < want; ++i) {
    int64_t j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(want));
  return idx;
}

}  // namespace detail

// Compares reverse-mode gradients against central finite differences on a
// sample of coordinates (at least 32 per tensor, or all when smaller). The
// double instantiation is the meaningful one: float storage noise swamps
// finite differences of coordinates with small gradients.
template <typename T>
inline GradCheckReport grad_check(const ScalarFnT<T>& fn,
                                  const std::vector<ParamT<T>*>& params, double eps, double tol,
                                  uint64_t seed = 0) {
  if (eps <= 0.0) throw InvalidConfig("grad_check eps must be > 0");

  for (ParamT<T>* p : params) p->zero_grad();
  {
    GraphT<T> g;
    NodeT<T>* out = fn(g);
    if (out->val.numel() != 1) throw ShapeMismatch("grad_check: scalar function expected");
    g.backward(out);
    g.add_param_grads();
  }

  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;
  Rng rng(seed ^ 0x67726164636865ULL);

  for (ParamT<T>* p : params) {
    typename GradCheckReport::Entry entry;
    entry.name = p->name;
    auto coords = detail::sample_coords(p->value.numel(), 32, rng);
    for (int64_t i : coords) {
      const T saved = p->value.v[static_cast<size_t>(i)];
      const T hi = saved + static_cast<T>(eps);
      const T lo = saved - static_cast<T>(eps);
      p->value.v[static_cast<size_t>(i)] = hi;
      const double f_hi = detail::eval_scalar<T>(fn);
      p->value.v[static_cast<size_t>(i)] = lo;
      const double f_lo = detail::eval_scalar<T>(fn);
      p->value.v[static_cast<size_t>(i)] = saved;
      const double h = static_cast<double>(hi) - static_cast<double>(lo);
      const double numeric = (f_hi - f_lo) / h;
      const double analytic = static_cast<double>(p->grad.v[static_cast<size_t>(i)]);
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

using ScalarFn = ScalarFnT<float>;

}  // namespace makevlp
