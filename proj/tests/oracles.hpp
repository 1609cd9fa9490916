#pragma once

// Independent naive reference implementations used as test oracles. These
// follow the loss definitions literally with triple loops in double
// precision and never touch the graph engine.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "makevlp/diagnostics.hpp"
#include "makevlp/tensor.hpp"

namespace oracle {

using makevlp::kKnowledgeSlots;
using makevlp::RandomBatchData;
using makevlp::Tensor;

inline double dotd(const float* a, const float* b, int d) {
  double acc = 0.0;
  for (int k = 0; k < d; ++k) acc += static_cast<double>(a[k]) * b[k];
  return acc;
}

inline const float* text_row(const RandomBatchData& b, int i, int j) {
  return &b.texts.v[static_cast<size_t>(i * (b.k_max + kKnowledgeSlots) + j) * b.dim];
}

inline const float* visual_row(const RandomBatchData& b, int i) {
  return &b.visual.v[static_cast<size_t>(i) * b.dim];
}

inline Tensor diagnosis_weights_naive(const RandomBatchData& b) {
  const int slots = b.k_max + kKnowledgeSlots;
  Tensor w = Tensor::zeros({b.n, slots});
  for (int i = 0; i < b.n; ++i) {
    for (int j = 0; j < kKnowledgeSlots; ++j)
      if (b.mask[i][j]) w.at(i, j) = 1.0f;
    std::vector<std::pair<int, double>> raws;
    double max_raw = 0.0;
    for (int j = kKnowledgeSlots; j < slots; ++j) {
      if (!b.mask[i][j]) continue;
      double raw = dotd(text_row(b, i, makevlp::kSlotDisease), text_row(b, i, j), b.dim);
      raw = std::max(raw, 1e-3);
      raws.emplace_back(j, raw);
      max_raw = std::max(max_raw, raw);
    }
    for (auto& [j, raw] : raws) w.at(i, j) = static_cast<float>(raw / max_raw);
  }
  return w;
}

inline Tensor unit_weights_naive(const RandomBatchData& b) {
  const int slots = b.k_max + kKnowledgeSlots;
  Tensor w = Tensor::zeros({b.n, slots});
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < slots; ++j)
      if (b.mask[i][j]) w.at(i, j) = 1.0f;
  return w;
}

struct NaiveFlags {
  bool knowledge = true;
  bool subtexts = true;
  bool literal_eq3 = false;
  bool literal_eq5 = false;
};

inline bool slot_valid(const RandomBatchData& b, const NaiveFlags& f, int i, int j) {
  if (!b.mask[i][j]) return false;
  if (!f.knowledge && (j == makevlp::kSlotDisease || j == makevlp::kSlotConcept)) return false;
  if (!f.subtexts && j >= kKnowledgeSlots) return false;
  return true;
}

inline double mkcl_i2t_naive(const RandomBatchData& b, const Tensor& w, double tau,
                             const NaiveFlags& f = {}) {
  const int slots = b.k_max + kKnowledgeSlots;
  double acc = 0.0, wsum = 0.0;
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < slots; ++j) {
      if (!slot_valid(b, f, i, j)) continue;
      double denom = 0.0;
      if (f.literal_eq3) {
        for (int n = 0; n < b.n; ++n)
          denom += std::exp(dotd(visual_row(b, n), text_row(b, i, j), b.dim) / tau);
      } else {
        for (int n = 0; n < b.n; ++n)
          for (int m = 0; m < slots; ++m)
            if (slot_valid(b, f, n, m))
              denom += std::exp(dotd(visual_row(b, i), text_row(b, n, m), b.dim) / tau);
      }
      const double num = std::exp(dotd(visual_row(b, i), text_row(b, i, j), b.dim) / tau);
      acc += w.at(i, j) * -std::log(num / denom);
      wsum += w.at(i, j);
    }
  return acc / wsum;
}

inline double mkcl_t2i_naive(const RandomBatchData& b, const Tensor& w, double tau,
                             const NaiveFlags& f = {}) {
  const int slots = b.k_max + kKnowledgeSlots;
  double acc = 0.0, wsum = 0.0;
  for (int i = 0; i < b.n; ++i)
    for (int j = 0; j < slots; ++j) {
      if (!slot_valid(b, f, i, j)) continue;
      double denom = 0.0;
      for (int n = 0; n < b.n; ++n)
        denom += std::exp(dotd(text_row(b, i, j), visual_row(b, n), b.dim) / tau);
      const double num = std::exp(dotd(text_row(b, i, j), visual_row(b, i), b.dim) / tau);
      acc += w.at(i, j) * -std::log(num / denom);
      wsum += w.at(i, j);
    }
  return acc / wsum;
}

// Knowledge-enhanced embeddings, one per sample, in double precision.
inline std::vector<std::vector<double>> enhanced_embeddings_naive(const RandomBatchData& b,
                                                                  bool literal_eq5 = false) {
  std::vector<std::vector<double>> out;
  for (int i = 0; i < b.n; ++i) {
    const Tensor& patches = b.patches[static_cast<size_t>(i)];
    std::vector<double> scores(static_cast<size_t>(b.hw));
    for (int nn = 0; nn < b.hw; ++nn)
      scores[nn] = dotd(text_row(b, i, makevlp::kSlotRaw),
                        &patches.v[static_cast<size_t>(nn) * b.dim], b.dim);
    std::vector<double> z(static_cast<size_t>(b.hw));
    if (literal_eq5) {
      z = scores;
    } else {
      const double mx = *std::max_element(scores.begin(), scores.end());
      double denom = 0.0;
      for (int nn = 0; nn < b.hw; ++nn) denom += std::exp(scores[nn] - mx);
      for (int nn = 0; nn < b.hw; ++nn) z[nn] = std::exp(scores[nn] - mx) / denom;
    }
    const double zsum = std::accumulate(z.begin(), z.end(), 0.0);
    std::vector<double> ek(static_cast<size_t>(b.dim), 0.0);
    for (int nn = 0; nn < b.hw; ++nn)
      for (int k = 0; k < b.dim; ++k)
        ek[k] += patches.v[static_cast<size_t>(nn) * b.dim + k] * (z[nn] / zsum);
    double sq = 0.0;
    for (double x : ek) sq += x * x;
    const double nrm = std::max(std::sqrt(sq), 1e-12);
    for (double& x : ek) x /= nrm;
    out.push_back(std::move(ek));
  }
  return out;
}

inline double slra_naive(const RandomBatchData& b, const Tensor& w, double tau,
                         const NaiveFlags& f = {}) {
  const int slots = b.k_max + kKnowledgeSlots;
  const auto ek = enhanced_embeddings_naive(b, f.literal_eq5);
  auto dot_ek = [&](int i, int j, int n) {
    double acc = 0.0;
    const float* s = text_row(b, i, j);
    for (int k = 0; k < b.dim; ++k) acc += static_cast<double>(s[k]) * ek[n][k];
    return acc;
  };
  double acc = 0.0, wsum = 0.0;
  for (int i = 0; i < b.n; ++i)
    for (int j = kKnowledgeSlots; j < slots; ++j) {
      if (!slot_valid(b, f, i, j)) continue;
      double denom = 0.0;
      for (int n = 0; n < b.n; ++n) denom += std::exp(dot_ek(i, j, n) / tau);
      acc += w.at(i, j) * -std::log(std::exp(dot_ek(i, j, i) / tau) / denom);
      wsum += w.at(i, j);
    }
  if (wsum == 0.0) return 0.0;
  return acc / wsum;
}

struct NaiveBreakdown {
  double mkcl_i2t, mkcl_t2i, mkcl, slra, total;
};

inline NaiveBreakdown total_naive(const RandomBatchData& b, double tau, double lambda, bool dkw,
                                  bool slra_on, const NaiveFlags& f = {}) {
  const Tensor w = dkw ? diagnosis_weights_naive(b) : unit_weights_naive(b);
  NaiveBreakdown out{};
  out.mkcl_i2t = mkcl_i2t_naive(b, w, tau, f);
  out.mkcl_t2i = mkcl_t2i_naive(b, w, tau, f);
  out.mkcl = 0.5 * (out.mkcl_i2t + out.mkcl_t2i);
  out.slra = slra_on ? slra_naive(b, w, tau, f) : 0.0;
  out.total = out.mkcl + lambda * out.slra;
  return out;
}

// Standard symmetric InfoNCE over matched (image, text) pairs.
inline double clip_infonce_naive(const Tensor& visual, const Tensor& texts, double tau) {
  const int n = visual.rows(), d = visual.cols();
  double i2t = 0.0, t2i = 0.0;
  for (int i = 0; i < n; ++i) {
    double d1 = 0.0, d2 = 0.0;
    for (int j = 0; j < n; ++j) {
      d1 += std::exp(dotd(&visual.v[static_cast<size_t>(i) * d], &texts.v[static_cast<size_t>(j) * d], d) / tau);
      d2 += std::exp(dotd(&texts.v[static_cast<size_t>(i) * d], &visual.v[static_cast<size_t>(j) * d], d) / tau);
    }
    const double s_ii =
        dotd(&visual.v[static_cast<size_t>(i) * d], &texts.v[static_cast<size_t>(i) * d], d);
    i2t += -std::log(std::exp(s_ii / tau) / d1);
    t2i += -std::log(std::exp(s_ii / tau) / d2);
  }
  return 0.5 * (i2t / n + t2i / n);
}

// ---------------------------------------------------------------------------
// metric oracles

inline double auroc_bruteforce(const std::vector<double>& scores,
                               const std::vector<uint8_t>& labels) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t p = 0; p < scores.size(); ++p) {
    if (!labels[p]) continue;
    for (size_t q = 0; q < scores.size(); ++q) {
      if (labels[q]) continue;
      ++pairs;
      if (scores[p] > scores[q])
        wins += 1.0;
      else if (scores[p] == scores[q])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// R@K by explicit per-query sort with (score desc, index asc) ordering.
inline std::vector<double> recall_at_k_naive(const Tensor& queries, const Tensor& candidates,
                                             const std::vector<int>& ks) {
  const int n = queries.rows(), d = queries.cols();
  std::vector<int> rank(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> scored;
    for (int j = 0; j < n; ++j)
      scored.emplace_back(
          dotd(&queries.v[static_cast<size_t>(i) * d], &candidates.v[static_cast<size_t>(j) * d], d),
          j);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int pos = 0; pos < n; ++pos)
      if (scored[static_cast<size_t>(pos)].second == i) {
        rank[static_cast<size_t>(i)] = pos + 1;
        break;
      }
  }
  std::vector<double> out;
  for (int k : ks) {
    int hit = 0;
    for (int i = 0; i < n; ++i)
      if (rank[static_cast<size_t>(i)] <= k) ++hit;
    out.push_back(static_cast<double>(hit) / n);
  }
  return out;
}

}  // namespace oracle
