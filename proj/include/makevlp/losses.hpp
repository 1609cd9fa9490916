#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "makevlp/encoders.hpp"
#include "makevlp/graph.hpp"

namespace makevlp {

// Which parts of the objective are active. The four content flags realize
// the canonical ablation rows; the two literal_* flags switch to the exact
// printed form of the corresponding formulas for A/B comparison.
struct LossFlags {
  bool mkcl_knowledge = true;  // disease/concept slots participate
  bool mkcl_subtexts = true;   // subtext slots participate
  bool slra = true;            // fine-grained subtext alignment term
  bool dkw = true;             // diagnosis-guided per-subtext weights
  bool literal_eq3 = false;    // image-to-text denominator over images (ties it to t2i)
  bool literal_eq5 = false;    // similarity map normalized by raw-score sum, not softmax
};

// Per-sample, per-slot weights. Knowledge slots are fixed at 1, subtext
// slots carry the max-normalized disease similarity, masked slots are 0.
// Treated as constants: no gradient flows through the weighting.
struct DiagnosisWeights {
  Tensor w;  // {N, K_max+3}
};

template <typename T>
struct LossParamsT {
  ParamT<T>* log_tau = nullptr;  // temperature as a learnable log-scale parameter
  float lambda = 0.7f;
  LossFlags flags;
  // When set, skip the per-batch weight computation and use these instead
  // (gradient checks freeze the weights this way, matching the stop-gradient
  // semantics of the weighting).
  const DiagnosisWeights* fixed_weights = nullptr;
};

using LossParams = LossParamsT<float>;

template <typename T>
struct LossBreakdownNodesT {
  NodeT<T>* mkcl_i2t = nullptr;
  NodeT<T>* mkcl_t2i = nullptr;
  NodeT<T>* mkcl = nullptr;
  NodeT<T>* slra = nullptr;
  NodeT<T>* total = nullptr;
  bool has_subtexts = true;  // false: slra had nothing to align and is 0
  DiagnosisWeights weights;
};

using LossBreakdownNodes = LossBreakdownNodesT<float>;

// ---------------------------------------------------------------------------
// helpers

template <typename T>
inline NodeT<T>* cosine_similarity_matrix(GraphT<T>& g, NodeT<T>* a, NodeT<T>* b) {
  return g.matmul(a, g.transpose(b));
}

// Plain-value version for gradient-free paths.
inline Tensor cosine_similarity_values(const Tensor& a, const Tensor& b) {
  const int m = a.rows(), n = b.rows(), d = a.cols();
  if (b.cols() != d) throw ShapeMismatch("cosine_similarity: dim mismatch");
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += static_cast<double>(a.at(i, k)) * b.at(j, k);
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

namespace detail {

inline std::vector<std::vector<uint8_t>> effective_mask(
    const std::vector<std::vector<uint8_t>>& mask, const LossFlags& flags) {
  auto eff = mask;
  for (auto& row : eff) {
    if (!flags.mkcl_knowledge) row[kSlotDisease] = row[kSlotConcept] = 0;
    if (!flags.mkcl_subtexts)
      for (size_t j = kKnowledgeSlots; j < row.size(); ++j) row[j] = 0;
  }
  return eff;
}

struct PairList {
  std::vector<std::pair<int, int>> rows_cols;  // (text row index, image index)
  std::vector<float> weights;
  double weight_sum = 0.0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// diagnosis-guided weighting

inline constexpr float kWeightFloor = 1e-3f;

template <typename T>
inline DiagnosisWeights diagnosis_weights(const EmbeddingBatchNodesT<T>& batch) {
  const int n = batch.n, slots = batch.slots(), d = batch.dim;
  DiagnosisWeights out;
  out.w = Tensor::zeros({n, slots});
  const TensorT<T>& texts = batch.texts->val;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < kKnowledgeSlots; ++j)
      if (batch.mask[static_cast<size_t>(i)][static_cast<size_t>(j)]) out.w.at(i, j) = 1.0f;
    const bool have_disease = batch.mask[static_cast<size_t>(i)][kSlotDisease] != 0;
    float max_raw = 0.0f;
    std::vector<std::pair<int, float>> raws;
    for (int j = kKnowledgeSlots; j < slots; ++j) {
      if (!batch.mask[static_cast<size_t>(i)][static_cast<size_t>(j)]) continue;
      float raw = 1.0f;
      if (have_disease) {
        double acc = 0.0;
        const int dr = batch.text_row(i, kSlotDisease);
        const int sr = batch.text_row(i, j);
        for (int k = 0; k < d; ++k)
          acc += static_cast<double>(texts.at(dr, k)) * texts.at(sr, k);
        raw = std::max(static_cast<float>(acc), kWeightFloor);
      }
      raws.emplace_back(j, raw);
      max_raw = std::max(max_raw, raw);
    }
    for (auto& [j, raw] : raws) out.w.at(i, j) = raw / max_raw;
  }
  return out;
}

template <typename T>
inline DiagnosisWeights unit_weights(const EmbeddingBatchNodesT<T>& batch) {
  DiagnosisWeights out;
  out.w = Tensor::zeros({batch.n, batch.slots()});
  for (int i = 0; i < batch.n; ++i)
    for (int j = 0; j < batch.slots(); ++j)
      if (batch.mask[static_cast<size_t>(i)][static_cast<size_t>(j)]) out.w.at(i, j) = 1.0f;
  return out;
}

// ---------------------------------------------------------------------------
// contrastive losses

namespace detail {

template <typename T>
inline PairList collect_pairs(const EmbeddingBatchNodesT<T>& batch,
                              const std::vector<std::vector<uint8_t>>& mask,
                              const DiagnosisWeights& w, int first_slot) {
  PairList pl;
  for (int i = 0; i < batch.n; ++i)
    for (int j = first_slot; j < batch.slots(); ++j)
      if (mask[static_cast<size_t>(i)][static_cast<size_t>(j)]) {
        pl.rows_cols.emplace_back(batch.text_row(i, j), i);
        const float wij = w.w.at(i, j);
        pl.weights.push_back(wij);
        pl.weight_sum += wij;
      }
  return pl;
}

template <typename T>
inline NodeT<T>* weighted_mean(GraphT<T>& g, NodeT<T>* terms, const PairList& pl) {
  TensorT<T> wv({static_cast<int>(pl.weights.size())});
  for (size_t i = 0; i < pl.weights.size(); ++i) wv.v[i] = static_cast<T>(pl.weights[i]);
  return g.scale(g.sum(g.mul_const(terms, std::move(wv))), static_cast<T>(1.0 / pl.weight_sum));
}

// -log softmax terms for (text row, image) pairs where the partition runs
// over the image axis of `sim_text_by_image` ({M, N}).
template <typename T>
inline NodeT<T>* text_partition_loss(GraphT<T>& g, NodeT<T>* sim_text_by_image,
                                     const PairList& pl) {
  NodeT<T>* lse = g.logsumexp_rows(sim_text_by_image);
  std::vector<int> rows;
  for (auto& [r, i] : pl.rows_cols) rows.push_back(r);
  NodeT<T>* terms =
      g.sub(g.gather_vec(lse, rows), g.gather_entries(sim_text_by_image, pl.rows_cols));
  return weighted_mean(g, terms, pl);
}

}  // namespace detail

// Image-to-text half: for each valid pair, the softmax runs over every valid
// text embedding in the batch for that image. The literal_eq3 variant keeps
// the printed denominator (over images), which makes it coincide with t2i.
template <typename T>
inline NodeT<T>* mkcl_i2t(GraphT<T>& g, const EmbeddingBatchNodesT<T>& batch,
                          const DiagnosisWeights& w, NodeT<T>* inv_tau,
                          const LossFlags& flags = {}) {
  auto eff = detail::effective_mask(batch.mask, flags);
  auto pl = detail::collect_pairs(batch, eff, w, 0);
  if (pl.rows_cols.empty()) throw NoValidPairs();

  NodeT<T>* sims = g.mul_scalar(cosine_similarity_matrix(g, batch.texts, batch.visual), inv_tau);
  if (flags.literal_eq3) return detail::text_partition_loss(g, sims, pl);

  std::vector<uint8_t> col_mask(static_cast<size_t>(batch.n) * batch.slots(), 0);
  for (int i = 0; i < batch.n; ++i)
    for (int j = 0; j < batch.slots(); ++j)
      col_mask[static_cast<size_t>(batch.text_row(i, j))] =
          eff[static_cast<size_t>(i)][static_cast<size_t>(j)];

  NodeT<T>* sims_by_text = g.transpose(sims);  // {N, M}
  NodeT<T>* lse = g.logsumexp_rows(sims_by_text, col_mask);
  std::vector<int> images;
  std::vector<std::pair<int, int>> entries;
  for (auto& [r, i] : pl.rows_cols) {
    images.push_back(i);
    entries.emplace_back(i, r);
  }
  NodeT<T>* terms = g.sub(g.gather_vec(lse, images), g.gather_entries(sims_by_text, entries));
  return detail::weighted_mean(g, terms, pl);
}

// Text-to-image half: softmax over the N images, exactly as printed.
template <typename T>
inline NodeT<T>* mkcl_t2i(GraphT<T>& g, const EmbeddingBatchNodesT<T>& batch,
                          const DiagnosisWeights& w, NodeT<T>* inv_tau,
                          const LossFlags& flags = {}) {
  auto eff = detail::effective_mask(batch.mask, flags);
  auto pl = detail::collect_pairs(batch, eff, w, 0);
  if (pl.rows_cols.empty()) throw NoValidPairs();
  NodeT<T>* sims = g.mul_scalar(cosine_similarity_matrix(g, batch.texts, batch.visual), inv_tau);
  return detail::text_partition_loss(g, sims, pl);
}

template <typename T>
inline NodeT<T>* mkcl_total(GraphT<T>& g, const EmbeddingBatchNodesT<T>& batch,
                            const DiagnosisWeights& w, NodeT<T>* inv_tau,
                            const LossFlags& flags = {}) {
  return g.scale(
      g.add(mkcl_i2t(g, batch, w, inv_tau, flags), mkcl_t2i(g, batch, w, inv_tau, flags)),
      T(0.5));
}

// ---------------------------------------------------------------------------
// fine-grained alignment

// Per-patch relevance of the raw caption. Softmax by default; the literal
// variant returns the raw dot products and leaves normalization to the
// weighted pooling step.
template <typename T>
inline NodeT<T>* similarity_map(GraphT<T>& g, NodeT<T>* raw_text_emb, NodeT<T>* patches,
                                bool literal = false) {
  NodeT<T>* scores = g.matvec(patches, raw_text_emb);
  return literal ? scores : g.softmax_rows(scores);
}

// Pools patches by the (sum-normalized) map and L2-normalizes the result so
// it can enter cosine similarities.
template <typename T>
inline NodeT<T>* knowledge_enhanced_embedding(GraphT<T>& g, NodeT<T>* patches, NodeT<T>* z) {
  double zsum = 0.0;
  for (T x : z->val.v) zsum += x;
  if (zsum <= 0.0) throw DegenerateMap();
  NodeT<T>* znorm = g.mul_scalar(z, g.reciprocal(g.sum(z)));
  return g.l2norm_rows(g.vecmat(znorm, patches));
}

// Aligns each subtext with the knowledge-enhanced visual embeddings; the
// softmax partition runs over the N samples' enhanced embeddings.
template <typename T>
inline NodeT<T>* slra_loss(GraphT<T>& g, const EmbeddingBatchNodesT<T>& batch,
                           const DiagnosisWeights& w, NodeT<T>* inv_tau,
                           bool* has_subtexts_out = nullptr, const LossFlags& flags = {}) {
  auto eff = detail::effective_mask(batch.mask, flags);
  auto pl = detail::collect_pairs(batch, eff, w, kKnowledgeSlots);
  if (has_subtexts_out) *has_subtexts_out = !pl.rows_cols.empty();
  if (pl.rows_cols.empty()) return g.input(TensorT<T>::scalar(T(0)));

  std::vector<NodeT<T>*> enhanced;
  for (int i = 0; i < batch.n; ++i) {
    NodeT<T>* raw_emb = g.take_row(batch.texts, batch.text_row(i, kSlotRaw));
    NodeT<T>* z =
        similarity_map(g, raw_emb, batch.patches[static_cast<size_t>(i)], flags.literal_eq5);
    enhanced.push_back(knowledge_enhanced_embedding(g, batch.patches[static_cast<size_t>(i)], z));
  }
  NodeT<T>* ek = g.stack_rows(enhanced);  // {N, d}
  NodeT<T>* sims = g.mul_scalar(cosine_similarity_matrix(g, batch.texts, ek), inv_tau);
  return detail::text_partition_loss(g, sims, pl);
}

// ---------------------------------------------------------------------------
// combined objective

template <typename T>
inline LossBreakdownNodesT<T> total_loss(GraphT<T>& g, const EmbeddingBatchNodesT<T>& batch,
                                         const LossParamsT<T>& params) {
  if (!params.log_tau) throw InvalidConfig("total_loss: log_tau parameter missing");
  const LossFlags& flags = params.flags;

  LossBreakdownNodesT<T> out;
  if (params.fixed_weights)
    out.weights = *params.fixed_weights;
  else
    out.weights = flags.dkw ? diagnosis_weights(batch) : unit_weights(batch);

  NodeT<T>* tau = g.clamp_exp(g.param(*params.log_tau), T(kTauMin), T(kTauMax));
  NodeT<T>* inv_tau = g.reciprocal(tau);

  out.mkcl_i2t = mkcl_i2t(g, batch, out.weights, inv_tau, flags);
  out.mkcl_t2i = mkcl_t2i(g, batch, out.weights, inv_tau, flags);
  out.mkcl = g.scale(g.add(out.mkcl_i2t, out.mkcl_t2i), T(0.5));

  if (flags.slra) {
    out.slra = slra_loss(g, batch, out.weights, inv_tau, &out.has_subtexts, flags);
  } else {
    out.slra = g.input(TensorT<T>::scalar(T(0)));
    out.has_subtexts = false;
  }
  out.total = g.add(out.mkcl, g.scale(out.slra, T(params.lambda)));
  return out;
}

}  // namespace makevlp
