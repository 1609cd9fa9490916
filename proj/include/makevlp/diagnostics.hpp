#pragma once

#include <memory>
#include <vector>

#include "makevlp/encoders.hpp"
#include "makevlp/gradcheck.hpp"
#include "makevlp/losses.hpp"

namespace makevlp {

// Synthetic embedding batches for loss-level tests and gradient checks.

struct RandomBatchSpec {
  int n = 4;
  int k_max = 2;
  int dim = 8;
  int hw = 4;
  uint64_t seed = 0;
  // probability that each subtext slot is valid; knowledge slots always are
  double subtext_density = 0.7;
};

struct RandomBatchData {
  Tensor visual;                // {N, d}, unit rows
  std::vector<Tensor> patches;  // per sample {HW, d}, unnormalized
  Tensor texts;                 // {N*(K+3), d}, unit rows where valid, zero otherwise
  std::vector<std::vector<uint8_t>> mask;
  int n = 0, k_max = 0, dim = 0, hw = 0;
};

namespace detail {

inline void fill_unit_row(float* row, int d, Rng& rng) {
  double sq = 0.0;
  for (int k = 0; k < d; ++k) {
    row[k] = rng.next_symmetric(1.0f);
    sq += static_cast<double>(row[k]) * row[k];
  }
  const float nrm = std::max(static_cast<float>(std::sqrt(sq)), 1e-6f);
  for (int k = 0; k < d; ++k) row[k] /= nrm;
}

}  // namespace detail

inline RandomBatchData random_batch(const RandomBatchSpec& spec) {
  Rng rng(spec.seed ^ 0x6261746368ULL);
  RandomBatchData b;
  b.n = spec.n;
  b.k_max = spec.k_max;
  b.dim = spec.dim;
  b.hw = spec.hw;
  const int slots = spec.k_max + kKnowledgeSlots;

  b.visual = Tensor::zeros({spec.n, spec.dim});
  for (int i = 0; i < spec.n; ++i)
    detail::fill_unit_row(&b.visual.v[static_cast<size_t>(i) * spec.dim], spec.dim, rng);

  for (int i = 0; i < spec.n; ++i) {
    Tensor p({spec.hw, spec.dim});
    for (float& x : p.v) x = rng.next_symmetric(1.0f);
    b.patches.push_back(std::move(p));
  }

  b.mask.assign(static_cast<size_t>(spec.n), std::vector<uint8_t>(static_cast<size_t>(slots), 0));
  b.texts = Tensor::zeros({spec.n * slots, spec.dim});
  for (int i = 0; i < spec.n; ++i) {
    int k_here = 0;
    for (int j = 0; j < slots; ++j) {
      bool valid = j < kKnowledgeSlots;
      if (!valid && j == kKnowledgeSlots + k_here && rng.next_double() < spec.subtext_density) {
        valid = true;
        ++k_here;  // subtext validity stays a prefix
      }
      if (!valid) continue;
      b.mask[static_cast<size_t>(i)][static_cast<size_t>(j)] = 1;
      detail::fill_unit_row(&b.texts.v[static_cast<size_t>(i * slots + j) * spec.dim], spec.dim,
                            rng);
    }
  }
  return b;
}

template <typename T = float>
inline EmbeddingBatchNodesT<T> batch_to_nodes(GraphT<T>& g, const RandomBatchData& data) {
  EmbeddingBatchNodesT<T> batch;
  batch.n = data.n;
  batch.k_max = data.k_max;
  batch.dim = data.dim;
  batch.hw = data.hw;
  batch.mask = data.mask;
  batch.visual = g.input(TensorT<T>::from(data.visual));
  for (const auto& p : data.patches) batch.patches.push_back(g.input(TensorT<T>::from(p)));
  batch.texts = g.input(TensorT<T>::from(data.texts));
  return batch;
}

// ---------------------------------------------------------------------------
// loss-level gradient check: raw parameter tensors are normalized inside the
// graph, so the check covers the normalizations as well as the loss stack.
// Runs the double instantiation of the engine; in float storage the finite
// differences of small-gradient coordinates sit below the rounding floor.

struct LossGradCheckSetup {
  RandomBatchData data;
  ParamT<double> p_visual, p_texts, p_log_tau;
  std::vector<ParamT<double>> p_patches;
  LossFlags flags;
  float lambda = 0.7f;
  // The weighting is gradient-stopped, so the check evaluates the loss at
  // weights frozen from the unperturbed batch; finite differences and the
  // reverse pass then measure the same function.
  DiagnosisWeights frozen_weights;

  std::vector<ParamT<double>*> params() {
    std::vector<ParamT<double>*> out = {&p_visual, &p_texts, &p_log_tau};
    for (auto& p : p_patches) out.push_back(&p);
    return out;
  }

  NodeT<double>* build(GraphT<double>& g) {
    EmbeddingBatchNodesT<double> batch;
    batch.n = data.n;
    batch.k_max = data.k_max;
    batch.dim = data.dim;
    batch.hw = data.hw;
    batch.mask = data.mask;
    batch.visual = g.l2norm_rows(g.param(p_visual));
    for (auto& p : p_patches) batch.patches.push_back(g.param(p));
    // zero rows stay zero through the guarded normalization
    batch.texts = g.l2norm_rows(g.param(p_texts));
    LossParamsT<double> lp;
    lp.log_tau = &p_log_tau;
    lp.lambda = lambda;
    lp.flags = flags;
    lp.fixed_weights = &frozen_weights;
    return total_loss(g, batch, lp).total;
  }
};

inline std::unique_ptr<LossGradCheckSetup> make_loss_gradcheck(const RandomBatchSpec& spec,
                                                               const LossFlags& flags = {},
                                                               float lambda = 0.7f) {
  auto setup = std::make_unique<LossGradCheckSetup>();
  setup->data = random_batch(spec);
  setup->flags = flags;
  setup->lambda = lambda;
  setup->p_visual = ParamT<double>("visual", TensorT<double>::from(setup->data.visual));
  setup->p_texts = ParamT<double>("texts", TensorT<double>::from(setup->data.texts));
  // tau = 0.5 keeps the softmax curvature low enough that eps=1e-3 central
  // differences stay well inside the 1e-3 relative band
  setup->p_log_tau = ParamT<double>("log_tau", TensorT<double>::scalar(std::log(0.5)));
  for (size_t i = 0; i < setup->data.patches.size(); ++i)
    setup->p_patches.emplace_back("patches" + std::to_string(i),
                                  TensorT<double>::from(setup->data.patches[i]));
  {
    GraphT<double> g;
    auto batch = batch_to_nodes<double>(g, setup->data);
    setup->frozen_weights = flags.dkw ? diagnosis_weights(batch) : unit_weights(batch);
  }
  return setup;
}

inline GradCheckReport loss_grad_check(const RandomBatchSpec& spec, double eps, double tol,
                                       const LossFlags& flags = {}, float lambda = 0.7f) {
  auto setup = make_loss_gradcheck(spec, flags, lambda);
  auto* raw = setup.get();
  return grad_check<double>([raw](GraphT<double>& g) { return raw->build(g); }, setup->params(),
                            eps, tol, spec.seed);
}

// End-to-end check through both encoders at tiny shapes, on the double
// instantiation of the whole stack.
inline GradCheckReport encoder_grad_check(double eps, double tol, uint64_t seed) {
  VisionEncoderConfig vcfg{16, 8, 8, 1, 2};
  TextEncoderConfig tcfg{64, 8, 8, 1, 2};
  auto model = std::make_unique<ModelT<double>>(vcfg, tcfg, seed);

  Rng rng(seed ^ 0x653265ULL);
  EnhancedBatch batch;
  batch.k_max = 1;
  for (int i = 0; i < 2; ++i) {
    Tensor img({16, 16, 3});
    for (float& x : img.v) x = rng.next_float();
    batch.images.push_back(std::move(img));
    batch.texts.push_back({"red plaque on arm", "diagnosis: melanoma", "concepts: plaque",
                           i == 0 ? "itchy at night" : ""});
    batch.mask.push_back({1, 1, 1, static_cast<uint8_t>(i == 0 ? 1 : 0)});
  }

  // dkw off: through the encoders the weights cannot be frozen independently
  // of the parameters, so the end-to-end check runs with unit weights.
  ModelT<double>* m = model.get();
  auto fn = [m, batch](GraphT<double>& g) {
    auto nodes = encode_batch(g, *m, batch);
    LossParamsT<double> lp;
    lp.log_tau = &m->log_tau();
    lp.lambda = 0.7f;
    lp.flags.dkw = false;
    return total_loss(g, nodes, lp).total;
  };
  return grad_check<double>(fn, m->store().all(), eps, tol, seed);
}

}  // namespace makevlp
