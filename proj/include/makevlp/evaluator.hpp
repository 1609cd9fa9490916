#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "makevlp/corpus.hpp"
#include "makevlp/encoders.hpp"
#include "makevlp/losses.hpp"
#include "makevlp/trainer.hpp"

namespace makevlp {

// ---------------------------------------------------------------------------
// prompts

struct PromptSet {
  std::vector<std::string> default_templates = {"a photo of {}", "a skin image of {}",
                                                "dermatology image showing {}"};
  std::map<std::string, std::vector<std::string>> overrides;

  const std::vector<std::string>& templates_for(const std::string& name) const {
    auto it = overrides.find(name);
    const auto& t = it == overrides.end() ? default_templates : it->second;
    if (t.empty()) throw EmptyPromptSet();
    return t;
  }

  static std::string fill(const std::string& tmpl, const std::string& name) {
    const size_t pos = tmpl.find("{}");
    if (pos == std::string::npos) return tmpl + " " + name;
    return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
  }
};

// Encodes every filled template, averages the unit vectors per name and
// re-normalizes. Returns one row per name.
inline Tensor class_text_embeddings(const Model& model, const PromptSet& prompts,
                                    const std::vector<std::string>& names) {
  const int d = model.dim();
  Tensor out({static_cast<int>(names.size()), d});
  for (size_t c = 0; c < names.size(); ++c) {
    const auto& templates = prompts.templates_for(names[c]);
    std::vector<double> acc(static_cast<size_t>(d), 0.0);
    for (const auto& t : templates) {
      const auto emb = encode_text_values(
          model, model.text().tokenize_text(PromptSet::fill(t, names[c])));
      for (int k = 0; k < d; ++k) acc[static_cast<size_t>(k)] += emb.vector.v[static_cast<size_t>(k)];
    }
    double sq = 0.0;
    for (double x : acc) sq += x * x;
    const double nrm = std::max(std::sqrt(sq), 1e-12);
    for (int k = 0; k < d; ++k)
      out.at(static_cast<int>(c), k) = static_cast<float>(acc[static_cast<size_t>(k)] / nrm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding extraction over manifests

inline Tensor embed_images(const Model& model, const CorpusManifest& m, const ImageStore& images) {
  const int d = model.dim();
  Tensor out({static_cast<int>(m.records.size()), d});
  for (size_t i = 0; i < m.records.size(); ++i) {
    const auto emb = encode_image_values(model, images.load(m.records[i].base.image_ref));
    for (int k = 0; k < d; ++k) out.at(static_cast<int>(i), k) = emb.pooled.v[static_cast<size_t>(k)];
  }
  return out;
}

inline Tensor embed_raw_texts(const Model& model, const CorpusManifest& m) {
  const int d = model.dim();
  Tensor out({static_cast<int>(m.records.size()), d});
  for (size_t i = 0; i < m.records.size(); ++i) {
    const auto emb =
        encode_text_values(model, model.text().tokenize_text(m.records[i].base.raw_text));
    for (int k = 0; k < d; ++k) out.at(static_cast<int>(i), k) = emb.vector.v[static_cast<size_t>(k)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// zero-shot classification

struct ClassifyResult {
  std::vector<int> predictions;
  std::vector<int> labels;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
};

// Argmax over cosine similarity; ties resolve to the lowest class index.
inline ClassifyResult zero_shot_classify(const Tensor& image_embs, const Tensor& class_embs,
                                         const std::vector<int>& labels) {
  if (image_embs.cols() != class_embs.cols())
    throw ShapeMismatch("image/class embedding dim mismatch");
  if (static_cast<int>(labels.size()) != image_embs.rows())
    throw ShapeMismatch("label count mismatch");
  const Tensor sims = cosine_similarity_values(image_embs, class_embs);
  ClassifyResult r;
  r.labels = labels;
  const int n_classes = class_embs.rows();
  std::vector<int> correct(static_cast<size_t>(n_classes), 0), total(static_cast<size_t>(n_classes), 0);
  int n_correct = 0;
  for (int i = 0; i < image_embs.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
      if (sims.at(i, c) > sims.at(i, best)) best = c;
    r.predictions.push_back(best);
    const int y = labels[static_cast<size_t>(i)];
    if (y >= 0 && y < n_classes) {
      ++total[static_cast<size_t>(y)];
      if (best == y) ++correct[static_cast<size_t>(y)], ++n_correct;
    }
  }
  r.accuracy = image_embs.rows() ? static_cast<double>(n_correct) / image_embs.rows() : 0.0;
  for (int c = 0; c < n_classes; ++c)
    r.per_class_accuracy.push_back(
        total[static_cast<size_t>(c)]
            ? static_cast<double>(correct[static_cast<size_t>(c)]) / total[static_cast<size_t>(c)]
            : 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// concept annotation AUROC

// Rank-based AUROC with the average-rank tie convention, which equals
// (#{s_p > s_n} + 0.5 #{s_p = s_n}) / (#pos * #neg).
inline double auroc_rank(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  const size_t n = scores.size();
  if (labels.size() != n) throw ShapeMismatch("auroc: scores/labels length mismatch");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  int64_t n_pos = 0;
  double rank_sum = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) {
      ++n_pos;
      rank_sum += rank[k];
    }
  const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw NumericError("auroc needs both label classes");
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct ConceptAurocResult {
  std::vector<std::string> concepts;
  std::vector<double> per_concept;   // valid where scored
  std::vector<uint8_t> scored;       // concepts lacking a pos or neg are skipped
  double macro = 0.0;
};

inline ConceptAurocResult concept_auroc(const std::vector<std::string>& concepts,
                                        const std::vector<std::vector<double>>& scores,
                                        const std::vector<std::vector<uint8_t>>& labels) {
  ConceptAurocResult r;
  r.concepts = concepts;
  double sum = 0.0;
  int n_scored = 0;
  for (size_t c = 0; c < concepts.size(); ++c) {
    int n_pos = 0, n_neg = 0;
    for (uint8_t y : labels[c]) (y ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) {
      r.per_concept.push_back(0.0);
      r.scored.push_back(0);
      continue;
    }
    const double a = auroc_rank(scores[c], labels[c]);
    r.per_concept.push_back(a);
    r.scored.push_back(1);
    sum += a;
    ++n_scored;
  }
  if (n_scored == 0) throw NoScorableConcepts();
  r.macro = sum / n_scored;
  return r;
}

// Scores every eval image against every concept prompt embedding and rates
// the ranking against the per-record concept labels.
inline ConceptAurocResult concept_annotation_eval(const Model& model, const PromptSet& prompts,
                                                  const CorpusManifest& m,
                                                  const Tensor& image_embs) {
  const auto& concepts = m.concept_vocabulary;
  const Tensor concept_embs = class_text_embeddings(model, prompts, concepts);
  const Tensor sims = cosine_similarity_values(image_embs, concept_embs);
  std::vector<std::vector<double>> scores(concepts.size());
  std::vector<std::vector<uint8_t>> labels(concepts.size());
  for (size_t c = 0; c < concepts.size(); ++c) {
    for (size_t i = 0; i < m.records.size(); ++i) {
      scores[c].push_back(sims.at(static_cast<int>(i), static_cast<int>(c)));
      const auto& cl = m.records[i].concept_labels;
      labels[c].push_back(std::find(cl.begin(), cl.end(), concepts[c]) != cl.end() ? 1 : 0);
    }
  }
  return concept_auroc(concepts, scores, labels);
}

// ---------------------------------------------------------------------------
// cross-modal retrieval

struct RetrievalResult {
  std::vector<int> ks;          // clipped to the corpus size where needed
  std::vector<int> requested_ks;
  bool k_clipped = false;
  std::vector<double> image_to_text;
  std::vector<double> text_to_image;
};

namespace detail {

// 1-based rank of the true match under descending score, ties broken by
// lower candidate index.
inline int match_rank(const float* scores, int n, int true_idx) {
  int rank = 1;
  for (int j = 0; j < n; ++j) {
    if (j == true_idx) continue;
    if (scores[j] > scores[true_idx] || (scores[j] == scores[true_idx] && j < true_idx)) ++rank;
  }
  return rank;
}

}  // namespace detail

inline RetrievalResult retrieval_recall(const Tensor& image_embs, const Tensor& text_embs,
                                        const std::vector<int>& ks) {
  if (image_embs.rows() != text_embs.rows() || image_embs.cols() != text_embs.cols())
    throw ShapeMismatch("retrieval expects matched image/text embedding matrices");
  const int n = image_embs.rows();
  RetrievalResult r;
  r.requested_ks = ks;
  for (int k : ks) {
    if (k < 1) throw InvalidConfig("retrieval K must be >= 1");
    if (k > n) r.k_clipped = true;  // reported, K clipped to the corpus size
    r.ks.push_back(std::min(k, n));
  }
  const Tensor sims = cosine_similarity_values(image_embs, text_embs);  // {n, n}
  std::vector<int> i2t_rank(static_cast<size_t>(n)), t2i_rank(static_cast<size_t>(n));
  Tensor simsT({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) simsT.at(j, i) = sims.at(i, j);
  for (int i = 0; i < n; ++i) {
    i2t_rank[static_cast<size_t>(i)] = detail::match_rank(&sims.v[static_cast<size_t>(i) * n], n, i);
    t2i_rank[static_cast<size_t>(i)] = detail::match_rank(&simsT.v[static_cast<size_t>(i) * n], n, i);
  }
  for (int k : r.ks) {
    int a = 0, b = 0;
    for (int i = 0; i < n; ++i) {
      if (i2t_rank[static_cast<size_t>(i)] <= k) ++a;
      if (t2i_rank[static_cast<size_t>(i)] <= k) ++b;
    }
    r.image_to_text.push_back(static_cast<double>(a) / n);
    r.text_to_image.push_back(static_cast<double>(b) / n);
  }
  return r;
}

// ---------------------------------------------------------------------------
// reports

struct EvalReport {
  std::string task;
  nlohmann::ordered_json per_item;
  nlohmann::ordered_json aggregate;
  std::string config_fingerprint;
  uint64_t seed = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["aggregate"] = aggregate;
    j["per_item"] = per_item;
    j["config_fingerprint"] = config_fingerprint;
    j["seed"] = seed;
    return j;
  }
};

// ---------------------------------------------------------------------------
// ablation harness

struct AblationRow {
  std::string name;
  LossFlags flags;
};

// Component build-up mirroring the five canonical configurations: plain
// contrastive baseline on raw text, knowledge-set-only multi-positive loss,
// the full multi-positive loss, plus the alignment and weighting terms.
inline std::vector<AblationRow> canonical_ablation_rows() {
  std::vector<AblationRow> rows;
  rows.push_back({"baseline", {false, false, false, false, false, false}});
  rows.push_back({"mkcl#", {true, false, false, false, false, false}});
  rows.push_back({"mkcl", {true, true, false, false, false, false}});
  rows.push_back({"mkcl+slra", {true, true, true, false, false, false}});
  rows.push_back({"mkcl+slra+dkw", {true, true, true, true, false, false}});
  return rows;
}

struct AblationCell {
  std::vector<double> accuracies;
  std::vector<double> aurocs;
  double acc_mean = 0.0, acc_sd = 0.0, auroc_mean = 0.0, auroc_sd = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<uint64_t> seeds;
  std::vector<AblationCell> cells;
  std::string csv;
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline std::string flags_string(const LossFlags& f) {
  auto b = [](bool x) { return x ? "1" : "0"; };
  return std::string("knowledge=") + b(f.mkcl_knowledge) + ";subtexts=" + b(f.mkcl_subtexts) +
         ";slra=" + b(f.slra) + ";dkw=" + b(f.dkw);
}

}  // namespace detail

// Trains one model per (row, seed) and evaluates zero-shot accuracy and
// concept AUROC on the held-out split. Rows are independent, so the tasks
// fan out over a small thread pool; assembly order is fixed by index.
inline AblationResult ablation_run(const CorpusManifest& train_manifest,
                                   const ImageStore& train_images,
                                   const CorpusManifest& eval_manifest,
                                   const ImageStore& eval_images, const TrainConfig& base_cfg,
                                   const std::vector<AblationRow>& rows,
                                   const std::vector<uint64_t>& seeds, int threads = 0,
                                   const PromptSet& prompts = {}) {
  if (rows.empty() || seeds.empty()) throw InvalidConfig("ablation needs rows and seeds");
  AblationResult result;
  result.rows = rows;
  result.seeds = seeds;
  result.cells.resize(rows.size());

  struct Task {
    size_t row;
    size_t seed_idx;
  };
  std::vector<Task> tasks;
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t s = 0; s < seeds.size(); ++s) tasks.push_back({r, s});
  std::vector<double> acc(tasks.size(), 0.0), auroc(tasks.size(), 0.0);

  std::vector<int> eval_labels;
  std::map<std::string, int> class_index;
  for (size_t c = 0; c < eval_manifest.class_vocabulary.size(); ++c)
    class_index[eval_manifest.class_vocabulary[c]] = static_cast<int>(c);
  for (const auto& rec : eval_manifest.records)
    eval_labels.push_back(rec.class_label ? class_index.at(*rec.class_label) : -1);

  auto run_task = [&](size_t t) {
    TrainConfig cfg = base_cfg;
    const LossFlags& f = rows[tasks[t].row].flags;
    cfg.enable_mkcl_knowledge = f.mkcl_knowledge;
    cfg.enable_mkcl_subtexts = f.mkcl_subtexts;
    cfg.enable_slra = f.slra;
    cfg.enable_dkw = f.dkw;
    cfg.literal_eq3 = f.literal_eq3;
    cfg.literal_eq5 = f.literal_eq5;
    cfg.seed = seeds[tasks[t].seed_idx];
    TrainResult tr = train(train_manifest, train_images, cfg);
    const Model& model = *tr.state.model;
    const Tensor image_embs = embed_images(model, eval_manifest, eval_images);
    const Tensor class_embs =
        class_text_embeddings(model, prompts, eval_manifest.class_vocabulary);
    acc[t] = zero_shot_classify(image_embs, class_embs, eval_labels).accuracy;
    auroc[t] = concept_annotation_eval(model, prompts, eval_manifest, image_embs).macro;
  };

  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(tasks.size())));
  if (n_threads == 1) {
    for (size_t t = 0; t < tasks.size(); ++t) run_task(t);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&] {
        for (size_t t = next.fetch_add(1); t < tasks.size(); t = next.fetch_add(1)) run_task(t);
      });
    for (auto& th : pool) th.join();
  }

  for (size_t t = 0; t < tasks.size(); ++t) {
    result.cells[tasks[t].row].accuracies.push_back(acc[t]);
    result.cells[tasks[t].row].aurocs.push_back(auroc[t]);
  }
  std::string csv = "row,flags,acc_mean,acc_sd,auroc_mean,auroc_sd,seeds\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    auto& cell = result.cells[r];
    std::tie(cell.acc_mean, cell.acc_sd) = detail::mean_sd(cell.accuracies);
    std::tie(cell.auroc_mean, cell.auroc_sd) = detail::mean_sd(cell.aurocs);
    std::string seed_str;
    for (size_t s = 0; s < seeds.size(); ++s)
      seed_str += (s ? "|" : "") + std::to_string(seeds[s]);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f", cell.acc_mean, cell.acc_sd,
                  cell.auroc_mean, cell.auroc_sd);
    csv += rows[r].name + "," + detail::flags_string(rows[r].flags) + "," + buf + "," + seed_str +
           "\n";
  }
  result.csv = std::move(csv);
  return result;
}

}  // namespace makevlp
