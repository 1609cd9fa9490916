#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "makevlp/evaluator.hpp"
#include "oracles.hpp"

using namespace makevlp;

namespace {

Tensor unit_rows(int n, int d, Rng& rng) {
  Tensor t({n, d});
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
      t.at(i, k) = rng.next_symmetric(1.0f);
      sq += static_cast<double>(t.at(i, k)) * t.at(i, k);
    }
    for (int k = 0; k < d; ++k) t.at(i, k) /= static_cast<float>(std::sqrt(sq));
  }
  return t;
}

}  // namespace

TEST_CASE("class text embeddings average prompts and re-normalize") {
  Model model({16, 8, 8, 1, 2}, {256, 12, 8, 1, 2}, 17);

  SECTION("a single template equals that prompt's embedding") {
    PromptSet one;
    one.default_templates = {"a photo of {}"};
    const Tensor embs = class_text_embeddings(model, one, {"melanoma"});
    const auto direct =
        encode_text_values(model, model.text().tokenize_text("a photo of melanoma"));
    for (int k = 0; k < 8; ++k)
      CHECK(embs.at(0, k) == Catch::Approx(direct.vector.v[static_cast<size_t>(k)]).margin(1e-6));
  }
  SECTION("duplicate templates change nothing") {
    PromptSet one, two;
    one.default_templates = {"a photo of {}"};
    two.default_templates = {"a photo of {}", "a photo of {}"};
    const Tensor a = class_text_embeddings(model, one, {"eczema"});
    const Tensor b = class_text_embeddings(model, two, {"eczema"});
    for (int k = 0; k < 8; ++k) CHECK(a.at(0, k) == Catch::Approx(b.at(0, k)).margin(1e-6));
  }
  SECTION("averages of distinct prompts stay unit norm") {
    const PromptSet prompts;  // three defaults
    const Tensor embs = class_text_embeddings(model, prompts, {"melanoma", "eczema"});
    for (int i = 0; i < 2; ++i) {
      double sq = 0.0;
      for (int k = 0; k < 8; ++k) sq += static_cast<double>(embs.at(i, k)) * embs.at(i, k);
      CHECK(std::sqrt(sq) == Catch::Approx(1.0).margin(1e-6));
    }
  }
  SECTION("an empty template list is rejected") {
    PromptSet none;
    none.default_templates = {};
    CHECK_THROWS_AS(class_text_embeddings(model, none, {"melanoma"}), EmptyPromptSet);
  }
}

TEST_CASE("zero-shot classification argmax") {
  SECTION("matches the closer class and breaks ties toward the lower index") {
    Tensor images({2, 2}, {1, 0, std::sqrt(0.5f), std::sqrt(0.5f)});
    Tensor classes({2, 2}, {1, 0, 0, 1});
    const ClassifyResult r = zero_shot_classify(images, classes, {0, 1});
    CHECK(r.predictions[0] == 0);
    CHECK(r.predictions[1] == 0);  // exact tie: lower class index
    CHECK(r.accuracy == Catch::Approx(0.5));
  }
  SECTION("accuracy counts the correct fraction") {
    Tensor images({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    Tensor classes({2, 2}, {1, 0, 0, 1});
    const ClassifyResult r = zero_shot_classify(images, classes, {0, 1, 1, 0});
    CHECK(r.accuracy == Catch::Approx(0.5));
    CHECK(r.per_class_accuracy[0] == Catch::Approx(0.5));
    CHECK(r.per_class_accuracy[1] == Catch::Approx(0.5));
  }
  SECTION("argmax is invariant under strictly increasing score transforms") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor images = unit_rows(6, 8, rng);
      const Tensor classes = unit_rows(4, 8, rng);
      const ClassifyResult r = zero_shot_classify(images, classes, {0, 1, 2, 3, 0, 1});
      const Tensor sims = cosine_similarity_values(images, classes);
      for (int i = 0; i < 6; ++i) {
        int best = 0;
        for (int c = 1; c < 4; ++c) {
          const double a = std::exp(3.0 * sims.at(i, c));  // strictly increasing
          const double b = std::exp(3.0 * sims.at(i, best));
          if (a > b) best = c;
        }
        CHECK(best == r.predictions[static_cast<size_t>(i)]);
      }
    }
  }
}

TEST_CASE("rank-based auroc") {
  SECTION("perfect separation and the tie convention") {
    CHECK(auroc_rank({0.9, 0.1}, {1, 0}) == 1.0);
    CHECK(auroc_rank({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
    CHECK(auroc_rank({0.2, 0.9, 0.4}, {1, 0, 1}) == 0.0);
  }
  SECTION("matches brute-force pair counting exactly") {
    Rng rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 3 + static_cast<int>(rng.next_below(40));
      std::vector<double> scores;
      std::vector<uint8_t> labels;
      bool has_pos = false, has_neg = false;
      for (int i = 0; i < n; ++i) {
        // quantized scores force plenty of ties
        scores.push_back(static_cast<double>(rng.next_below(8)) / 8.0);
        labels.push_back(static_cast<uint8_t>(rng.next_below(2)));
        (labels.back() ? has_pos : has_neg) = true;
      }
      if (!has_pos || !has_neg) continue;
      CHECK(auroc_rank(scores, labels) == oracle::auroc_bruteforce(scores, labels));
    }
  }
  SECTION("invariant under increasing transforms, complement flips") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 4 + static_cast<int>(rng.next_below(20));
      std::vector<double> scores;
      std::vector<uint8_t> labels;
      int pos = 0;
      for (int i = 0; i < n; ++i) {
        scores.push_back(rng.next_double());
        labels.push_back(static_cast<uint8_t>(rng.next_below(2)));
        pos += labels.back();
      }
      if (pos == 0 || pos == n) continue;
      std::vector<double> warped;
      for (double s : scores) warped.push_back(std::tanh(4.0 * s) + 2.0);
      const double base = auroc_rank(scores, labels);
      CHECK(auroc_rank(warped, labels) == Catch::Approx(base).margin(1e-12));
      std::vector<uint8_t> flipped;
      for (uint8_t y : labels) flipped.push_back(static_cast<uint8_t>(1 - y));
      CHECK(auroc_rank(scores, flipped) == Catch::Approx(1.0 - base).margin(1e-12));
    }
  }
  SECTION("concepts without both labels are skipped; none scorable throws") {
    const ConceptAurocResult r = concept_auroc(
        {"plaque", "scale"}, {{0.3, 0.8}, {0.1, 0.9}}, {{0, 1}, {1, 1}});
    CHECK(r.scored == std::vector<uint8_t>{1, 0});
    CHECK(r.macro == 1.0);
    CHECK_THROWS_AS(concept_auroc({"x"}, {{0.5, 0.4}}, {{1, 1}}), NoScorableConcepts);
  }
}

TEST_CASE("retrieval recall") {
  SECTION("identical embeddings retrieve themselves first") {
    Rng rng(5);
    const Tensor embs = unit_rows(6, 8, rng);
    const RetrievalResult r = retrieval_recall(embs, embs, {1, 3});
    CHECK(r.image_to_text[0] == 1.0);
    CHECK(r.text_to_image[0] == 1.0);
  }
  SECTION("reversed pairing of two orthogonal pairs") {
    Tensor images({2, 2}, {1, 0, 0, 1});
    Tensor texts({2, 2}, {0, 1, 1, 0});
    const RetrievalResult r = retrieval_recall(images, texts, {1, 2});
    CHECK(r.image_to_text[0] == 0.0);
    CHECK(r.image_to_text[1] == 1.0);
    CHECK(r.text_to_image[0] == 0.0);
    CHECK(r.text_to_image[1] == 1.0);
  }
  SECTION("oversized cutoffs clip and report") {
    Rng rng(6);
    const Tensor embs = unit_rows(4, 8, rng);
    const RetrievalResult r = retrieval_recall(embs, embs, {2, 9});
    CHECK(r.k_clipped);
    CHECK(r.ks == std::vector<int>{2, 4});
    CHECK(r.image_to_text[1] == 1.0);  // R@N = 1
  }
  SECTION("monotone in K and exact against the sort oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor images = unit_rows(50, 8, rng);
      const Tensor texts = unit_rows(50, 8, rng);
      std::vector<int> ks = {1, 5, 10, 25, 50};
      const RetrievalResult r = retrieval_recall(images, texts, ks);
      const auto oracle_i2t = oracle::recall_at_k_naive(images, texts, ks);
      const auto oracle_t2i = oracle::recall_at_k_naive(texts, images, ks);
      for (size_t k = 0; k < ks.size(); ++k) {
        CHECK(r.image_to_text[k] == oracle_i2t[k]);
        CHECK(r.text_to_image[k] == oracle_t2i[k]);
        if (k > 0) {
          CHECK(r.image_to_text[k] >= r.image_to_text[k - 1]);
          CHECK(r.text_to_image[k] >= r.text_to_image[k - 1]);
        }
      }
      CHECK(r.image_to_text.back() == 1.0);
      CHECK(r.text_to_image.back() == 1.0);
    }
  }
}

TEST_CASE("ablation harness trains each row per seed and emits the csv") {
  const SynthResult train_corpus = synth_generate({2, 8, 16, 40});
  const SynthResult eval_corpus = synth_generate({2, 4, 16, 41});

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.warmup_steps = 2;
  cfg.k_max = 2;
  cfg.vision = {16, 8, 8, 1, 2};
  cfg.text = {128, 10, 8, 1, 2};

  std::vector<AblationRow> rows = {canonical_ablation_rows()[0], canonical_ablation_rows()[4]};
  const AblationResult r = ablation_run(train_corpus.manifest, train_corpus.images,
                                        eval_corpus.manifest, eval_corpus.images, cfg, rows,
                                        {1, 2}, 2);
  REQUIRE(r.cells.size() == 2);
  CHECK(r.cells[0].accuracies.size() == 2);  // one per seed
  CHECK(r.cells[1].aurocs.size() == 2);
  for (const auto& cell : r.cells) {
    CHECK(cell.acc_mean >= 0.0);
    CHECK(cell.acc_mean <= 1.0);
  }
  CHECK(r.csv.rfind("row,flags,acc_mean,acc_sd,auroc_mean,auroc_sd,seeds\n", 0) == 0);
  CHECK(std::count(r.csv.begin(), r.csv.end(), '\n') == 3);  // header + 2 rows
  CHECK(r.csv.find("baseline,") != std::string::npos);
  CHECK(r.csv.find("1|2") != std::string::npos);

  SECTION("rerunning is deterministic") {
    const AblationResult r2 = ablation_run(train_corpus.manifest, train_corpus.images,
                                           eval_corpus.manifest, eval_corpus.images, cfg, rows,
                                           {1, 2}, 1);
    CHECK(r2.csv == r.csv);
  }
}

TEST_CASE("canonical rows cover the component build-up") {
  const auto rows = canonical_ablation_rows();
  REQUIRE(rows.size() == 5);
  CHECK_FALSE(rows[0].flags.mkcl_knowledge);
  CHECK(rows[1].flags.mkcl_knowledge);
  CHECK_FALSE(rows[1].flags.mkcl_subtexts);
  CHECK(rows[2].flags.mkcl_subtexts);
  CHECK_FALSE(rows[2].flags.slra);
  CHECK(rows[3].flags.slra);
  CHECK_FALSE(rows[3].flags.dkw);
  CHECK(rows[4].flags.dkw);
}
