#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "makevlp/corpus.hpp"

using namespace makevlp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("makevlp_corpus_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p);
  for (const auto& l : lines) f << l << "\n";
}

const char* kRecordA =
    R"({"image_ref":"images/a.ppm","raw_text":"Red plaque on arm. Itchy at night.","disease_text":"diagnosis: eczema","concept_text":"concepts: plaque","subtexts":["Red plaque on arm","Itchy at night"],"class_label":"eczema","concept_labels":["plaque"]})";
const char* kRecordB =
    R"({"image_ref":"images/b.ppm","raw_text":"Melanoma","disease_text":"diagnosis: melanoma","concept_text":"concepts: none","subtexts":["Melanoma"],"class_label":"melanoma","concept_labels":[]})";

}  // namespace

TEST_CASE("manifest loading") {
  const fs::path dir = temp_dir();

  SECTION("two valid lines load in order") {
    write_lines(dir / "m.jsonl", {kRecordA, kRecordB});
    const CorpusManifest m = load_manifest(dir / "m.jsonl");
    REQUIRE(m.records.size() == 2);
    CHECK(m.records[0].base.image_ref == "images/a.ppm");
    CHECK(m.records[1].class_label == "melanoma");
    CHECK(m.class_vocabulary == std::vector<std::string>{"eczema", "melanoma"});
    CHECK(m.concept_vocabulary == std::vector<std::string>{"plaque"});
  }
  SECTION("a line missing raw_text names the line and field") {
    write_lines(dir / "bad.jsonl",
                {kRecordA,
                 R"({"image_ref":"x.ppm","disease_text":"d","concept_text":"c","subtexts":[]})"});
    try {
      load_manifest(dir / "bad.jsonl");
      FAIL("expected SchemaViolation");
    } catch (const SchemaViolation& e) {
      CHECK(e.line_no == 2);
      CHECK(e.field == "raw_text");
    }
  }
  SECTION("an empty file is rejected") {
    write_lines(dir / "empty.jsonl", {});
    CHECK_THROWS_AS(load_manifest(dir / "empty.jsonl"), EmptyManifest);
  }
  SECTION("a missing file is rejected") {
    CHECK_THROWS_AS(load_manifest(dir / "nope.jsonl"), MissingFile);
  }
  SECTION("save then load round-trips") {
    write_lines(dir / "m.jsonl", {kRecordA, kRecordB});
    const CorpusManifest m = load_manifest(dir / "m.jsonl");
    save_manifest(m, dir / "copy.jsonl");
    const CorpusManifest m2 = load_manifest(dir / "copy.jsonl");
    REQUIRE(m2.records.size() == m.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
      CHECK(m2.records[i].base.raw_text == m.records[i].base.raw_text);
      CHECK(m2.records[i].subtexts == m.records[i].subtexts);
      CHECK(m2.records[i].concept_labels == m.records[i].concept_labels);
    }
  }
}

TEST_CASE("sentence decomposition") {
  CHECK(decompose_raw_text("Red plaque on arm. Itchy at night.") ==
        std::vector<std::string>{"Red plaque on arm", "Itchy at night"});
  CHECK(decompose_raw_text("Melanoma") == std::vector<std::string>{"Melanoma"});
  // fragments below three characters are dropped, including two-letter ones
  CHECK(decompose_raw_text("A. b? ok!").empty());
  CHECK(decompose_raw_text("A. b? yes!") == std::vector<std::string>{"yes"});
  CHECK(decompose_raw_text("  x  ").empty());

  SECTION("re-joining and re-splitting is stable") {
    const std::vector<std::string> raws = {
        "Red plaque on arm. Itchy at night.",
        "One sentence here! Another one? And a third.",
        "Melanoma",
        "Short. ab. This fragment survives. x.",
    };
    for (const auto& raw : raws) {
      const auto once = decompose_raw_text(raw);
      std::string rejoined;
      for (size_t i = 0; i < once.size(); ++i) rejoined += once[i] + (i + 1 < once.size() ? ". " : "");
      CHECK(decompose_raw_text(rejoined) == once);
    }
  }
}

TEST_CASE("keyword-based knowledge extraction") {
  const std::vector<std::string> diseases = {"melanoma", "psoriasis"};
  const std::vector<std::string> concepts = {"plaque", "scale"};

  SECTION("matches in lexicon order") {
    auto [d, c] =
        stub_knowledge_extract("Superficial spreading melanoma with scale", diseases, concepts);
    CHECK(d == "diagnosis: melanoma");
    CHECK(c == "concepts: scale");
  }
  SECTION("no hits fall back to unknown/none") {
    auto [d, c] = stub_knowledge_extract("nothing relevant here", diseases, concepts);
    CHECK(d == "diagnosis: unknown");
    CHECK(c == "concepts: none");
  }
  SECTION("case-insensitive matches deduplicate") {
    auto [d, c] = stub_knowledge_extract("PLAQUE and Plaque", diseases, concepts);
    CHECK(c == "concepts: plaque");
  }
  SECTION("pure function of its inputs") {
    for (int i = 0; i < 5; ++i) {
      auto [d, c] = stub_knowledge_extract("psoriasis with plaque and scale", diseases, concepts);
      CHECK(d == "diagnosis: psoriasis");
      CHECK(c == "concepts: plaque, scale");
    }
  }
}

TEST_CASE("synthetic corpus generation") {
  SECTION("same seed is byte-identical, different seed differs") {
    SynthConfig cfg{2, 3, 32, 7};
    const SynthResult a = synth_generate(cfg);
    const SynthResult b = synth_generate(cfg);
    REQUIRE(a.manifest.records.size() == b.manifest.records.size());
    for (size_t i = 0; i < a.manifest.records.size(); ++i) {
      CHECK(a.manifest.records[i].base.raw_text == b.manifest.records[i].base.raw_text);
      CHECK(a.manifest.records[i].disease_text == b.manifest.records[i].disease_text);
    }
    for (const auto& [ref, img] : a.images.memory())
      CHECK(img.v == b.images.memory().at(ref).v);

    cfg.seed = 8;
    const SynthResult c = synth_generate(cfg);
    bool any_diff = false;
    for (const auto& [ref, img] : a.images.memory())
      if (img.v != c.images.memory().at(ref).v) any_diff = true;
    CHECK(any_diff);
  }
  SECTION("record and vocabulary counts") {
    const SynthResult r = synth_generate({8, 50, 32, 1});
    CHECK(r.manifest.records.size() == 400);
    CHECK(r.manifest.class_vocabulary.size() == 8);
    for (const auto& rec : r.manifest.records) {
      REQUIRE(rec.class_label.has_value());
      CHECK(std::find(r.manifest.class_vocabulary.begin(), r.manifest.class_vocabulary.end(),
                      *rec.class_label) != r.manifest.class_vocabulary.end());
      CHECK(!rec.subtexts.empty());
      CHECK(rec.disease_text == "diagnosis: " + *rec.class_label);
      CHECK(!rec.concept_labels.empty());
    }
  }
  SECTION("invalid configs are rejected") {
    CHECK_THROWS_AS(synth_generate({1, 3, 32, 0}), InvalidConfig);
    CHECK_THROWS_AS(synth_generate({2, 0, 32, 0}), InvalidConfig);
    CHECK_THROWS_AS(synth_generate({2, 3, 30, 0}), InvalidConfig);
  }
}

TEST_CASE("manifest splitting holds out a per-class fraction") {
  const SynthResult r = synth_generate({4, 10, 32, 5});
  auto [train, eval] = split_manifest(r.manifest, 0.2, 5);
  CHECK(train.records.size() == 32);
  CHECK(eval.records.size() == 8);
  CHECK(train.split_tag == "train");
  CHECK(eval.split_tag == "eval");
  std::map<std::string, int> eval_counts;
  for (const auto& rec : eval.records) ++eval_counts[*rec.class_label];
  for (const auto& cls : r.manifest.class_vocabulary) CHECK(eval_counts[cls] == 2);
  for (const auto& te : train.records)
    for (const auto& ee : eval.records) CHECK(te.base.image_ref != ee.base.image_ref);
}

TEST_CASE("image round-trip through binary ppm") {
  const fs::path dir = temp_dir();
  const SynthResult r = synth_generate({2, 1, 32, 3});
  const auto& [ref, img] = *r.images.memory().begin();
  fs::create_directories((dir / ref).parent_path());
  write_ppm(dir / ref, img);
  const Tensor back = read_ppm(dir / ref);
  REQUIRE(back.shape == img.shape);
  CHECK(back.v == img.v);  // generator pre-quantizes to 8-bit levels

  ImageStore store(dir, 32);
  CHECK(store.load(ref).v == img.v);
  CHECK_THROWS_AS(store.load("images/absent.ppm"), MissingFile);
}

TEST_CASE("batch assembly pads and truncates subtext slots") {
  const SynthResult r = synth_generate({2, 2, 32, 9});

  SECTION("two subtexts against four slots") {
    EnhancedRecord rec = r.manifest.records[0];
    rec.subtexts = {"first one", "second one"};
    const EnhancedBatch b = build_batch({rec}, 4, r.images);
    REQUIRE(b.mask.size() == 1);
    CHECK(b.mask[0] == std::vector<uint8_t>{1, 1, 1, 1, 1, 0, 0});
    CHECK(b.texts[0][3] == "first one");
    CHECK(b.texts[0][5].empty());
  }
  SECTION("six subtexts truncate to the first four") {
    EnhancedRecord rec = r.manifest.records[0];
    rec.subtexts = {"s1", "s2", "s3", "s4", "s5", "s6"};
    const EnhancedBatch b = build_batch({rec}, 4, r.images);
    CHECK(b.mask[0] == std::vector<uint8_t>{1, 1, 1, 1, 1, 1, 1});
    CHECK(b.texts[0][6] == "s4");
  }
  SECTION("empty record lists are rejected") {
    CHECK_THROWS_AS(build_batch({}, 4, r.images), EmptyBatch);
  }
  SECTION("mask invariants hold over the synthetic corpus") {
    const EnhancedBatch b = build_batch(r.manifest.records, 3, r.images);
    for (const auto& row : b.mask) {
      CHECK(row[0]);
      CHECK(row[1]);
      CHECK(row[2]);
      bool seen_false = false;
      for (size_t j = kKnowledgeSlots; j < row.size(); ++j) {
        if (!row[j]) seen_false = true;
        if (seen_false) CHECK_FALSE(row[j]);  // subtext validity is a prefix
      }
    }
  }
}
