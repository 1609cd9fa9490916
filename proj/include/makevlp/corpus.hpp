#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "makevlp/errors.hpp"
#include "makevlp/rng.hpp"
#include "makevlp/tensor.hpp"

namespace makevlp {

// Text slot layout inside a batch row: [raw, disease, concept, S^1..S^K].
inline constexpr int kSlotRaw = 0;
inline constexpr int kSlotDisease = 1;
inline constexpr int kSlotConcept = 2;
inline constexpr int kKnowledgeSlots = 3;

struct RawPair {
  std::string image_ref;
  std::string raw_text;
};

struct EnhancedRecord {
  RawPair base;
  std::string disease_text;
  std::string concept_text;
  std::vector<std::string> subtexts;
  std::optional<std::string> class_label;
  std::vector<std::string> concept_labels;
};

struct CorpusManifest {
  std::vector<EnhancedRecord> records;
  std::vector<std::string> class_vocabulary;
  std::vector<std::string> concept_vocabulary;
  std::string split_tag = "train";
};

struct EnhancedBatch {
  std::vector<Tensor> images;                    // N tensors, each {H,W,3}
  std::vector<std::vector<std::string>> texts;   // N rows of K_max+3 strings
  std::vector<std::vector<uint8_t>> mask;        // true = real text
  int k_max = 0;

  int size() const { return static_cast<int>(images.size()); }
  int slots() const { return k_max + kKnowledgeSlots; }
};

// ---------------------------------------------------------------------------
// text operations

namespace detail {
inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}
}  // namespace detail

// Splits on '.', '!' and '?', trims, and drops fragments shorter than three
// characters. Text without any terminator comes back as a single subtext.
inline std::vector<std::string> decompose_raw_text(const std::string& raw) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    std::string t = detail::trim(current);
    if (t.size() >= 3) out.push_back(std::move(t));
    current.clear();
  };
  for (char c : raw) {
    if (c == '.' || c == '!' || c == '?')
      flush();
    else
      current += c;
  }
  flush();
  return out;
}

// Deterministic keyword stand-in for model-based knowledge extraction: scans
// the raw text for lexicon terms (case-insensitive substrings, lexicon order,
// deduplicated) and renders the two aspect texts.
inline std::pair<std::string, std::string> stub_knowledge_extract(
    const std::string& raw, const std::vector<std::string>& disease_lexicon,
    const std::vector<std::string>& concept_lexicon) {
  if (disease_lexicon.empty() || concept_lexicon.empty())
    throw InvalidConfig("stub_knowledge_extract: lexicons must be non-empty");
  const std::string hay = detail::lower(raw);
  auto matches = [&](const std::vector<std::string>& lexicon) {
    std::vector<std::string> found;
    for (const auto& term : lexicon) {
      if (term.empty()) continue;
      if (hay.find(detail::lower(term)) == std::string::npos) continue;
      if (std::find(found.begin(), found.end(), term) == found.end()) found.push_back(term);
    }
    return found;
  };
  auto join = [](const std::vector<std::string>& terms, const char* fallback) {
    if (terms.empty()) return std::string(fallback);
    std::string s;
    for (size_t i = 0; i < terms.size(); ++i) s += (i ? ", " : "") + terms[i];
    return s;
  };
  return {"diagnosis: " + join(matches(disease_lexicon), "unknown"),
          "concepts: " + join(matches(concept_lexicon), "none")};
}

// ---------------------------------------------------------------------------
// image files: binary PPM (P6) or flat little-endian float32

inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
  if (img.rank() != 3 || img.shape[2] != 3) throw ShapeMismatch("write_ppm expects {H,W,3}");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot write " + path.string());
  f << "P6\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
  for (float x : img.v) {
    const int q = std::clamp(static_cast<int>(std::lround(x * 255.0f)), 0, 255);
    f.put(static_cast<char>(q));
  }
  if (!f) throw IoFailure("short write to " + path.string());
}

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoFailure("not a binary PPM: " + path.string());
  auto next_int = [&]() {
    int x;
    f >> std::ws;
    while (f.peek() == '#') f.ignore(1 << 20, '\n'), f >> std::ws;
    if (!(f >> x)) throw IoFailure("bad PPM header: " + path.string());
    return x;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw IoFailure("unsupported PPM maxval in " + path.string());
  f.get();  // single whitespace after maxval
  Tensor img({h, w, 3});
  std::vector<char> buf(static_cast<size_t>(h) * w * 3);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw IoFailure("truncated PPM: " + path.string());
  for (size_t i = 0; i < buf.size(); ++i)
    img.v[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / 255.0f;
  return img;
}

inline Tensor read_raw_f32(const std::filesystem::path& path, int size) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path.string());
  Tensor img({size, size, 3});
  f.read(reinterpret_cast<char*>(img.v.data()),
         static_cast<std::streamsize>(img.v.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(img.v.size() * sizeof(float)))
    throw IoFailure("raw image size mismatch: " + path.string());
  return img;
}

// Resolves image_ref values. In-memory entries win over the filesystem, which
// lets synthesized corpora be consumed without a round-trip to disk.
class ImageStore {
 public:
  ImageStore() = default;
  ImageStore(std::filesystem::path root, int image_size)
      : root_(std::move(root)), image_size_(image_size) {}

  void put(const std::string& ref, Tensor img) { memory_[ref] = std::move(img); }

  const Tensor& load(const std::string& ref) const {
    auto it = memory_.find(ref);
    if (it != memory_.end()) return it->second;
    auto cit = cache_.find(ref);
    if (cit != cache_.end()) return cit->second;
    const std::filesystem::path p = root_ / ref;
    Tensor img = p.extension() == ".bin" ? read_raw_f32(p, image_size_) : read_ppm(p);
    return cache_.emplace(ref, std::move(img)).first->second;
  }

  const std::map<std::string, Tensor>& memory() const { return memory_; }
  int image_size() const { return image_size_; }

 private:
  std::filesystem::path root_;
  int image_size_ = 32;
  std::map<std::string, Tensor> memory_;
  mutable std::map<std::string, Tensor> cache_;
};

// ---------------------------------------------------------------------------
// manifest I/O (one JSON object per line)

namespace detail {

inline EnhancedRecord parse_record(const nlohmann::json& j, int line_no) {
  auto need_string = [&](const char* field) {
    if (!j.contains(field) || !j[field].is_string()) throw SchemaViolation(line_no, field);
    return j[field].get<std::string>();
  };
  EnhancedRecord r;
  r.base.image_ref = need_string("image_ref");
  r.base.raw_text = need_string("raw_text");
  if (trim(r.base.raw_text).empty()) throw SchemaViolation(line_no, "raw_text");
  r.disease_text = need_string("disease_text");
  if (r.disease_text.empty()) throw SchemaViolation(line_no, "disease_text");
  r.concept_text = need_string("concept_text");
  if (r.concept_text.empty()) throw SchemaViolation(line_no, "concept_text");
  if (!j.contains("subtexts") || !j["subtexts"].is_array())
    throw SchemaViolation(line_no, "subtexts");
  for (const auto& s : j["subtexts"]) {
    if (!s.is_string() || s.get<std::string>().empty()) throw SchemaViolation(line_no, "subtexts");
    r.subtexts.push_back(s.get<std::string>());
  }
  if (j.contains("class_label") && !j["class_label"].is_null()) {
    if (!j["class_label"].is_string()) throw SchemaViolation(line_no, "class_label");
    r.class_label = j["class_label"].get<std::string>();
  }
  if (j.contains("concept_labels") && !j["concept_labels"].is_null()) {
    if (!j["concept_labels"].is_array()) throw SchemaViolation(line_no, "concept_labels");
    for (const auto& s : j["concept_labels"]) {
      if (!s.is_string()) throw SchemaViolation(line_no, "concept_labels");
      r.concept_labels.push_back(s.get<std::string>());
    }
  }
  return r;
}

inline void push_unique(std::vector<std::string>& vocab, const std::string& term) {
  if (std::find(vocab.begin(), vocab.end(), term) == vocab.end()) vocab.push_back(term);
}

}  // namespace detail

inline CorpusManifest load_manifest(const std::filesystem::path& path,
                                    const std::string& split_tag = "train") {
  std::ifstream f(path);
  if (!f) throw MissingFile(path.string());
  CorpusManifest m;
  m.split_tag = split_tag;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw SchemaViolation(line_no, "<json>");
    m.records.push_back(detail::parse_record(j, line_no));
    const auto& r = m.records.back();
    if (r.class_label) detail::push_unique(m.class_vocabulary, *r.class_label);
    for (const auto& c : r.concept_labels) detail::push_unique(m.concept_vocabulary, c);
  }
  if (m.records.empty()) throw EmptyManifest(path.string());
  return m;
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoFailure("cannot write " + path.string());
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["image_ref"] = r.base.image_ref;
    j["raw_text"] = r.base.raw_text;
    j["disease_text"] = r.disease_text;
    j["concept_text"] = r.concept_text;
    j["subtexts"] = r.subtexts;
    if (r.class_label)
      j["class_label"] = *r.class_label;
    else
      j["class_label"] = nullptr;
    j["concept_labels"] = r.concept_labels;
    f << j.dump() << "\n";
  }
  if (!f) throw IoFailure("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// synthetic corpus

struct SynthConfig {
  int n_classes = 8;
  int samples_per_class = 50;
  int image_size = 32;
  uint64_t seed = 0;
};

struct SynthResult {
  CorpusManifest manifest;
  ImageStore images;
};

namespace detail {

inline const std::vector<std::string>& disease_pool() {
  static const std::vector<std::string> pool = {
      "melanoma",    "psoriasis",    "eczema",       "basal cell carcinoma",
      "dermatofibroma", "urticaria", "vitiligo",     "rosacea",
      "impetigo",    "lichen planus", "keratosis",   "folliculitis",
      "cellulitis",  "lentigo",      "angioma",      "nevus"};
  return pool;
}

inline const std::vector<std::string>& concept_pool() {
  static const std::vector<std::string> pool = {
      "plaque",  "scale",   "erosion",  "nodule",  "papule",         "pigment",
      "erythema", "ulcer",  "crust",    "vesicle", "pustule",        "macule",
      "fissure", "comedone", "atrophy", "telangiectasia"};
  return pool;
}

inline std::array<float, 3> class_color(int c) {
  // Golden-ratio hue spacing keeps classes far apart for any class count.
  float h = std::fmod(0.15f + 0.61803399f * static_cast<float>(c), 1.0f) * 6.0f;
  const float s = 0.85f, v = 0.95f;
  const int i = static_cast<int>(h);
  const float f = h - static_cast<float>(i);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline bool pattern_on(int pattern, int y, int x, int cell) {
  switch (pattern % 8) {
    case 0: return true;                                   // solid
    case 1: return (y / 2) % 2 == 0;                        // horizontal stripes
    case 2: return (x / 2) % 2 == 0;                        // vertical stripes
    case 3: return ((x / 2) + (y / 2)) % 2 == 0;            // checker
    case 4: return ((x + y) / 2) % 2 == 0;                  // diagonal stripes
    case 5: return y < 2 || x < 2 || y >= cell - 2 || x >= cell - 2;  // ring
    case 6: return (x % 4 < 2) && (y % 4 < 2);              // dots
    default: return std::abs(x - cell / 2) < 2 || std::abs(y - cell / 2) < 2;  // cross
  }
}

inline const std::vector<std::string>& pattern_words() {
  static const std::vector<std::string> words = {"homogeneous", "banded",   "striated",
                                                 "checkered",   "streaked", "annular",
                                                 "dotted",      "stellate"};
  return words;
}

}  // namespace detail

// Deterministic corpus with one visual motif per class and texts whose
// class-naming sentence sits at the end of a long narrative, so that the raw
// caption frequently loses it to the context-length cut while the aspect
// texts keep it.
inline SynthResult synth_generate(const SynthConfig& cfg) {
  if (cfg.n_classes < 2) throw InvalidConfig("n_classes must be >= 2");
  if (cfg.samples_per_class < 1) throw InvalidConfig("samples_per_class must be >= 1");
  if (cfg.image_size < 8 || cfg.image_size % 4 != 0)
    throw InvalidConfig("image_size must be a multiple of 4 and >= 8");

  const auto& diseases = detail::disease_pool();
  const auto& concepts = detail::concept_pool();
  static const std::vector<std::string> sites = {"arm",  "leg",  "trunk", "scalp",
                                                 "face", "hand", "foot",  "back"};
  static const std::vector<std::string> symptoms = {"itching", "burning", "tenderness",
                                                    "no discomfort"};

  SynthResult out;
  out.manifest.split_tag = "train";
  Rng master(cfg.seed);

  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> class_concepts;
  for (int c = 0; c < cfg.n_classes; ++c) {
    class_names.push_back(c < static_cast<int>(diseases.size())
                              ? diseases[static_cast<size_t>(c)]
                              : "condition" + std::to_string(c));
    // class semantics derive from the class index alone, so corpora drawn
    // with different seeds agree on what each class looks like
    Rng crng(0xC1A55ULL ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(c + 1)));
    std::vector<std::string> pool = concepts;
    crng.shuffle(pool);
    pool.resize(2 + static_cast<size_t>(crng.next_below(3)));  // 2..4 concepts
    class_concepts.push_back(pool);
  }
  out.manifest.class_vocabulary = class_names;
  for (const auto& cs : class_concepts)
    for (const auto& c : cs) detail::push_unique(out.manifest.concept_vocabulary, c);

  const int cell = cfg.image_size / 4;
  int rec_idx = 0;
  for (int c = 0; c < cfg.n_classes; ++c) {
    const auto color = detail::class_color(c);
    for (int s = 0; s < cfg.samples_per_class; ++s, ++rec_idx) {
      Rng rng = master.fork(0x10000ULL + static_cast<uint64_t>(rec_idx));

      Tensor img({cfg.image_size, cfg.image_size, 3});
      for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x) {
          const float g = 0.40f + 0.20f * rng.next_float();
          for (int ch = 0; ch < 3; ++ch)
            img.v[(static_cast<size_t>(y) * cfg.image_size + x) * 3 + ch] =
                g + 0.05f * (rng.next_float() - 0.5f);
        }
      const int n_cells = 1 + static_cast<int>(rng.next_below(2));
      for (int k = 0; k < n_cells; ++k) {
        const int cy = static_cast<int>(rng.next_below(4));
        const int cx = static_cast<int>(rng.next_below(4));
        for (int y = 0; y < cell; ++y)
          for (int x = 0; x < cell; ++x) {
            if (!detail::pattern_on(c, y, x, cell)) continue;
            const int py = cy * cell + y, px = cx * cell + x;
            for (int ch = 0; ch < 3; ++ch)
              img.v[(static_cast<size_t>(py) * cfg.image_size + px) * 3 + ch] =
                  std::clamp(color[static_cast<size_t>(ch)] + 0.04f * (rng.next_float() - 0.5f),
                             0.0f, 1.0f);
          }
      }
      // quantize to 8-bit levels so the on-disk PPM round-trips exactly
      for (float& x : img.v)
        x = static_cast<float>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f)) / 255.0f;

      const auto& cset = class_concepts[static_cast<size_t>(c)];
      std::vector<std::string> mentioned = cset;
      rng.shuffle(mentioned);
      mentioned.resize(1 + static_cast<size_t>(rng.next_below(cset.size())));

      std::vector<std::string> sentences;
      const int n_attr = 1 + static_cast<int>(rng.next_below(4));
      for (int a = 0; a < n_attr; ++a) {
        const auto& site = sites[rng.next_below(sites.size())];
        const auto& sym = symptoms[rng.next_below(symptoms.size())];
        const auto& c0 = mentioned[rng.next_below(mentioned.size())];
        const auto& c1 = mentioned[rng.next_below(mentioned.size())];
        switch (rng.next_below(5)) {
          case 0: sentences.push_back("The lesion shows " + c0 + " and " + c1); break;
          case 1: sentences.push_back("There is prominent " + c0 + " over the affected area"); break;
          case 2:
            sentences.push_back("A well demarcated region with " + c0 + " is noted on the " + site);
            break;
          case 3: sentences.push_back("The patient reports " + sym + " for several weeks"); break;
          default:
            sentences.push_back("Dermoscopy reveals a " +
                                detail::pattern_words()[static_cast<size_t>(c % 8)] +
                                " surface on the " + site);
        }
      }
      sentences.push_back("Overall findings are consistent with " +
                          class_names[static_cast<size_t>(c)]);

      EnhancedRecord r;
      std::string raw;
      for (const auto& s2 : sentences) raw += s2 + ". ";
      r.base.raw_text = detail::trim(raw);
      char refbuf[48];
      std::snprintf(refbuf, sizeof(refbuf), "images/rec_%05d.ppm", rec_idx);
      r.base.image_ref = refbuf;
      r.subtexts = decompose_raw_text(r.base.raw_text);
      std::tie(r.disease_text, r.concept_text) =
          stub_knowledge_extract(r.base.raw_text, class_names, out.manifest.concept_vocabulary);
      r.class_label = class_names[static_cast<size_t>(c)];
      for (const auto& term : out.manifest.concept_vocabulary)
        if (std::find(mentioned.begin(), mentioned.end(), term) != mentioned.end())
          r.concept_labels.push_back(term);

      out.images.put(r.base.image_ref, std::move(img));
      out.manifest.records.push_back(std::move(r));
    }
  }
  return out;
}

// Splits off an eval set: a seeded fraction of the records of each class.
inline std::pair<CorpusManifest, CorpusManifest> split_manifest(const CorpusManifest& m,
                                                                double eval_fraction,
                                                                uint64_t seed) {
  CorpusManifest train = m, eval = m;
  train.records.clear();
  eval.records.clear();
  train.split_tag = "train";
  eval.split_tag = "eval";

  std::map<std::string, std::vector<size_t>> by_class;
  for (size_t i = 0; i < m.records.size(); ++i)
    by_class[m.records[i].class_label.value_or("")].push_back(i);

  std::vector<uint8_t> is_eval(m.records.size(), 0);
  Rng rng(seed ^ 0x73706c6974ULL);
  for (auto& [cls, idx] : by_class) {
    std::vector<size_t> order = idx;
    rng.shuffle(order);
    const size_t n_eval = static_cast<size_t>(std::lround(eval_fraction * order.size()));
    for (size_t i = 0; i < n_eval; ++i) is_eval[order[i]] = 1;
  }
  for (size_t i = 0; i < m.records.size(); ++i)
    (is_eval[i] ? eval : train).records.push_back(m.records[i]);
  return {train, eval};
}

// ---------------------------------------------------------------------------
// batch assembly

inline EnhancedBatch build_batch(const std::vector<EnhancedRecord>& records, int k_max,
                                 const ImageStore& store) {
  if (records.empty()) throw EmptyBatch();
  if (k_max < 0) throw InvalidConfig("k_max must be >= 0");
  EnhancedBatch b;
  b.k_max = k_max;
  for (const auto& r : records) {
    b.images.push_back(store.load(r.base.image_ref));
    std::vector<std::string> row(static_cast<size_t>(k_max + kKnowledgeSlots));
    std::vector<uint8_t> mrow(static_cast<size_t>(k_max + kKnowledgeSlots), 0);
    row[kSlotRaw] = r.base.raw_text;
    row[kSlotDisease] = r.disease_text;
    row[kSlotConcept] = r.concept_text;
    mrow[kSlotRaw] = mrow[kSlotDisease] = mrow[kSlotConcept] = 1;
    const int k = std::min<int>(k_max, static_cast<int>(r.subtexts.size()));
    for (int j = 0; j < k; ++j) {  // over-long lists keep their first k_max subtexts
      row[static_cast<size_t>(kKnowledgeSlots + j)] = r.subtexts[static_cast<size_t>(j)];
      mrow[static_cast<size_t>(kKnowledgeSlots + j)] = 1;
    }
    b.texts.push_back(std::move(row));
    b.mask.push_back(std::move(mrow));
  }
  return b;
}

}  // namespace makevlp
