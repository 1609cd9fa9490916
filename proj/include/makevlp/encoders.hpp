#pragma once

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "makevlp/corpus.hpp"
#include "makevlp/graph.hpp"
#include "makevlp/rng.hpp"

namespace makevlp {

struct VisionEncoderConfig {
  int image_size = 32;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 2;  // 0 = linear patch embedding only
  int heads = 4;

  int hw() const { return (image_size / patch_size) * (image_size / patch_size); }

  void validate() const {
    if (patch_size < 1 || image_size < 1 || image_size % patch_size != 0)
      throw InvalidConfig("image_size must be divisible by patch_size");
    if (embed_dim < 2) throw InvalidConfig("embed_dim must be >= 2");
    if (depth < 0) throw InvalidConfig("depth must be >= 0");
    if (depth > 0 && (heads < 1 || embed_dim % heads != 0))
      throw InvalidConfig("heads must divide embed_dim");
  }
};

struct TextEncoderConfig {
  int vocab_size = 4096;
  int context_length = 77;
  int embed_dim = 64;
  int depth = 2;
  int heads = 4;

  void validate() const {
    if (vocab_size < 3) throw InvalidConfig("vocab_size must be >= 3");
    if (context_length < 1) throw InvalidConfig("context_length must be >= 1");
    if (embed_dim < 2) throw InvalidConfig("embed_dim must be >= 2");
    if (depth < 0) throw InvalidConfig("depth must be >= 0");
    if (depth > 0 && (heads < 1 || embed_dim % heads != 0))
      throw InvalidConfig("heads must divide embed_dim");
  }
};

// ---------------------------------------------------------------------------
// tokenizer: hash-based, id 0 = pad, id 1 = end-of-text

inline constexpr int kPadId = 0;
inline constexpr int kEotId = 1;

// Lowercases, splits on anything that is not alphanumeric (bytes >= 0x80 are
// kept so multi-byte characters stay inside tokens), hashes each token with
// FNV-1a 64, truncates to limit-1 tokens, appends end-of-text and pads.
inline std::vector<int> tokenize(const std::string& text, int limit, int vocab_size) {
  if (limit < 1) throw InvalidConfig("token limit must be >= 1");
  if (vocab_size < 3) throw InvalidConfig("vocab_size must be >= 3");
  std::vector<int> ids;
  std::string tok;
  auto flush = [&] {
    if (!tok.empty() && static_cast<int>(ids.size()) < limit - 1)
      ids.push_back(static_cast<int>(fnv1a64(tok) % static_cast<uint64_t>(vocab_size - 2)) + 2);
    tok.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80)
      tok += static_cast<char>(std::tolower(c));
    else
      flush();
  }
  flush();
  ids.push_back(kEotId);
  ids.resize(static_cast<size_t>(limit), kPadId);
  return ids;
}

inline int eot_position(const std::vector<int>& ids) {
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == kEotId) return static_cast<int>(i);
  return static_cast<int>(ids.size()) - 1;
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
class ParamStoreT {
 public:
  // Symmetric uniform init scaled by 1/sqrt(fan_in); zero/one for biases and
  // gains via the limit argument. Draws are made in float so that every
  // scalar instantiation starts from identical values.
  ParamT<T>& create(const std::string& name, std::vector<int> shape, float limit, Rng& rng,
                    bool decay, float fill_value = 0.0f) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter name: " + name);
    TensorT<T> t(std::move(shape));
    if (limit > 0.0f)
      for (T& x : t.v) x = static_cast<T>(rng.next_symmetric(limit));
    else
      t.fill(static_cast<T>(fill_value));
    items_.emplace_back(name, std::move(t), decay);
    index_[name] = &items_.back();
    return items_.back();
  }

  ParamT<T>& matrix(const std::string& name, int in, int out, Rng& rng) {
    return create(name, {in, out}, 1.0f / std::sqrt(static_cast<float>(in)), rng, true);
  }
  ParamT<T>& table(const std::string& name, int rows, int dim, Rng& rng) {
    return create(name, {rows, dim}, 1.0f / std::sqrt(static_cast<float>(dim)), rng, true);
  }
  ParamT<T>& bias(const std::string& name, int n) {
    Rng unused(0);
    return create(name, {n}, 0.0f, unused, false, 0.0f);
  }
  ParamT<T>& gain(const std::string& name, int n) {
    Rng unused(0);
    return create(name, {n}, 0.0f, unused, false, 1.0f);
  }
  ParamT<T>& scalar_param(const std::string& name, float value, bool decay = false) {
    Rng unused(0);
    return create(name, {}, 0.0f, unused, decay, value);
  }

  ParamT<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("unknown parameter: " + name);
    return *it->second;
  }
  const ParamT<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  std::vector<ParamT<T>*> all() {
    std::vector<ParamT<T>*> out;
    for (ParamT<T>& p : items_) out.push_back(&p);
    return out;
  }

  void zero_grads() {
    for (ParamT<T>& p : items_) p.zero_grad();
  }

 private:
  std::deque<ParamT<T>> items_;  // stable addresses, creation order preserved
  std::map<std::string, ParamT<T>*> index_;
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// transformer pieces

template <typename T>
struct BlockParamsT {
  ParamT<T>*ln1_g, *ln1_b, *wq, *bq, *wk, *wv, *bv, *wo, *bo;
  ParamT<T>*ln2_g, *ln2_b, *w1, *b1, *w2, *b2;

  static BlockParamsT create(ParamStoreT<T>& ps, const std::string& prefix, int d, Rng& rng) {
    BlockParamsT b;
    b.ln1_g = &ps.gain(prefix + "ln1.g", d);
    b.ln1_b = &ps.bias(prefix + "ln1.b", d);
    b.wq = &ps.matrix(prefix + "attn.wq", d, d, rng);
    b.bq = &ps.bias(prefix + "attn.bq", d);
    // no key bias: softmax rows are shift invariant, so it would be inert
    b.wk = &ps.matrix(prefix + "attn.wk", d, d, rng);
    b.wv = &ps.matrix(prefix + "attn.wv", d, d, rng);
    b.bv = &ps.bias(prefix + "attn.bv", d);
    b.wo = &ps.matrix(prefix + "attn.wo", d, d, rng);
    b.bo = &ps.bias(prefix + "attn.bo", d);
    b.ln2_g = &ps.gain(prefix + "ln2.g", d);
    b.ln2_b = &ps.bias(prefix + "ln2.b", d);
    b.w1 = &ps.matrix(prefix + "mlp.w1", d, 4 * d, rng);
    b.b1 = &ps.bias(prefix + "mlp.b1", 4 * d);
    b.w2 = &ps.matrix(prefix + "mlp.w2", 4 * d, d, rng);
    b.b2 = &ps.bias(prefix + "mlp.b2", d);
    return b;
  }
};

// Pre-norm residual block with bidirectional attention.
template <typename T>
inline NodeT<T>* transformer_block(GraphT<T>& g, NodeT<T>* x, const BlockParamsT<T>& p,
                                   int heads) {
  const int d = x->val.cols();
  const int hd = d / heads;
  NodeT<T>* h = g.layernorm_rows(x, g.param(*p.ln1_g), g.param(*p.ln1_b));
  NodeT<T>* q = g.add_bias(g.matmul(h, g.param(*p.wq)), g.param(*p.bq));
  NodeT<T>* k = g.matmul(h, g.param(*p.wk));
  NodeT<T>* v = g.add_bias(g.matmul(h, g.param(*p.wv)), g.param(*p.bv));
  std::vector<NodeT<T>*> head_outs;
  for (int i = 0; i < heads; ++i) {
    NodeT<T>* qh = g.slice_cols(q, i * hd, (i + 1) * hd);
    NodeT<T>* kh = g.slice_cols(k, i * hd, (i + 1) * hd);
    NodeT<T>* vh = g.slice_cols(v, i * hd, (i + 1) * hd);
    NodeT<T>* scores =
        g.scale(g.matmul(qh, g.transpose(kh)), T(1) / std::sqrt(static_cast<T>(hd)));
    head_outs.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  NodeT<T>* attn = g.add_bias(g.matmul(g.concat_cols(head_outs), g.param(*p.wo)), g.param(*p.bo));
  x = g.add(x, attn);
  NodeT<T>* h2 = g.layernorm_rows(x, g.param(*p.ln2_g), g.param(*p.ln2_b));
  NodeT<T>* m = g.gelu(g.add_bias(g.matmul(h2, g.param(*p.w1)), g.param(*p.b1)));
  m = g.add_bias(g.matmul(m, g.param(*p.w2)), g.param(*p.b2));
  return g.add(x, m);
}

// ---------------------------------------------------------------------------
// encoders

template <typename T>
struct VisualEmbeddingNodesT {
  NodeT<T>* pooled;   // {d}, unit norm
  NodeT<T>* patches;  // {HW, d}, unnormalized, shared projection space
};

using VisualEmbeddingNodes = VisualEmbeddingNodesT<float>;

template <typename T>
class VisionEncoderT {
 public:
  VisionEncoderT(ParamStoreT<T>& ps, VisionEncoderConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int pd = cfg_.patch_size * cfg_.patch_size * 3;
    patch_w_ = &ps.matrix("vision.patch.w", pd, cfg_.embed_dim, rng);
    patch_b_ = &ps.bias("vision.patch.b", cfg_.embed_dim);
    pos_ = &ps.table("vision.pos", cfg_.hw(), cfg_.embed_dim, rng);
    for (int i = 0; i < cfg_.depth; ++i)
      blocks_.push_back(BlockParamsT<T>::create(ps, "vision.blk" + std::to_string(i) + ".",
                                                cfg_.embed_dim, rng));
    ln_post_g_ = &ps.gain("vision.ln_post.g", cfg_.embed_dim);
    ln_post_b_ = &ps.bias("vision.ln_post.b", cfg_.embed_dim);
    proj_ = &ps.matrix("vision.proj", cfg_.embed_dim, cfg_.embed_dim, rng);
  }

  const VisionEncoderConfig& config() const { return cfg_; }

  TensorT<T> patchify(const Tensor& image) const {
    if (image.rank() != 3 || image.shape[0] != cfg_.image_size ||
        image.shape[1] != cfg_.image_size || image.shape[2] != 3)
      throw ShapeMismatch("image " + image.shape_string() + " does not match encoder config");
    const int p = cfg_.patch_size;
    const int grid = cfg_.image_size / p;
    TensorT<T> out({grid * grid, p * p * 3});
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx) {
        T* row = &out.v[static_cast<size_t>(gy * grid + gx) * p * p * 3];
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int c = 0; c < 3; ++c)
              row[(y * p + x) * 3 + c] = static_cast<T>(
                  image.v[((static_cast<size_t>(gy * p + y)) * cfg_.image_size + gx * p + x) * 3 +
                          c]);
      }
    return out;
  }

  VisualEmbeddingNodesT<T> encode(GraphT<T>& g, const Tensor& image) const {
    NodeT<T>* x =
        g.add_bias(g.matmul(g.input(patchify(image)), g.param(*patch_w_)), g.param(*patch_b_));
    x = g.add(x, g.param(*pos_));
    for (const auto& b : blocks_) x = transformer_block(g, x, b, cfg_.heads);
    x = g.layernorm_rows(x, g.param(*ln_post_g_), g.param(*ln_post_b_));
    NodeT<T>* patches = g.matmul(x, g.param(*proj_));
    NodeT<T>* pooled = g.l2norm_rows(g.row_mean(patches));
    return {pooled, patches};
  }

 private:
  VisionEncoderConfig cfg_;
  ParamT<T>*patch_w_, *patch_b_, *pos_, *ln_post_g_, *ln_post_b_, *proj_;
  std::vector<BlockParamsT<T>> blocks_;
};

using VisionEncoder = VisionEncoderT<float>;

template <typename T>
class TextEncoderT {
 public:
  TextEncoderT(ParamStoreT<T>& ps, TextEncoderConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    tok_ = &ps.table("text.tok", cfg_.vocab_size, cfg_.embed_dim, rng);
    pos_ = &ps.table("text.pos", cfg_.context_length, cfg_.embed_dim, rng);
    for (int i = 0; i < cfg_.depth; ++i)
      blocks_.push_back(
          BlockParamsT<T>::create(ps, "text.blk" + std::to_string(i) + ".", cfg_.embed_dim, rng));
    ln_post_g_ = &ps.gain("text.ln_post.g", cfg_.embed_dim);
    ln_post_b_ = &ps.bias("text.ln_post.b", cfg_.embed_dim);
    proj_ = &ps.matrix("text.proj", cfg_.embed_dim, cfg_.embed_dim, rng);
  }

  const TextEncoderConfig& config() const { return cfg_; }

  std::vector<int> tokenize_text(const std::string& text) const {
    return tokenize(text, cfg_.context_length, cfg_.vocab_size);
  }

  // Positions after end-of-text are padding by construction, so only the
  // prefix up to the end-of-text marker is encoded.
  NodeT<T>* encode(GraphT<T>& g, const std::vector<int>& tokens) const {
    if (static_cast<int>(tokens.size()) != cfg_.context_length)
      throw ShapeMismatch("token sequence length must equal context_length");
    const int eot = eot_position(tokens);
    std::vector<int> ids(tokens.begin(), tokens.begin() + eot + 1);
    std::vector<int> pos_idx(ids.size());
    for (size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = static_cast<int>(i);
    NodeT<T>* x = g.add(g.take_rows(g.param(*tok_), ids), g.take_rows(g.param(*pos_), pos_idx));
    for (const auto& b : blocks_) x = transformer_block(g, x, b, cfg_.heads);
    x = g.layernorm_rows(x, g.param(*ln_post_g_), g.param(*ln_post_b_));
    return g.l2norm_rows(g.vecmat(g.take_row(x, eot), g.param(*proj_)));
  }

 private:
  TextEncoderConfig cfg_;
  ParamT<T>*tok_, *pos_, *ln_post_g_, *ln_post_b_, *proj_;
  std::vector<BlockParamsT<T>> blocks_;
};

using TextEncoder = TextEncoderT<float>;

// ---------------------------------------------------------------------------
// the dual-encoder model

inline constexpr float kTauMin = 1e-3f;
inline constexpr float kTauMax = 10.0f;
inline constexpr float kTauInit = 0.07f;

template <typename T>
class ModelT {
 public:
  ModelT(VisionEncoderConfig vcfg, TextEncoderConfig tcfg, uint64_t seed)
      : init_rng_(seed ^ 0x6d6f64656cULL),
        vision_(store_, vcfg, init_rng_),
        text_(store_, tcfg, init_rng_),
        log_tau_(&store_.scalar_param("log_tau", std::log(kTauInit))) {
    if (vcfg.embed_dim != tcfg.embed_dim)
      throw InvalidConfig("vision and text embed_dim must match");
  }

  ModelT(const ModelT&) = delete;
  ModelT& operator=(const ModelT&) = delete;

  ParamStoreT<T>& store() { return store_; }
  const VisionEncoderT<T>& vision() const { return vision_; }
  const TextEncoderT<T>& text() const { return text_; }
  ParamT<T>& log_tau() { return *log_tau_; }
  int dim() const { return vision_.config().embed_dim; }

  float tau() const {
    return std::min(std::max(static_cast<float>(std::exp(log_tau_->value.v[0])), kTauMin),
                    kTauMax);
  }

 private:
  Rng init_rng_;
  ParamStoreT<T> store_;
  VisionEncoderT<T> vision_;
  TextEncoderT<T> text_;
  ParamT<T>* log_tau_;
};

using Model = ModelT<float>;

// ---------------------------------------------------------------------------
// batch encoding

template <typename T>
struct EmbeddingBatchNodesT {
  NodeT<T>* visual = nullptr;      // {N, d}
  std::vector<NodeT<T>*> patches;  // per sample {HW, d}
  NodeT<T>* texts = nullptr;       // {N*(K+3), d}; masked slots are zero rows
  std::vector<std::vector<uint8_t>> mask;
  int n = 0, k_max = 0, dim = 0, hw = 0;

  int slots() const { return k_max + kKnowledgeSlots; }
  int text_row(int i, int j) const { return i * slots() + j; }
};

using EmbeddingBatchNodes = EmbeddingBatchNodesT<float>;

template <typename T>
inline EmbeddingBatchNodesT<T> encode_batch(GraphT<T>& g, ModelT<T>& model,
                                            const EnhancedBatch& batch) {
  EmbeddingBatchNodesT<T> out;
  out.n = batch.size();
  out.k_max = batch.k_max;
  out.dim = model.dim();
  out.hw = model.vision().config().hw();
  out.mask = batch.mask;

  std::vector<NodeT<T>*> pooled;
  for (const Tensor& img : batch.images) {
    auto enc = model.vision().encode(g, img);
    pooled.push_back(enc.pooled);
    out.patches.push_back(enc.patches);
  }
  out.visual = g.stack_rows(pooled);

  std::vector<NodeT<T>*> text_rows;
  NodeT<T>* zero = g.input(TensorT<T>::zeros({model.dim()}));
  for (int i = 0; i < batch.size(); ++i)
    for (int j = 0; j < batch.slots(); ++j) {
      if (batch.mask[static_cast<size_t>(i)][static_cast<size_t>(j)]) {
        const auto ids = model.text().tokenize_text(
            batch.texts[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        text_rows.push_back(model.text().encode(g, ids));
      } else {
        text_rows.push_back(zero);
      }
    }
  out.texts = g.stack_rows(text_rows);
  return out;
}

// Plain-value views for evaluation paths that do not need gradients.
struct VisualEmbedding {
  Tensor pooled;
  Tensor patches;
};

struct TextEmbedding {
  Tensor vector;
};

inline VisualEmbedding encode_image_values(const Model& model, const Tensor& image) {
  Graph g;
  auto enc = model.vision().encode(g, image);
  return {enc.pooled->val, enc.patches->val};
}

inline TextEmbedding encode_text_values(const Model& model, const std::vector<int>& tokens) {
  Graph g;
  return {model.text().encode(g, tokens)->val};
}

}  // namespace makevlp
