#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "makevlp/checkpoint.hpp"
#include "makevlp/corpus.hpp"
#include "makevlp/encoders.hpp"
#include "makevlp/losses.hpp"

namespace makevlp {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 64;
  float learning_rate = 1e-4f;
  int warmup_steps = 100;
  float weight_decay = 0.1f;
  float lambda = 0.7f;
  int k_max = 4;
  uint64_t seed = 0;
  bool drop_last = true;
  bool enable_mkcl_knowledge = true;
  bool enable_mkcl_subtexts = true;
  bool enable_slra = true;
  bool enable_dkw = true;
  bool literal_eq3 = false;
  bool literal_eq5 = false;
  VisionEncoderConfig vision;
  TextEncoderConfig text;

  LossFlags flags() const {
    return {enable_mkcl_knowledge, enable_mkcl_subtexts, enable_slra,
            enable_dkw,            literal_eq3,          literal_eq5};
  }

  void validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (warmup_steps < 1) throw InvalidConfig("warmup_steps must be >= 1");
    if (!(learning_rate > 0.0f)) throw InvalidConfig("learning_rate must be > 0");
    if (weight_decay < 0.0f) throw InvalidConfig("weight_decay must be >= 0");
    if (lambda < 0.0f) throw InvalidConfig("lambda must be >= 0");
    if (k_max < 0) throw InvalidConfig("k_max must be >= 0");
    vision.validate();
    text.validate();
  }
};

struct TrainState {
  std::unique_ptr<Model> model;
  std::map<std::string, Tensor> opt_m, opt_v;
  long long step = 0;
  int epoch = 0;  // completed epochs
  Rng rng{0};
};

struct TrainResult {
  TrainState state;
  std::vector<std::string> metric_lines;      // one JSON object per step
  std::vector<double> epoch_mean_total;       // per-epoch mean of loss_total
};

// ---------------------------------------------------------------------------
// config (de)serialization shared by checkpoints and the CLI

namespace detail {

inline nlohmann::ordered_json train_config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["warmup_steps"] = c.warmup_steps;
  j["weight_decay"] = c.weight_decay;
  j["lambda"] = c.lambda;
  j["k_max"] = c.k_max;
  j["seed"] = c.seed;
  j["drop_last"] = c.drop_last;
  j["enable_mkcl_knowledge"] = c.enable_mkcl_knowledge;
  j["enable_mkcl_subtexts"] = c.enable_mkcl_subtexts;
  j["enable_slra"] = c.enable_slra;
  j["enable_dkw"] = c.enable_dkw;
  j["literal_eq3"] = c.literal_eq3;
  j["literal_eq5"] = c.literal_eq5;
  j["vision.image_size"] = c.vision.image_size;
  j["vision.patch_size"] = c.vision.patch_size;
  j["vision.embed_dim"] = c.vision.embed_dim;
  j["vision.depth"] = c.vision.depth;
  j["vision.heads"] = c.vision.heads;
  j["text.vocab_size"] = c.text.vocab_size;
  j["text.context_length"] = c.text.context_length;
  j["text.embed_dim"] = c.text.embed_dim;
  j["text.depth"] = c.text.depth;
  j["text.heads"] = c.text.heads;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lambda = j.value("lambda", c.lambda);
  c.k_max = j.value("k_max", c.k_max);
  c.seed = j.value("seed", c.seed);
  c.drop_last = j.value("drop_last", c.drop_last);
  c.enable_mkcl_knowledge = j.value("enable_mkcl_knowledge", c.enable_mkcl_knowledge);
  c.enable_mkcl_subtexts = j.value("enable_mkcl_subtexts", c.enable_mkcl_subtexts);
  c.enable_slra = j.value("enable_slra", c.enable_slra);
  c.enable_dkw = j.value("enable_dkw", c.enable_dkw);
  c.literal_eq3 = j.value("literal_eq3", c.literal_eq3);
  c.literal_eq5 = j.value("literal_eq5", c.literal_eq5);
  c.vision.image_size = j.value("vision.image_size", c.vision.image_size);
  c.vision.patch_size = j.value("vision.patch_size", c.vision.patch_size);
  c.vision.embed_dim = j.value("vision.embed_dim", c.vision.embed_dim);
  c.vision.depth = j.value("vision.depth", c.vision.depth);
  c.vision.heads = j.value("vision.heads", c.vision.heads);
  c.text.vocab_size = j.value("text.vocab_size", c.text.vocab_size);
  c.text.context_length = j.value("text.context_length", c.text.context_length);
  c.text.embed_dim = j.value("text.embed_dim", c.text.embed_dim);
  c.text.depth = j.value("text.depth", c.text.depth);
  c.text.heads = j.value("text.heads", c.text.heads);
  return c;
}

}  // namespace detail

inline std::string config_hash(const TrainConfig& cfg) {
  const std::string dump = detail::train_config_json(cfg).dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(dump)));
  return buf;
}

// ---------------------------------------------------------------------------
// checkpoints: model parameters, optimizer moments, rng, counters

inline void save_checkpoint(TrainState& state, const TrainConfig& cfg,
                            const std::filesystem::path& path) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (Param* p : state.model->store().all()) tensors.emplace_back(p->name, &p->value);
  for (Param* p : state.model->store().all()) {
    auto mi = state.opt_m.find(p->name);
    if (mi != state.opt_m.end()) tensors.emplace_back("opt.m." + p->name, &mi->second);
    auto vi = state.opt_v.find(p->name);
    if (vi != state.opt_v.end()) tensors.emplace_back("opt.v." + p->name, &vi->second);
  }
  nlohmann::ordered_json meta;
  meta["kind"] = "train_state";
  meta["step"] = state.step;
  meta["epoch"] = state.epoch;
  meta["rng"] = state.rng.state_string();
  meta["config"] = detail::train_config_json(cfg);
  meta["config_hash"] = config_hash(cfg);
  save_tensor_file(path, tensors, meta);
}

struct LoadedCheckpoint {
  TrainState state;
  TrainConfig config;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  LoadedTensorFile file = load_tensor_file(path);
  if (file.meta.value("kind", "") != "train_state")
    throw VersionMismatch("not a trainer checkpoint: " + path.string());
  LoadedCheckpoint out;
  out.config = detail::train_config_from_json(file.meta.at("config"));
  out.state.step = file.meta.value("step", 0LL);
  out.state.epoch = file.meta.value("epoch", 0);
  out.state.rng = Rng::from_state_string(file.meta.value("rng", "0"));
  out.state.model =
      std::make_unique<Model>(out.config.vision, out.config.text, out.config.seed);
  for (Param* p : out.state.model->store().all()) {
    auto it = file.tensors.find(p->name);
    if (it == file.tensors.end())
      throw CompatError("checkpoint missing tensor: " + p->name);
    if (it->second.shape != p->value.shape)
      throw CompatError("checkpoint tensor shape mismatch: " + p->name);
    p->value = it->second;
    auto mi = file.tensors.find("opt.m." + p->name);
    if (mi != file.tensors.end()) out.state.opt_m[p->name] = mi->second;
    auto vi = file.tensors.find("opt.v." + p->name);
    if (vi != file.tensors.end()) out.state.opt_v[p->name] = vi->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// the training loop

namespace detail {

inline constexpr float kAdamBeta1 = 0.9f;
inline constexpr float kAdamBeta2 = 0.999f;
inline constexpr float kAdamEps = 1e-8f;

inline void adamw_step(TrainState& state, const TrainConfig& cfg, float lr) {
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta1, t)));
  const float bc2 = static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta2, t)));
  for (Param* p : state.model->store().all()) {
    Tensor& m = state.opt_m.try_emplace(p->name, Tensor::zeros(p->value.shape)).first->second;
    Tensor& v = state.opt_v.try_emplace(p->name, Tensor::zeros(p->value.shape)).first->second;
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const float g = p->grad.v[i];
      m.v[i] = kAdamBeta1 * m.v[i] + (1.0f - kAdamBeta1) * g;
      v.v[i] = kAdamBeta2 * v.v[i] + (1.0f - kAdamBeta2) * g * g;
      const float mhat = m.v[i] * bc1;
      const float vhat = v.v[i] * bc2;
      float upd = mhat / (std::sqrt(vhat) + kAdamEps);
      if (p->decay) upd += cfg.weight_decay * p->value.v[i];
      p->value.v[i] -= lr * upd;
    }
  }
  // keep the temperature inside its clamp range after every update
  Param& lt = state.model->log_tau();
  lt.value.v[0] = std::min(std::max(lt.value.v[0], std::log(kTauMin)), std::log(kTauMax));
}

inline std::string step_metrics_line(long long step, int epoch, const LossBreakdownNodes& loss,
                                     bool log_slra, float tau, float lr) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["loss_total"] = loss.total->val.v[0];
  j["loss_mkcl_i2t"] = loss.mkcl_i2t->val.v[0];
  j["loss_mkcl_t2i"] = loss.mkcl_t2i->val.v[0];
  if (log_slra) j["loss_slra"] = loss.slra->val.v[0];
  j["tau"] = tau;
  j["lr"] = lr;
  return j.dump();
}

}  // namespace detail

// Deterministic end-to-end optimization: seeded shuffling, drop-last
// batching, linear warmup into a constant rate, decoupled weight decay.
// Pass a state loaded from a checkpoint to resume; training continues
// exactly as if it had never stopped.
inline TrainResult train(const CorpusManifest& manifest, const ImageStore& images,
                         const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         std::optional<TrainState> resume = std::nullopt) {
  cfg.validate();
  const int n_records = static_cast<int>(manifest.records.size());
  if (cfg.drop_last && n_records < cfg.batch_size)
    throw InsufficientData("manifest has " + std::to_string(n_records) +
                           " records, need at least batch_size=" +
                           std::to_string(cfg.batch_size) + " with drop_last");

  TrainResult result;
  if (resume) {
    result.state = std::move(*resume);
  } else {
    result.state.model = std::make_unique<Model>(cfg.vision, cfg.text, cfg.seed);
    result.state.rng = Rng(cfg.seed ^ 0x747261696eULL);
  }
  TrainState& state = result.state;

  if (out_dir) std::filesystem::create_directories(*out_dir);

  std::vector<int> order(static_cast<size_t>(n_records));

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    // identity base each epoch: a resumed run shuffles the same sequence the
    // uninterrupted run would
    for (int i = 0; i < n_records; ++i) order[static_cast<size_t>(i)] = i;
    state.rng.shuffle(order);
    double epoch_total = 0.0;
    int epoch_steps = 0;
    const int n_batches =
        cfg.drop_last ? n_records / cfg.batch_size
                      : (n_records + cfg.batch_size - 1) / cfg.batch_size;
    for (int bi = 0; bi < n_batches; ++bi) {
      const int lo = bi * cfg.batch_size;
      const int hi = std::min(n_records, lo + cfg.batch_size);
      std::vector<EnhancedRecord> recs;
      for (int i = lo; i < hi; ++i)
        recs.push_back(manifest.records[static_cast<size_t>(order[static_cast<size_t>(i)])]);

      Graph g;
      auto embedded = encode_batch(g, *state.model, build_batch(recs, cfg.k_max, images));
      LossParams lp;
      lp.log_tau = &state.model->log_tau();
      lp.lambda = cfg.lambda;
      lp.flags = cfg.flags();
      LossBreakdownNodes loss = total_loss(g, embedded, lp);

      const float total_val = loss.total->val.v[0];
      if (!std::isfinite(total_val)) {
        std::string idx;
        for (int i = lo; i < hi; ++i)
          idx += (idx.empty() ? "" : ",") +
                 std::to_string(order[static_cast<size_t>(i)]);
        throw NonFiniteLoss(state.step + 1, "record indices [" + idx + "]");
      }

      state.model->store().zero_grads();
      g.backward(loss.total);
      g.add_param_grads();

      ++state.step;
      const float lr =
          cfg.learning_rate *
          std::min(1.0f, static_cast<float>(state.step) / static_cast<float>(cfg.warmup_steps));
      const float tau = state.model->tau();
      detail::adamw_step(state, cfg, lr);

      result.metric_lines.push_back(
          detail::step_metrics_line(state.step, epoch, loss, cfg.enable_slra, tau, lr));
      epoch_total += total_val;
      ++epoch_steps;
    }
    state.epoch = epoch + 1;
    result.epoch_mean_total.push_back(epoch_steps ? epoch_total / epoch_steps : 0.0);
    if (out_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", state.epoch);
      save_checkpoint(state, cfg, *out_dir / name);
    }
  }
  if (out_dir) save_checkpoint(state, cfg, *out_dir / "final.ckpt");
  return result;
}

}  // namespace makevlp
