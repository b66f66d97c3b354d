#pragma once

// GAN objective, Adam, and the alternating training loop: one spectral-
// normalized discriminator step and one generator step per iteration,
// batch 64, Adam(2e-4, 0.5, 0.999), metrics as line-delimited JSON,
// resumable checkpoints.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adagan/checkpoint.hpp"
#include "adagan/data.hpp"
#include "adagan/models.hpp"

namespace adagan {

// ---- losses -----------------------------------------------------------------

enum class GanLossKind { kNonSaturating, kMinimax };

inline const char* gan_loss_name(GanLossKind k) {
  return k == GanLossKind::kNonSaturating ? "non-saturating" : "minimax";
}

inline GanLossKind parse_gan_loss(const std::string& s) {
  if (s == "non-saturating" || s == "nonsat") return GanLossKind::kNonSaturating;
  if (s == "minimax") return GanLossKind::kMinimax;
  throw ConfigError("unknown generator loss '" + s + "' (expected non-saturating|minimax)");
}

// loss_D = E softplus(-d_real) + E softplus(d_fake), the logit form of
// -E log D(x) - E log(1 - D(G(z))). Stable for |logit| up to ~80.
inline Var discriminator_loss(Tape& tape, Var d_real_logits, Var d_fake_logits) {
  Var real_term = ops::mean(tape, ops::softplus(tape, ops::neg(tape, d_real_logits)));
  Var fake_term = ops::mean(tape, ops::softplus(tape, d_fake_logits));
  return ops::add(tape, real_term, fake_term);
}

// Non-saturating: E softplus(-d_fake). Minimax (the literal objective):
// -E softplus(d_fake), i.e. the negated fake term of loss_D.
inline Var generator_loss(Tape& tape, Var d_fake_logits, GanLossKind kind) {
  if (kind == GanLossKind::kNonSaturating) {
    return ops::mean(tape, ops::softplus(tape, ops::neg(tape, d_fake_logits)));
  }
  return ops::neg(tape, ops::mean(tape, ops::softplus(tape, d_fake_logits)));
}

// ---- Adam ---------------------------------------------------------------------

struct AdamConfig {
  float alpha = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {}) : cfg_(cfg), params_(std::move(params)) {
    for (Param* p : params_) {
      slots_[p] = {Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())};
    }
  }

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }
  const AdamConfig& config() const { return cfg_; }

  Tensor* moment1(Param* p) { return &slots_.at(p).first; }
  Tensor* moment2(Param* p) { return &slots_.at(p).second; }
  const std::vector<Param*>& params() const { return params_; }

  // Applies one update from the tape gradients in `bindings`. Registered
  // params without a gradient decay their moments against a zero gradient.
  // Non-finite gradients raise DivergenceError.
  void step(Tape& tape, const Bindings& bindings) {
    ++step_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
    std::unordered_map<Param*, Var> bound;
    for (const auto& [param, var] : bindings) bound[param] = var;
    for (Param* p : params_) {
      auto& [m, v] = slots_.at(p);
      const Tensor* grad = nullptr;
      auto it = bound.find(p);
      if (it != bound.end() && tape.has_grad(it->second)) grad = &tape.grad(it->second);
      float* pv = p->value.data();
      float* mp = m.data();
      float* vp = v.data();
      const int64_t n = p->value.size();
      for (int64_t i = 0; i < n; ++i) {
        const float g = grad ? (*grad)[i] : 0.0f;
        if (!std::isfinite(g)) {
          throw DivergenceError("non-finite gradient in parameter '" + p->name + "'");
        }
        mp[i] = cfg_.beta1 * mp[i] + (1.0f - cfg_.beta1) * g;
        vp[i] = cfg_.beta2 * vp[i] + (1.0f - cfg_.beta2) * g * g;
        const float m_hat = mp[i] / bc1;
        const float v_hat = vp[i] / bc2;
        pv[i] -= cfg_.alpha * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Param*> params_;
  int64_t step_ = 0;
  std::unordered_map<Param*, std::pair<Tensor, Tensor>> slots_;
};

// ---- metrics ------------------------------------------------------------------

struct MetricsRecord {
  int64_t iteration = 0;
  float loss_d = 0.0f;
  float loss_g = 0.0f;
  float d_acc_real = 0.0f;
  float d_acc_fake = 0.0f;
  float grad_norm_d = 0.0f;
  float grad_norm_g = 0.0f;
  int64_t wall_ms = 0;

  std::string to_json_line() const {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["loss_D"] = loss_d;
    j["loss_G"] = loss_g;
    j["d_acc_real"] = d_acc_real;
    j["d_acc_fake"] = d_acc_fake;
    j["grad_norm_D"] = grad_norm_d;
    j["grad_norm_G"] = grad_norm_g;
    j["wall_ms"] = wall_ms;
    return j.dump();
  }
};

// ---- training loop --------------------------------------------------------------

struct TrainConfig {
  int64_t batch_size = 64;
  int d_steps_per_g_step = 1;
  int64_t total_iterations = 1000;
  uint64_t seed = 0;
  int64_t log_every = 500;
  int64_t snapshot_every = 500;
  std::string out_dir;
  GanLossKind g_loss = GanLossKind::kNonSaturating;
  AdamConfig adam;
  // Carried into every checkpoint (profile, dataset recipe, ...).
  std::vector<std::pair<std::string, std::string>> extra_meta;

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (d_steps_per_g_step != 1) {
      throw ConfigError("d_steps_per_g_step is fixed to 1 in this artifact");
    }
    if (total_iterations < 1) throw ConfigError("total_iterations must be >= 1");
    if (log_every < 1 || snapshot_every < 1) throw ConfigError("cadences must be >= 1");
  }
};

struct TrainResult {
  int64_t iterations = 0;
  int64_t d_updates = 0;
  int64_t g_updates = 0;
  std::string last_checkpoint;
  std::string metrics_path;
};

// Copy named tensors from a checkpoint into model params and buffers
// (used by eval tooling that only needs the generator).
inline void restore_model_tensors(const Checkpoint& ck, const std::vector<Param*>& params,
                                  const std::vector<std::pair<std::string, Tensor*>>& buffers) {
  auto restore_one = [&](const std::string& name, Tensor* dst) {
    const Tensor* src = ck.find(name);
    if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (!src->same_shape(*dst)) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                        ", expected " + shape_str(dst->shape()));
    }
    *dst = *src;
  };
  for (Param* p : params) restore_one(p->name, &p->value);
  for (const auto& [name, t] : buffers) restore_one(name, t);
}

class GanTrainer {
 public:
  using SnapshotHook = std::function<void(int64_t iteration, const std::string& checkpoint_path)>;

  GanTrainer(Generator& g, Discriminator& d, const Dataset& dataset, TrainConfig cfg,
             std::string arch_name)
      : g_(g),
        d_(d),
        dataset_(dataset),
        cfg_(std::move(cfg)),
        arch_(std::move(arch_name)),
        rng_z_(Rng(cfg_.seed).split(1)),
        batches_(&dataset, static_cast<int>(cfg_.batch_size), Rng(cfg_.seed).split(2).state()),
        opt_d_(d.params(), cfg_.adam),
        opt_g_(g.params(), cfg_.adam) {
    cfg_.validate();
    if (dataset_.side() != g_.spec().output_side()) {
      throw ConfigError("dataset side " + std::to_string(dataset_.side()) +
                        " does not match generator output " +
                        std::to_string(g_.spec().output_side()));
    }
    float lo = 0.0f, hi = 0.0f;
    for (int64_t i = 0; i < dataset_.images.size(); ++i) {
      lo = std::min(lo, dataset_.images[i]);
      hi = std::max(hi, dataset_.images[i]);
    }
    if (lo < -1.0f || hi > 1.0f) {
      throw ContractError("dataset values must lie in [-1,1] to match the Tanh output");
    }
  }

  void set_snapshot_hook(SnapshotHook hook) { snapshot_hook_ = std::move(hook); }

  // Restore params, optimizer moments, RNG streams, and the data cursor.
  void restore(const Checkpoint& ck) {
    if (ck.arch != arch_) {
      throw ConfigError("checkpoint architecture '" + ck.arch + "' does not match '" + arch_ +
                        "'");
    }
    auto restore_tensor = [&](const std::string& name, Tensor* dst) {
      const Tensor* src = ck.find(name);
      if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'");
      if (!src->same_shape(*dst)) {
        throw FormatError("checkpoint tensor '" + name + "' has shape " +
                          shape_str(src->shape()) + ", expected " + shape_str(dst->shape()));
      }
      *dst = *src;
    };
    for (Param* p : g_.params()) restore_tensor(p->name, &p->value);
    for (Param* p : d_.params()) restore_tensor(p->name, &p->value);
    for (auto& [name, t] : g_.buffers()) restore_tensor(name, t);
    for (auto& [name, t] : d_.buffers()) restore_tensor(name, t);
    for (Param* p : opt_g_.params()) {
      restore_tensor("adam_g." + p->name + ".m", opt_g_.moment1(p));
      restore_tensor("adam_g." + p->name + ".v", opt_g_.moment2(p));
    }
    for (Param* p : opt_d_.params()) {
      restore_tensor("adam_d." + p->name + ".m", opt_d_.moment1(p));
      restore_tensor("adam_d." + p->name + ".v", opt_d_.moment2(p));
    }
    auto meta_u64 = [&](const std::string& key) {
      auto v = ck.get_meta(key);
      if (!v) throw FormatError("checkpoint is missing meta '" + key + "'");
      return std::stoull(*v);
    };
    iteration_ = static_cast<int64_t>(meta_u64("iteration"));
    d_updates_ = static_cast<int64_t>(meta_u64("d_updates"));
    g_updates_ = static_cast<int64_t>(meta_u64("g_updates"));
    opt_d_.set_step_count(static_cast<int64_t>(meta_u64("adam_d.step")));
    opt_g_.set_step_count(static_cast<int64_t>(meta_u64("adam_g.step")));
    rng_z_.set_state(meta_u64("rng_z.state"));
    batches_.restore(static_cast<int64_t>(meta_u64("data.epoch")),
                     static_cast<int64_t>(meta_u64("data.cursor")));
  }

  Checkpoint snapshot() {
    Checkpoint ck;
    ck.arch = arch_;
    ck.set_meta("iteration", std::to_string(iteration_));
    ck.set_meta("d_updates", std::to_string(d_updates_));
    ck.set_meta("g_updates", std::to_string(g_updates_));
    ck.set_meta("adam_d.step", std::to_string(opt_d_.step_count()));
    ck.set_meta("adam_g.step", std::to_string(opt_g_.step_count()));
    ck.set_meta("rng_z.state", std::to_string(rng_z_.state()));
    ck.set_meta("data.epoch", std::to_string(batches_.epoch()));
    ck.set_meta("data.cursor", std::to_string(batches_.cursor()));
    ck.set_meta("seed", std::to_string(cfg_.seed));
    ck.set_meta("dataset", dataset_.name);
    for (const auto& [k, v] : cfg_.extra_meta) ck.set_meta(k, v);
    for (Param* p : g_.params()) ck.tensors.emplace_back(p->name, p->value);
    for (Param* p : d_.params()) ck.tensors.emplace_back(p->name, p->value);
    for (auto& [name, t] : g_.buffers()) ck.tensors.emplace_back(name, *t);
    for (auto& [name, t] : d_.buffers()) ck.tensors.emplace_back(name, *t);
    for (Param* p : opt_g_.params()) {
      ck.tensors.emplace_back("adam_g." + p->name + ".m", *opt_g_.moment1(p));
      ck.tensors.emplace_back("adam_g." + p->name + ".v", *opt_g_.moment2(p));
    }
    for (Param* p : opt_d_.params()) {
      ck.tensors.emplace_back("adam_d." + p->name + ".m", *opt_d_.moment1(p));
      ck.tensors.emplace_back("adam_d." + p->name + ".v", *opt_d_.moment2(p));
    }
    return ck;
  }

  int64_t iteration() const { return iteration_; }

  // Runs from the current iteration to cfg.total_iterations. Divergence
  // aborts with DivergenceError; the last snapshot stays on disk.
  TrainResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.out_dir);
    const std::string metrics_path = cfg_.out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path, iteration_ == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot open '" + metrics_path + "'");
    const auto t0 = std::chrono::steady_clock::now();
    std::string last_ck;

    while (iteration_ < cfg_.total_iterations) {
      ++iteration_;
      MetricsRecord rec;
      rec.iteration = iteration_;

      // --- discriminator step: real batch + detached fake batch ---
      {
        Tape tape;
        Tensor real = batches_.next();
        Var real_v = tape.leaf(std::move(real));
        Var z = tape.leaf(sample_gaussian(rng_z_, {cfg_.batch_size, g_.spec().latent_dim}));
        Var fake = g_.forward(tape, z, Mode::kTrain);
        Var fake_sg = ops::stop_gradient(tape, fake);
        Bindings d_bind;
        Var both = ops::concat0(tape, real_v, fake_sg);
        Var logits = d_.forward(tape, both, /*update_u=*/true, &d_bind);
        if (d_.any_degenerate_sigma()) {
          std::fprintf(stderr, "[adagan] iteration %lld: spectral norm hit the zero-weight clamp\n",
                       static_cast<long long>(iteration_));
        }
        Var real_logits = ops::slice0(tape, logits, 0, cfg_.batch_size);
        Var fake_logits = ops::slice0(tape, logits, cfg_.batch_size, 2 * cfg_.batch_size);
        check_finite(tape.value(logits), "discriminator logits");
        Var loss = discriminator_loss(tape, real_logits, fake_logits);
        rec.loss_d = tape.value(loss)[0];
        check_finite(tape.value(loss), "loss_D");
        rec.d_acc_real = accuracy(tape.value(real_logits), /*positive=*/true);
        rec.d_acc_fake = accuracy(tape.value(fake_logits), /*positive=*/false);
        tape.backward(loss);
        rec.grad_norm_d = grad_norm(tape, d_bind);
        opt_d_.step(tape, d_bind);
        ++d_updates_;
      }

      // --- generator step: fresh latent batch ---
      {
        Tape tape;
        Var z = tape.leaf(sample_gaussian(rng_z_, {cfg_.batch_size, g_.spec().latent_dim}));
        Bindings g_bind;
        Var fake = g_.forward(tape, z, Mode::kTrain, &g_bind);
        Var logits = d_.forward(tape, fake, /*update_u=*/true);
        check_finite(tape.value(logits), "discriminator logits (G step)");
        Var loss = generator_loss(tape, logits, cfg_.g_loss);
        rec.loss_g = tape.value(loss)[0];
        check_finite(tape.value(loss), "loss_G");
        tape.backward(loss);
        rec.grad_norm_g = grad_norm(tape, g_bind);
        opt_g_.step(tape, g_bind);
        ++g_updates_;
      }

      if (iteration_ % cfg_.log_every == 0 || iteration_ == cfg_.total_iterations) {
        rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        metrics << rec.to_json_line() << '\n';
        metrics.flush();
      }
      if (iteration_ % cfg_.snapshot_every == 0 || iteration_ == cfg_.total_iterations) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoint_%08lld.bin",
                      static_cast<long long>(iteration_));
        last_ck = cfg_.out_dir + name;
        save_checkpoint(last_ck, snapshot());
        if (snapshot_hook_) snapshot_hook_(iteration_, last_ck);
      }
    }

    TrainResult result;
    result.iterations = iteration_;
    result.d_updates = d_updates_;
    result.g_updates = g_updates_;
    result.last_checkpoint = last_ck;
    result.metrics_path = metrics_path;
    return result;
  }

 private:
  void check_finite(const Tensor& t, const char* what) const {
    for (int64_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i])) {
        throw DivergenceError(std::string(what) + " became non-finite at iteration " +
                              std::to_string(iteration_));
      }
    }
  }

  static float accuracy(const Tensor& logits, bool positive) {
    int64_t hit = 0;
    for (int64_t i = 0; i < logits.size(); ++i) {
      hit += positive ? (logits[i] > 0.0f) : (logits[i] < 0.0f);
    }
    return static_cast<float>(hit) / static_cast<float>(logits.size());
  }

  static float grad_norm(Tape& tape, const Bindings& bindings) {
    double s = 0.0;
    for (const auto& [param, var] : bindings) {
      if (!tape.has_grad(var)) continue;
      const Tensor& g = tape.grad(var);
      for (int64_t i = 0; i < g.size(); ++i) s += static_cast<double>(g[i]) * g[i];
    }
    return static_cast<float>(std::sqrt(s));
  }

  Generator& g_;
  Discriminator& d_;
  const Dataset& dataset_;
  TrainConfig cfg_;
  std::string arch_;
  Rng rng_z_;
  BatchIterator batches_;
  Adam opt_d_;
  Adam opt_g_;
  SnapshotHook snapshot_hook_;
  int64_t iteration_ = 0;
  int64_t d_updates_ = 0;
  int64_t g_updates_ = 0;
};

}  // namespace adagan
