#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tridiff/data/clevr.hpp"
#include "tridiff/diffusion/schedule.hpp"
#include "tridiff/model/checkpoint.hpp"
#include "tridiff/model/denoiser.hpp"
#include "tridiff/util/rng.hpp"

namespace tridiff {

using diffusion::build_cosine_schedule;
using diffusion::NoiseSchedule;
using diffusion::q_sample;

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class S>
struct Adam {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<std::vector<S>> m, v;  // aligned with the parameter list

  // params[k] -= lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments.
  void step(NamedParams<S>& params, const std::vector<std::vector<S>>& grads) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient count does not match parameters");
    if (m.empty()) {
      for (const auto& [_, p] : params) {
        m.emplace_back(p.vec().size(), S(0));
        v.emplace_back(p.vec().size(), S(0));
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].second.mutable_data();
      const auto& g = grads[k];
      if (g.size() != w.size()) throw std::invalid_argument("adam: gradient size mismatch for " + params[k].first);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) + cfg.weight_decay * w[i];
        m[k][i] = static_cast<S>(cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * gi);
        v[k][i] = static_cast<S>(cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * gi * gi);
        const double mh = m[k][i] / c1, vh = v[k][i] / c2;
        w[i] = static_cast<S>(w[i] - cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
      }
    }
  }

  std::vector<NamedArray<S>> export_state(const NamedParams<S>& params) const {
    std::vector<NamedArray<S>> out;
    out.push_back({"adam.t", {1}, {static_cast<S>(t)}});
    if (m.empty()) return out;
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.push_back({"adam.m." + params[k].first, params[k].second.shape(), m[k]});
      out.push_back({"adam.v." + params[k].first, params[k].second.shape(), v[k]});
    }
    return out;
  }

  template <class Lookup>
  void import_state(const NamedParams<S>& params, Lookup&& find) {
    const auto* steps = find("adam.t");
    if (!steps) throw IoError("checkpoint has no optimizer state");
    t = static_cast<std::int64_t>(std::llround(static_cast<double>(steps->data.at(0))));
    m.clear();
    v.clear();
    if (t == 0) return;
    for (const auto& [name, p] : params) {
      const auto* mm = find("adam.m." + name);
      const auto* vv = find("adam.v." + name);
      if (!mm || !vv || mm->data.size() != p.vec().size() || vv->data.size() != p.vec().size())
        throw IoError("checkpoint optimizer state missing or mismatched for " + name);
      m.push_back(mm->data);
      v.push_back(vv->data);
    }
  }
};

// ---------------------------------------------------------------------------
// Losses

template <class S>
ad::Tensor<S> l1_loss(const ad::Tensor<S>& a, const ad::Tensor<S>& b) {
  return ad::mean(ad::abs(ad::sub(a, b)));
}

// mean |g(q_sample(x0, t, eps), t, v) - x0|. `out` receives the denoiser output.
template <class S>
ad::Tensor<S> denoise_loss(const DenoiseFn<S>& g, const ad::Tensor<S>& x0, const Camera& view, int t,
                           std::type_identity_t<std::span<const S>> eps, const NoiseSchedule& sched, std::uint64_t seed,
                           Denoised<S>* out = nullptr) {
  sched.check_step(t, 1, "denoise_loss");
  const ad::Tensor<S> xt(x0.shape(), q_sample<S>(x0.data(), t, eps, sched));
  auto d = g(xt, t, view, seed);
  auto loss = l1_loss(d.image, x0.detach());
  if (out) *out = std::move(d);
  return loss;
}

template <class S>
ad::Tensor<S> denoise_loss(const DenoiserParams<S>& params, const ad::Tensor<S>& x0, const Camera& view, int t,
                           std::type_identity_t<std::span<const S>> eps, const NoiseSchedule& sched, std::uint64_t seed,
                           SamplePlan* plan = nullptr, Denoised<S>* out = nullptr) {
  const DenoiseFn<S> g = [&](const ad::Tensor<S>& xt, int tt, const Camera& v, std::uint64_t s) {
    return denoise(params, xt, tt, v, s, plan);
  };
  return denoise_loss(g, x0, view, t, eps, sched, seed, out);
}

// Renders `planes` from v_r, noises the render to level t and asks `inner` to
// recover it. Gradient reaches the planes through the render only; the inner
// evaluation runs without a tape.
template <class S>
ad::Tensor<S> score_distillation_loss(const DenoiserParams<S>& params, const DenoiseFn<S>& inner,
                                      const Triplane<S>& planes, const Camera& view_r, int t, std::type_identity_t<std::span<const S>> eps,
                                      const NoiseSchedule& sched, std::uint64_t seed) {
  sched.check_step(t, 0, "score_distillation_loss");
  const auto rendered = render_triplane(params, planes, view_r, params.cfg.render, derive_seed(seed, {0})).image;
  ad::Tensor<S> target;
  {
    ad::NoGradScope<S> no_grad;
    const ad::Tensor<S> noisy(rendered.shape(), q_sample<S>(rendered.data(), t, eps, sched));
    target = inner(noisy, t, view_r, derive_seed(seed, {1})).image.detach();
  }
  return l1_loss(rendered, target);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int batch = 4;
  std::int64_t steps = 2000;
  AdamConfig adam;
  double lambda_sd = 0.1;
  double rho_sd = 0.5;
  bool score_distillation = false;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 500;
  double ema_decay = 0.0;  // parameter EMA; 0 disables it
  int workers = 1;
  bool deterministic = true;  // omit wall-clock fields from logs

  void validate() const {
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (!(adam.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
    if (!(lambda_sd >= 0.0)) throw std::invalid_argument("train: lambda_sd must be >= 0");
    if (!(rho_sd >= 0.0 && rho_sd <= 1.0)) throw std::invalid_argument("train: rho_sd must be in [0, 1]");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint cadence must be >= 0");
    if (workers < 1) throw std::invalid_argument("train: workers must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("train: ema_decay must be in [0, 1)");
  }
};

template <class S>
struct TrainingExample {
  ad::Tensor<S> x0;  // [M, M, 3] in [-1, 1]
  Camera camera;
  int scene = 0, view = 0;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based index of the completed step
  double denoise_loss = 0.0;
  double sd_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Independent copy of every parameter, same names and values.
template <class S>
DenoiserParams<S> clone_params(const DenoiserParams<S>& src) {
  auto out = init_denoiser<S>(src.cfg, 0);
  auto from = src.named();
  auto to = out.named();
  for (std::size_t k = 0; k < from.size(); ++k) {
    auto d = to[k].second.mutable_data();
    std::copy(from[k].second.vec().begin(), from[k].second.vec().end(), d.begin());
  }
  return out;
}

template <class S>
class Trainer {
 public:
  Trainer(DenoiserParams<S> params, ScheduleConfig schedule, TrainConfig cfg, std::vector<TrainingExample<S>> data)
      : params_(std::move(params)),
        schedule_cfg_(schedule),
        sched_(build_cosine_schedule(schedule.steps, schedule.offset)),
        cfg_(cfg),
        data_(std::move(data)) {
    cfg_.validate();
    schedule_cfg_.validate();
    if (data_.empty()) throw std::invalid_argument("train: no training examples");
    adam_.cfg = cfg_.adam;
    named_ = params_.named();
  }

  std::int64_t step_index() const { return step_; }
  const DenoiserParams<S>& params() const { return params_; }
  DenoiserParams<S>& params() { return params_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const TrainConfig& config() const { return cfg_; }
  const Adam<S>& optimizer() const { return adam_; }

  // Everything random in step k derives from (seed, k, element), so a resumed
  // run replays the same draws as an uninterrupted one.
  StepRecord step() {
    const auto start = std::chrono::steady_clock::now();
    const int B = cfg_.batch;
    std::vector<ElementResult> results(static_cast<std::size_t>(B));
    const int workers = std::min(cfg_.workers, B);
    if (workers <= 1) {
      for (int b = 0; b < B; ++b) results[b] = run_element(params_, b);
    } else {
      if (replicas_.size() != static_cast<std::size_t>(workers - 1))
        for (int w = static_cast<int>(replicas_.size()); w < workers - 1; ++w) replicas_.push_back(clone_params(params_));
      for (auto& r : replicas_) sync_replica(r);
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          DenoiserParams<S>& p = w == 0 ? params_ : replicas_[w - 1];
          for (int b = w; b < B; b += workers) results[b] = run_element(p, b);
        });
      for (auto& th : pool) th.join();
      for (const auto& r : results)
        if (r.error) std::rethrow_exception(r.error);
    }

    StepRecord rec;
    rec.step = step_ + 1;
    std::vector<std::vector<S>> grads;
    for (const auto& [_, p] : named_) grads.emplace_back(p.vec().size(), S(0));
    for (const auto& r : results) {  // fixed element order
      if (r.error) std::rethrow_exception(r.error);
      rec.denoise_loss += r.denoise_loss / B;
      rec.sd_loss += r.sd_loss / B;
      for (std::size_t k = 0; k < grads.size(); ++k)
        for (std::size_t i = 0; i < grads[k].size(); ++i) grads[k][i] += r.grads[k][i];
    }
    if (!std::isfinite(rec.denoise_loss) || !std::isfinite(rec.sd_loss))
      throw NonFiniteLoss("train: non-finite loss at step " + std::to_string(rec.step));
    adam_.step(named_, grads);
    if (cfg_.ema_decay > 0.0) update_ema();
    ++step_;
    rec.lr = cfg_.adam.lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

  nlohmann::json state_meta() const {
    return {{"step", step_},
            {"seed", cfg_.seed},
            {"batch", cfg_.batch},
            {"lr", cfg_.adam.lr},
            {"beta1", cfg_.adam.beta1},
            {"beta2", cfg_.adam.beta2},
            {"lambda_sd", cfg_.lambda_sd},
            {"rho_sd", cfg_.rho_sd},
            {"score_distillation", cfg_.score_distillation},
            {"ema_decay", cfg_.ema_decay}};
  }

  // Shadow weights aligned with params().named(); empty until the first step
  // with EMA enabled.
  const std::vector<std::vector<S>>& ema() const { return ema_; }

  void save(const std::filesystem::path& path) const {
    auto extra = adam_.export_state(named_);
    for (std::size_t k = 0; k < ema_.size(); ++k)
      extra.push_back({"ema." + named_[k].first, named_[k].second.shape(), ema_[k]});
    save_checkpoint(path, params_, schedule_cfg_, state_meta(), extra);
  }

  // Restores parameters, optimizer moments and the step counter.
  void restore(const Checkpoint<S>& ck) {
    if (model_config_to_json(ck.model) != model_config_to_json(params_.cfg))
      throw std::invalid_argument("resume: checkpoint model config differs from the run config");
    auto src = ck.params.named();
    for (std::size_t k = 0; k < named_.size(); ++k) {
      auto d = named_[k].second.mutable_data();
      std::copy(src[k].second.vec().begin(), src[k].second.vec().end(), d.begin());
    }
    adam_.import_state(named_, [&](const std::string& n) { return ck.find_extra(n); });
    ema_.clear();
    if (cfg_.ema_decay > 0.0) {
      for (const auto& [name, p] : named_) {
        const auto* e = ck.find_extra("ema." + name);
        if (!e || e->data.size() != p.vec().size()) {
          ema_.clear();  // restart the average from the restored weights
          break;
        }
        ema_.push_back(e->data);
      }
    }
    step_ = ck.meta.at("step").template get<std::int64_t>();
  }

 private:
  struct ElementResult {
    double denoise_loss = 0.0, sd_loss = 0.0;
    std::vector<std::vector<S>> grads;
    std::exception_ptr error;
  };

  void update_ema() {
    if (ema_.empty()) {
      for (const auto& [_, p] : named_) ema_.push_back(p.vec());
      return;
    }
    const double d = cfg_.ema_decay;
    for (std::size_t k = 0; k < ema_.size(); ++k) {
      const auto& w = named_[k].second.vec();
      for (std::size_t i = 0; i < w.size(); ++i) ema_[k][i] = static_cast<S>(d * ema_[k][i] + (1.0 - d) * w[i]);
    }
  }

  void sync_replica(DenoiserParams<S>& r) const {
    auto to = r.named();
    for (std::size_t k = 0; k < named_.size(); ++k) {
      auto d = to[k].second.mutable_data();
      std::copy(named_[k].second.vec().begin(), named_[k].second.vec().end(), d.begin());
    }
  }

  ElementResult run_element(DenoiserParams<S>& p, int b) const {
    ElementResult res;
    try {
      const std::uint64_t seed = derive_seed(cfg_.seed, {static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(b)});
      std::mt19937_64 rng(seed);
      const auto& ex = data_[std::uniform_int_distribution<std::size_t>(0, data_.size() - 1)(rng)];
      const int t = std::uniform_int_distribution<int>(1, sched_.steps)(rng);
      const auto eps = standard_normal<S>(rng, static_cast<std::size_t>(ex.x0.numel()));
      const bool use_sd = cfg_.score_distillation && cfg_.lambda_sd > 0.0 &&
                          std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg_.rho_sd;
      const auto& view_r = data_[std::uniform_int_distribution<std::size_t>(0, data_.size() - 1)(rng)].camera;
      const auto eps_r = standard_normal<S>(rng, static_cast<std::size_t>(ex.x0.numel()));

      auto named = p.named();
      for (auto& [_, t_] : named) t_.zero_grad();
      {
        ad::Tape<S> tape;
        ad::TapeScope<S> scope(tape);
        Denoised<S> out;
        auto loss = denoise_loss(p, ex.x0, ex.camera, t, eps, sched_, derive_seed(seed, {0}), nullptr, &out);
        res.denoise_loss = static_cast<double>(loss.item());
        if (use_sd) {
          const auto sd = score_distillation_loss(p, model_denoiser(p), out.triplane, view_r, t, eps_r, sched_,
                                                  derive_seed(seed, {1}));
          res.sd_loss = static_cast<double>(sd.item());
          loss = ad::add(loss, ad::mul_scalar(sd, static_cast<S>(cfg_.lambda_sd)));
        }
        tape.backward(ad::mul_scalar(loss, static_cast<S>(1.0 / cfg_.batch)));
      }
      for (auto& [_, t_] : named) {
        res.grads.push_back(t_.grad_or_zeros());
        t_.zero_grad();
      }
    } catch (const ad::NumericError& e) {
      res.error = std::make_exception_ptr(
          NonFiniteLoss("train: non-finite value at step " + std::to_string(step_ + 1) + ": " + e.what()));
    } catch (...) {
      res.error = std::current_exception();
    }
    return res;
  }

  DenoiserParams<S> params_;
  ScheduleConfig schedule_cfg_;
  NoiseSchedule sched_;
  TrainConfig cfg_;
  std::vector<TrainingExample<S>> data_;
  NamedParams<S> named_;
  Adam<S> adam_;
  std::int64_t step_ = 0;
  std::vector<DenoiserParams<S>> replicas_;
  std::vector<std::vector<S>> ema_;
};

// Replaces the checkpoint's weights with its EMA shadow. False when the
// checkpoint has none.
template <class S>
bool use_ema_weights(Checkpoint<S>& ck) {
  auto named = ck.params.named();
  for (const auto& [name, p] : named) {
    const auto* e = ck.find_extra("ema." + name);
    if (!e || e->data.size() != p.vec().size()) return false;
  }
  for (auto& [name, p] : named) {
    const auto& src = ck.find_extra("ema." + name)->data;
    auto d = p.mutable_data();
    std::copy(src.begin(), src.end(), d.begin());
  }
  return true;
}

inline nlohmann::json step_record_json(const StepRecord& r, bool with_time) {
  nlohmann::json j = {{"step", r.step}, {"denoise_loss", r.denoise_loss}, {"sd_loss", r.sd_loss}, {"lr", r.lr}};
  if (with_time) j["seconds"] = r.seconds;
  return j;
}

struct TrainRunOptions {
  std::filesystem::path out_dir;               // checkpoints and metrics.jsonl
  std::function<void(const StepRecord&)> on_step;
};

struct TrainSummary {
  std::vector<StepRecord> records;
  std::filesystem::path last_checkpoint;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%06lld.bin", static_cast<long long>(step));
  return dir / name;
}

// Runs the trainer up to cfg.steps, appending one JSON record per step to
// out_dir/metrics.jsonl and writing checkpoints at the configured cadence and at
// the end. A non-finite loss stops the run; the last written checkpoint stays.
template <class S>
TrainSummary run_training(Trainer<S>& trainer, const TrainRunOptions& opt) {
  std::filesystem::create_directories(opt.out_dir);
  const auto log_path = opt.out_dir / "metrics.jsonl";
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());
  TrainSummary summary;
  const auto& cfg = trainer.config();
  while (trainer.step_index() < cfg.steps) {
    const auto rec = trainer.step();
    log << step_record_json(rec, !cfg.deterministic).dump() << "\n";
    log.flush();
    summary.records.push_back(rec);
    if (cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0) {
      summary.last_checkpoint = checkpoint_path(opt.out_dir, rec.step);
      trainer.save(summary.last_checkpoint);
    }
    if (opt.on_step) opt.on_step(rec);
  }
  if (summary.last_checkpoint.empty() || summary.last_checkpoint != checkpoint_path(opt.out_dir, trainer.step_index())) {
    summary.last_checkpoint = checkpoint_path(opt.out_dir, trainer.step_index());
    trainer.save(summary.last_checkpoint);
  }
  return summary;
}

template <class S>
std::vector<TrainingExample<S>> training_examples(const std::vector<PosedImage>& views) {
  std::vector<TrainingExample<S>> out;
  for (const auto& v : views) out.push_back({image_to_tensor<S>(v.image), v.camera, v.scene, v.view});
  return out;
}

}  // namespace tridiff
