#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <unistd.h>

#include "support/hooks.hpp"
#include "tridiff/sample/samplers.hpp"
#include "tridiff/train/train.hpp"

using namespace tridiff;
using T = ad::Tensor<double>;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tridiff_train_" + std::to_string(getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <class S = double>
std::vector<TrainingExample<S>> toy_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::vector<TrainingExample<S>> out;
  for (int k = 0; k < n; ++k) {
    std::vector<S> px(8 * 8 * 3);
    for (auto& v : px) v = static_cast<S>(u(rng));
    out.push_back({ad::Tensor<S>({8, 8, 3}, std::move(px)),
                   make_camera(8, look_at_pose(0.7 * k, 0.3 + 0.1 * k, 2.5, Eigen::Vector3d(0, 0, 0.5))), k, 0});
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.steps = 4;
  cfg.adam.lr = 1e-3;
  cfg.seed = 17;
  cfg.checkpoint_every = 0;
  return cfg;
}

ScheduleConfig toy_schedule() { return {10, 0.008}; }

Trainer<double> toy_trainer(TrainConfig cfg = toy_config(), std::uint64_t init_seed = 4) {
  return Trainer<double>(init_denoiser<double>(tiny_model_config(), init_seed), toy_schedule(), cfg, toy_data(3, 9));
}

std::vector<std::vector<double>> snapshot(const DenoiserParams<double>& p) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : p.named()) out.push_back(t.vec());
  return out;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = init_denoiser<double>(tiny_model_config(), 1);
  auto named = params.named();
  const auto before = snapshot(params);
  Adam<double> opt;
  std::vector<std::vector<double>> zeros;
  for (const auto& [_, p] : named) zeros.emplace_back(p.vec().size(), 0.0);
  for (int k = 0; k < 3; ++k) opt.step(named, zeros);
  EXPECT_EQ(snapshot(params), before);
  EXPECT_EQ(opt.t, 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = T({3}, {1.0, -2.0, 0.5});
  NamedParams<double> named{{"w", w}};
  Adam<double> opt;
  opt.cfg.lr = 0.01;
  opt.step(named, {{2.0, -0.5, 0.0}});
  EXPECT_NEAR(w[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_THROW(opt.step(named, {}), std::invalid_argument);
}

TEST(DenoiseLoss, OracleHookGivesZero) {
  const auto sched = build_cosine_schedule(10);
  auto x0 = test_support::smooth_target<double>(8);
  test_support::FixedTargetHook<double> hook{x0};
  std::mt19937_64 rng(1);
  for (int t = 1; t <= 10; ++t) {
    const auto eps = standard_normal<double>(rng, x0.vec().size());
    EXPECT_EQ(denoise_loss<double>(hook.fn(), x0, canonical_camera(8), t, eps, sched, 0).item(), 0.0);
  }
  EXPECT_THROW(denoise_loss<double>(hook.fn(), x0, canonical_camera(8), 0, std::vector<double>(192), sched, 0),
               std::out_of_range);
}

TEST(DenoiseLoss, RandomInitFinitePositive) {
  const auto sched = build_cosine_schedule(10);
  auto params = init_denoiser<double>(tiny_model_config(), 3);
  auto data = toy_data(1, 2);
  std::mt19937_64 rng(1);
  const auto eps = standard_normal<double>(rng, 192);
  const double l = denoise_loss(params, data[0].x0, data[0].camera, 5, eps, sched, 7).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GT(l, 0.0);
}

TEST(ScoreDistillation, IdentityInnerAtZeroNoiseIsFixedPoint) {
  const auto sched = build_cosine_schedule(10);
  ASSERT_EQ(sched.alpha_bar[0], 1.0);
  auto params = init_denoiser<double>(tiny_model_config(), 3);
  const DenoiseFn<double> identity = [](const T& xt, int, const Camera&, std::uint64_t) {
    Denoised<double> d;
    d.image = xt.detach();
    return d;
  };
  auto planes = encode(params.encoder, toy_data(1, 5)[0].x0, 3, params.cfg.extent);
  params.cfg.render.stochastic = false;
  const std::vector<double> eps(192, 0.0);
  EXPECT_EQ(score_distillation_loss(params, identity, planes, canonical_camera(8), 0, eps, sched, 1).item(), 0.0);
}

TEST(ScoreDistillation, FiniteNonnegativeAcrossSeeds) {
  const auto sched = build_cosine_schedule(10);
  auto params = init_denoiser<double>(tiny_model_config(), 3);
  auto data = toy_data(2, 5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    const int t = 1 + static_cast<int>(s % 10);
    auto planes = encode(params.encoder, data[0].x0, t, params.cfg.extent);
    const auto eps = standard_normal<double>(rng, 192);
    const double l = score_distillation_loss(params, model_denoiser(params), planes, data[1].camera, t, eps, sched, s).item();
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
}

TEST(ScoreDistillation, GradientSkipsInnerDenoiser) {
  const auto sched = build_cosine_schedule(10);
  auto params = init_denoiser<double>(tiny_model_config(), 3);
  auto data = toy_data(2, 5);
  std::mt19937_64 rng(4);
  const auto eps = standard_normal<double>(rng, 192);
  auto planes = encode(params.encoder, data[0].x0, 4, params.cfg.extent);
  planes = {planes.xy.detach(), planes.xz.detach(), planes.yz.detach()};
  planes.xy.set_requires_grad(true);

  // Same loss with the target computed separately as a constant.
  auto grad_of = [&](bool via_sd) {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    planes.xy.zero_grad();
    T loss;
    if (via_sd) {
      loss = score_distillation_loss(params, model_denoiser(params), planes, data[1].camera, 4, eps, sched, 9);
    } else {
      const auto rendered = render_triplane(params, planes, data[1].camera, params.cfg.render, derive_seed(9, {0})).image;
      T target;
      {
        ad::NoGradScope<double> ng;
        const T noisy(rendered.shape(), q_sample<double>(rendered.data(), 4, eps, sched));
        target = denoise(params, noisy, 4, data[1].camera, derive_seed(9, {1})).image;
      }
      loss = l1_loss(rendered, T(target.shape(), target.vec()));
    }
    tape.backward(loss);
    return planes.xy.grad_or_zeros();
  };
  const auto a = grad_of(true), b = grad_of(false);
  EXPECT_EQ(a, b);
  double norm = 0;
  for (double g : a) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(TrainConfig, Validation) {
  {
    auto c = toy_config();
    c.ema_decay = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
  }
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  bad([](TrainConfig& c) { c.batch = 0; });
  bad([](TrainConfig& c) { c.lambda_sd = -0.1; });
  bad([](TrainConfig& c) { c.rho_sd = 1.5; });
  bad([](TrainConfig& c) { c.adam.lr = 0; });
  bad([](TrainConfig& c) { c.workers = 0; });
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_THROW(Trainer<double>(init_denoiser<double>(tiny_model_config(), 1), toy_schedule(), toy_config(), {}),
               std::invalid_argument);
}

TEST(Trainer, FixedSeedLossCurveIsBitIdentical) {
  auto a = toy_trainer(), b = toy_trainer();
  for (int k = 0; k < 3; ++k) {
    const auto ra = a.step(), rb = b.step();
    EXPECT_EQ(ra.denoise_loss, rb.denoise_loss);
    EXPECT_GT(ra.denoise_loss, 0.0);
  }
  EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
}

TEST(Trainer, WorkersMatchSerialBitwise) {
  auto serial = toy_trainer();
  auto cfg = toy_config();
  cfg.workers = 2;
  auto parallel = toy_trainer(cfg);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(serial.step().denoise_loss, parallel.step().denoise_loss);
  EXPECT_EQ(snapshot(serial.params()), snapshot(parallel.params()));
}

TEST(Trainer, ZeroLambdaReducesToDenoiseLoss) {
  auto plain = toy_trainer();
  auto cfg = toy_config();
  cfg.score_distillation = true;
  cfg.lambda_sd = 0.0;
  cfg.rho_sd = 1.0;
  auto zero = toy_trainer(cfg);
  for (int k = 0; k < 2; ++k) {
    const auto r = zero.step();
    EXPECT_EQ(r.sd_loss, 0.0);
    EXPECT_EQ(plain.step().denoise_loss, r.denoise_loss);
  }
  EXPECT_EQ(snapshot(plain.params()), snapshot(zero.params()));

  cfg.lambda_sd = 0.1;
  auto with_sd = toy_trainer(cfg);
  const auto r = with_sd.step();
  EXPECT_GT(r.sd_loss, 0.0);
}

TEST(Trainer, SingleElementStepMatchesExplicitLoss) {
  auto cfg = toy_config();
  cfg.batch = 1;
  auto trainer = toy_trainer(cfg);
  auto reference = init_denoiser<double>(tiny_model_config(), 4);
  const auto data = toy_data(3, 9);
  const auto sched = build_cosine_schedule(10);

  // Replays the trainer's draws for step 0, element 0.
  const std::uint64_t seed = derive_seed(cfg.seed, {0, 0});
  std::mt19937_64 rng(seed);
  const auto& ex = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
  const int t = std::uniform_int_distribution<int>(1, sched.steps)(rng);
  const auto eps = standard_normal<double>(rng, 192);
  auto named = reference.named();
  std::vector<std::vector<double>> grads;
  double loss_value = 0;
  {
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    auto loss = denoise_loss(reference, ex.x0, ex.camera, t, eps, sched, derive_seed(seed, {0}));
    loss_value = loss.item();
    tape.backward(loss);
  }
  for (auto& [_, p] : named) grads.push_back(p.grad_or_zeros());
  Adam<double> opt;
  opt.cfg = cfg.adam;
  opt.step(named, grads);

  const auto rec = trainer.step();
  EXPECT_EQ(rec.denoise_loss, loss_value);
  EXPECT_EQ(snapshot(trainer.params()), snapshot(reference));
}

TEST(Trainer, ResumeEqualsUninterrupted) {
  const auto dir = scratch("resume");
  auto full = toy_trainer();
  for (int k = 0; k < 4; ++k) full.step();

  auto first = toy_trainer();
  first.step();
  first.step();
  first.save(dir / "half.bin");

  auto resumed = toy_trainer(toy_config(), 99);  // different init, overwritten by restore
  resumed.restore(load_checkpoint<double>(dir / "half.bin"));
  EXPECT_EQ(resumed.step_index(), 2);
  resumed.step();
  resumed.step();
  EXPECT_EQ(snapshot(resumed.params()), snapshot(full.params()));
  EXPECT_EQ(resumed.optimizer().m, full.optimizer().m);
  EXPECT_EQ(resumed.optimizer().v, full.optimizer().v);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, EmaIsOffByDefaultAndTracksWeights) {
  auto plain = toy_trainer();
  plain.step();
  EXPECT_TRUE(plain.ema().empty());

  auto cfg = toy_config();
  cfg.ema_decay = 0.75;
  auto t = toy_trainer(cfg);
  t.step();
  const auto w1 = snapshot(t.params());
  EXPECT_EQ(t.ema(), w1);  // starts from the first updated weights
  t.step();
  const auto w2 = snapshot(t.params());
  for (std::size_t k = 0; k < w2.size(); ++k)
    for (std::size_t i = 0; i < w2[k].size(); ++i) ASSERT_EQ(t.ema()[k][i], 0.75 * w1[k][i] + 0.25 * w2[k][i]);
  EXPECT_EQ(snapshot(plain.params()).size(), w2.size());
}

TEST(Trainer, EmaSurvivesResumeAndCanBeSampled) {
  const auto dir = scratch("ema");
  auto cfg = toy_config();
  cfg.ema_decay = 0.9;
  auto full = toy_trainer(cfg);
  for (int k = 0; k < 4; ++k) full.step();

  auto first = toy_trainer(cfg);
  first.step();
  first.step();
  first.save(dir / "half.bin");
  auto resumed = toy_trainer(cfg, 99);
  resumed.restore(load_checkpoint<double>(dir / "half.bin"));
  resumed.step();
  resumed.step();
  EXPECT_EQ(resumed.ema(), full.ema());

  full.save(dir / "full.bin");
  auto ck = load_checkpoint<double>(dir / "full.bin");
  ASSERT_TRUE(use_ema_weights(ck));
  EXPECT_EQ(snapshot(ck.params), full.ema());

  toy_trainer().save(dir / "plain.bin");
  auto no_ema = load_checkpoint<double>(dir / "plain.bin");
  EXPECT_FALSE(use_ema_weights(no_ema));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, RunWritesLogAndCheckpoints) {
  const auto dir = scratch("run");
  auto cfg = toy_config();
  cfg.checkpoint_every = 3;
  auto trainer = toy_trainer(cfg);
  const auto summary = run_training(trainer, {dir, {}});
  EXPECT_EQ(summary.records.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt_000003.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt_000004.bin"));
  EXPECT_EQ(summary.last_checkpoint, dir / "ckpt_000004.bin");
  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), ++n);
    EXPECT_TRUE(j.contains("denoise_loss") && j.contains("sd_loss") && j.contains("lr"));
    EXPECT_FALSE(j.contains("seconds"));
  }
  EXPECT_EQ(n, 4);
  const auto ck = load_checkpoint<double>(dir / "ckpt_000004.bin");
  EXPECT_EQ(ck.meta.at("step").get<int>(), 4);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, NonFiniteLossHaltsAndKeepsLastCheckpoint) {
  const auto dir = scratch("nan");
  auto cfg = toy_config();
  cfg.checkpoint_every = 1;
  cfg.steps = 5;
  auto trainer = toy_trainer(cfg);
  TrainRunOptions opt{dir, [&](const StepRecord& r) {
                        if (r.step == 2) trainer.params().named().back().second.mutable_data()[0] =
                                             std::numeric_limits<double>::quiet_NaN();
                      }};
  EXPECT_THROW(run_training(trainer, opt), NonFiniteLoss);
  EXPECT_EQ(trainer.step_index(), 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt_000002.bin"));
  EXPECT_FALSE(std::filesystem::exists(dir / "ckpt_000003.bin"));
  const auto ck = load_checkpoint<double>(dir / "ckpt_000002.bin");
  for (const auto& [_, p] : ck.params.named())
    for (double v : p.vec()) ASSERT_TRUE(std::isfinite(v));
  std::filesystem::remove_all(dir);
}
