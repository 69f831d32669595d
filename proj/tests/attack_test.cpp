#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "advlab/attack/export.hpp"
#include "advlab/attack/pgd.hpp"

using namespace advlab;

namespace toy {

// Two-class logistic model on a 1 x 1 x 2 image: logits (0, w.x + b).
struct Logistic {
  double w0 = 2.0, w1 = -1.0, b = 0.1;
  bool poison = false;
};

inline Tensor<double> infer(const Logistic& m, const Tensor<double>& x) {
  std::vector<double> out;
  for (std::size_t s = 0; s < x.dim(0); ++s) {
    out.push_back(0.0);
    out.push_back(m.w0 * x[2 * s] + m.w1 * x[2 * s + 1] + m.b);
  }
  return Tensor<double>::from({x.dim(0), 2}, std::move(out));
}

inline InputGradient<double> input_gradient_with_logits(const Logistic& m, const Tensor<double>& x,
                                                        std::span<const std::size_t> y) {
  const auto logits = infer(m, x);
  std::vector<double> g;
  const double n = static_cast<double>(x.dim(0));
  for (std::size_t s = 0; s < x.dim(0); ++s) {
    const double p1 = 1.0 / (1.0 + std::exp(-logits[2 * s + 1]));
    const double coeff = (p1 - (y[s] == 1 ? 1.0 : 0.0)) / n;
    g.push_back(m.poison ? std::numeric_limits<double>::quiet_NaN() : coeff * m.w0);
    g.push_back(coeff * m.w1);
  }
  return {Tensor<double>::from(x.shape(), std::move(g)), logits};
}

}  // namespace toy

namespace {

ClassifierSpec small_spec(Architecture arch) {
  ClassifierSpec s;
  s.arch = arch;
  s.resolution = 8;
  s.channels = 3;
  s.classes = 3;
  s.patch_size = 4;
  s.embed_dim = 16;
  s.heads = 2;
  s.depth = 1;
  s.widths = {4, 8};
  s.dense_width = 16;
  return s;
}

Tensor<float> random_images(std::uint64_t seed, std::size_t n, std::size_t c, std::size_t r) {
  Rng rng(seed);
  std::vector<float> v(n * c * r * r);
  // Include exact 0 and 1 pixels so the range bound is exercised.
  for (auto& x : v) x = static_cast<float>(std::clamp(rng.uniform(-0.1, 1.1), 0.0, 1.0));
  return Tensor<float>::from({n, c, r, r}, std::move(v));
}

}  // namespace

TEST(Project, Examples) {
  auto orig = Tensor<float>::from({3}, {0.5f, 0.5f, 0.01f});
  auto x = Tensor<float>::from({3}, {0.5f, 0.6f, -0.2f});
  auto p = project(x, orig, 0.03);
  EXPECT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.53f);
  EXPECT_EQ(project(Tensor<float>::from({1}, {-0.2f}), Tensor<float>::from({1}, {0.01f}), 0.05)[0], 0.0f);
  EXPECT_EQ(project(orig, orig, 0.03).values(), orig.values());
  EXPECT_THROW(project(x, Tensor<float>::zeros({2}), 0.1), DimensionError);
}

TEST(Project, IsIdempotent) {
  auto orig = random_images(1, 2, 3, 4);
  Rng rng(2);
  std::vector<float> v(orig.values());
  for (auto& x : v) x += static_cast<float>(rng.uniform(-0.3, 0.3));
  auto once = project(Tensor<float>::from(orig.shape(), v), orig, 8.0 / 255.0);
  EXPECT_EQ(project(once, orig, 8.0 / 255.0).values(), once.values());
}

TEST(PerturbationMetrics, Examples) {
  auto a = Tensor<float>::full({1, 10}, 0.5f);
  auto same = perturbation_metrics(a, a);
  EXPECT_EQ(same.linf[0], 0.0);
  EXPECT_EQ(same.l2[0], 0.0);
  EXPECT_TRUE(std::isinf(same.psnr[0]) && same.psnr[0] > 0);

  auto ad = Tensor<double>::full({1, 10}, 0.5);
  auto shifted = Tensor<double>::full({1, 10}, 0.51);
  auto m = perturbation_metrics(ad, shifted);
  EXPECT_NEAR(m.linf[0], 0.01, 1e-12);
  EXPECT_NEAR(m.l2[0], 0.01 * std::sqrt(10.0), 1e-12);
  EXPECT_NEAR(m.psnr[0], 40.0, 1e-9);  // MSE = 1e-4
  EXPECT_THROW(perturbation_metrics(a, Tensor<float>::full({1, 9}, 0.5f)), DimensionError);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pgd, LogisticToyMatchesHandIterates) {
  // Sample A (y=0): gradient sign is sign(w) = (+,-). Sample B (y=1): (-,+).
  // alpha 0.02, eps 0.05: x0 = (0.5, 0.98).
  //   A: (0.52, 0.96) (0.54, 0.94) (0.55, 0.93)   third step hits the eps box
  //   B: (0.48, 1.00) (0.46, 1.00) (0.45, 1.00)   pixel 2 pinned at 1
  toy::Logistic m;
  auto x = Tensor<double>::from({2, 1, 1, 2}, {0.5, 0.98, 0.5, 0.98});
  const Labels y{0, 1};
  AttackConfig cfg{0.05, 0.02, 3, false, false};
  std::vector<std::vector<double>> iterates;
  auto r = pgd_attack(m, x, y, cfg, 0, "toy", [&](std::size_t, const Tensor<double>&, const Tensor<double>& prev) {
    iterates.push_back(prev.values());
  });
  iterates.push_back(r.adversarial.values());
  const std::vector<std::vector<double>> hand{{0.5, 0.98, 0.5, 0.98},
                                              {0.52, 0.96, 0.48, 1.0},
                                              {0.54, 0.94, 0.46, 1.0},
                                              {0.55, 0.93, 0.45, 1.0}};
  ASSERT_EQ(iterates.size(), hand.size());
  for (std::size_t t = 0; t < hand.size(); ++t)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(iterates[t][i], hand[t][i], 1e-12) << "step " << t;

  // Loss of each iterate from the closed form log(1 + exp(z)) - y z.
  for (std::size_t s = 0; s < 2; ++s) {
    ASSERT_EQ(r.loss_trajectory[s].size(), 4u);
    for (std::size_t t = 0; t < 4; ++t) {
      const double z = 2.0 * hand[t][2 * s] - hand[t][2 * s + 1] + 0.1;
      const double expect = std::log1p(std::exp(z)) - (y[s] == 1 ? z : 0.0);
      EXPECT_NEAR(r.loss_trajectory[s][t], expect, 1e-12);
    }
    EXPECT_GT(r.loss_trajectory[s].back(), r.loss_trajectory[s].front());
  }
  EXPECT_NEAR(r.linf[0], 0.05, 1e-12);
}

TEST(Pgd, TargetedDescendsTowardTarget) {
  toy::Logistic m;
  auto x = Tensor<double>::from({1, 1, 1, 2}, {0.5, 0.98});
  AttackConfig cfg{0.05, 0.02, 3, false, true};
  auto r = pgd_attack(m, x, Labels{0}, cfg, 0);
  EXPECT_NEAR(r.adversarial[0], 0.45, 1e-12);
  EXPECT_NEAR(r.adversarial[1], 1.0, 1e-12);
  EXPECT_LT(r.loss_trajectory[0].back(), r.loss_trajectory[0].front());
}

TEST(Pgd, NonFiniteGradientRaisesAttackError) {
  toy::Logistic m;
  m.poison = true;
  auto x = Tensor<double>::from({1, 1, 1, 2}, {0.5, 0.5});
  try {
    pgd_attack(m, x, Labels{0}, AttackConfig{}, 0, "batch 7");
    FAIL();
  } catch (const AttackError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 7"), std::string::npos);
  }
}

TEST(Pgd, ZeroEpsilonIsBitExactNoOp) {
  auto model = build_model(small_spec(Architecture::vit), 3);
  auto x = random_images(4, 3, 3, 8);
  AttackConfig cfg;
  cfg.epsilon = 0;
  cfg.random_start = true;
  auto r = pgd_attack(model, x, Labels{0, 1, 2}, cfg, 5);
  EXPECT_EQ(r.adversarial.values(), x.values());
  for (bool s : r.success) EXPECT_FALSE(s);
}

TEST(Pgd, SingleStepIsTheSignGradientMethod) {
  auto model = build_model(small_spec(Architecture::resnet), 3);
  auto x = random_images(5, 2, 3, 8);
  const Labels y{1, 2};
  AttackConfig cfg;
  cfg.steps = 1;
  auto r = pgd_attack(model, x, y, cfg, 0);
  const auto g = input_gradient(model, x, y);
  std::vector<float> manual(x.values());
  for (std::size_t i = 0; i < manual.size(); ++i)
    manual[i] += static_cast<float>(cfg.alpha) * static_cast<float>((g[i] > 0) - (g[i] < 0));
  EXPECT_EQ(r.adversarial.values(), project(Tensor<float>::from(x.shape(), manual), x, cfg.epsilon).values());
}

TEST(Pgd, BallContainmentSignStepsPurityAndDeterminism) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto model = build_model(small_spec(arch), 7);
    auto x = random_images(8, 4, 3, 8);
    const Labels y{0, 1, 2, 0};
    for (bool random_start : {false, true}) {
      AttackConfig cfg;
      cfg.random_start = random_start;
      const auto before = model.parameters().checksum();
      std::size_t observed = 0;
      auto r = pgd_attack(model, x, y, cfg, 11, "b", [&](std::size_t, const Tensor<float>& pre, const Tensor<float>& prev) {
        ++observed;
        if (random_start) return;
        for (std::size_t i = 0; i < pre.size(); ++i) {
          const double d = static_cast<double>(pre[i]) - static_cast<double>(prev[i]);
          const double a = cfg.alpha;
          ASSERT_TRUE(std::abs(d) < 1e-7 || std::abs(d - a) < 1e-7 || std::abs(d + a) < 1e-7) << d;
        }
      });
      EXPECT_EQ(observed, cfg.steps);
      EXPECT_EQ(model.parameters().checksum(), before);
      for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_LE(std::abs(r.adversarial[i] - x[i]), cfg.epsilon + 1e-6);
        ASSERT_GE(r.adversarial[i], 0.0f);
        ASSERT_LE(r.adversarial[i], 1.0f);
      }
      for (double d : r.linf) EXPECT_LE(d, cfg.epsilon + 1e-6);
      for (const auto& traj : r.loss_trajectory) EXPECT_EQ(traj.size(), cfg.steps + 1);
      auto again = pgd_attack(model, x, y, cfg, 11);
      EXPECT_EQ(again.adversarial.values(), r.adversarial.values());
      EXPECT_EQ(again.loss_trajectory, r.loss_trajectory);
      EXPECT_EQ(again.success, r.success);
    }
  }
}

TEST(Pgd, RandomStartDependsOnSeed) {
  auto model = build_model(small_spec(Architecture::vgg), 7);
  auto x = random_images(9, 2, 3, 8);
  AttackConfig cfg;
  cfg.random_start = true;
  cfg.steps = 1;
  auto a = pgd_attack(model, x, Labels{0, 1}, cfg, 1);
  auto b = pgd_attack(model, x, Labels{0, 1}, cfg, 2);
  EXPECT_NE(a.adversarial.values(), b.adversarial.values());
}

TEST(Pgd, RejectsBadInputs) {
  auto model = build_model(small_spec(Architecture::vgg), 7);
  auto x = random_images(9, 2, 3, 8);
  EXPECT_THROW(pgd_attack(model, x, Labels{0}, AttackConfig{}, 0), DimensionError);
  auto bad = Tensor<float>::full({1, 3, 8, 8}, 1.5f);
  EXPECT_THROW(pgd_attack(model, bad, Labels{0}, AttackConfig{}, 0), InputError);
}

TEST(Export, PngAndSidecarRecordBothNorms) {
  const auto dir = std::filesystem::temp_directory_path() / "advlab_attack_export";
  std::filesystem::remove_all(dir);
  auto model = build_model(small_spec(Architecture::vgg), 7);
  auto x = random_images(10, 2, 3, 8);
  AttackConfig cfg;
  auto r = pgd_attack(model, x, Labels{0, 1}, cfg, 0);
  export_adversarial(dir, x, r, {"a/0", "b"}, cfg);
  EXPECT_TRUE(std::filesystem::exists(dir / "a_0.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "b.png"));
  auto doc = nlohmann::json::parse(std::ifstream(dir / "metrics.json"));
  ASSERT_EQ(doc["samples"].size(), 2u);
  for (const auto& s : doc["samples"]) {
    EXPECT_LE(s["pre_quantization"]["linf"].get<double>(), cfg.epsilon + 1e-6);
    EXPECT_LE(s["post_quantization"]["linf"].get<double>(), cfg.epsilon + 1.0 / 510.0 + 1e-6);
  }
  auto loaded = read_png(dir / "b.png");
  const auto q = quantized(r.adversarial);
  for (std::size_t i = 0; i < loaded.size(); ++i) EXPECT_EQ(loaded[i], q[loaded.size() + i]);
  EXPECT_EQ(doc["attack"]["steps"], 10);
}
