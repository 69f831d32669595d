#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advlab/core/rng.hpp"
#include "advlab/models/checkpoint.hpp"
#include "advlab/models/model.hpp"
#include "grad_check.hpp"

using namespace advlab;

namespace {

ClassifierSpec spec_for(Architecture arch) {
  ClassifierSpec s;
  s.arch = arch;
  return s;
}

template <typename T>
Tensor<T> random_images(std::uint64_t seed, std::size_t n, const ClassifierSpec& s) {
  Rng rng(seed);
  std::vector<T> v(n * s.channels * s.resolution * s.resolution);
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return Tensor<T>::from({n, s.channels, s.resolution, s.resolution}, std::move(v));
}

// Small configurations used where the test needs many forward passes.
ClassifierSpec toy_spec(Architecture arch) {
  ClassifierSpec s;
  s.arch = arch;
  s.resolution = 8;
  s.channels = 1;
  s.classes = 3;
  s.patch_size = 4;
  s.embed_dim = 8;
  s.heads = 2;
  s.depth = 2;
  s.widths = {4, 6};
  s.dense_width = 8;
  return s;
}

std::vector<float> row(const Tensor<float>& logits, std::size_t r) {
  const std::size_t k = logits.dim(1);
  return {logits.values().begin() + static_cast<long>(r * k), logits.values().begin() + static_cast<long>((r + 1) * k)};
}

}  // namespace

TEST(ClassifierSpec, VitSequenceLength) {
  EXPECT_EQ(spec_for(Architecture::vit).sequence_length(), 65u);
}

TEST(ClassifierSpec, ValidationErrors) {
  auto s = spec_for(Architecture::vit);
  s.resolution = 30;
  EXPECT_THROW(build_model(s, 0), SpecError);
  s = spec_for(Architecture::vit);
  s.classes = 1;
  EXPECT_THROW(build_model(s, 0), SpecError);
  s = spec_for(Architecture::vit);
  s.heads = 3;
  EXPECT_THROW(build_model(s, 0), SpecError);
  s = spec_for(Architecture::vgg);
  s.resolution = 20;
  EXPECT_THROW(build_model(s, 0), SpecError);
  EXPECT_THROW(parse_architecture("mlp"), SpecError);
}

TEST(BuildModel, ParameterCountsMatchClosedFormTally) {
  // Hand tally of each layer's shapes for the default specs.
  //  ViT: patch embed 48*64+64, cls 64, pos 65*64, 4 blocks x
  //       (2 norms 2*128, qkv 64*192+192, proj 64*64+64, fc1 64*128+128,
  //       fc2 128*64+64), final norm 128, head 64*5+5.
  const std::size_t vit_block = 128 + (64 * 192 + 192) + (64 * 64 + 64) + 128 + (64 * 128 + 128) + (128 * 64 + 64);
  const std::size_t vit_total = (48 * 64 + 64) + 64 + 65 * 64 + 4 * vit_block + 128 + (64 * 5 + 5);
  EXPECT_EQ(vit_total, 141701u);
  EXPECT_EQ(build_model(spec_for(Architecture::vit), 1).parameter_count(), vit_total);

  //  ResNet: stem 3->16, stage widths 16/32/64 x 2 blocks, projections on
  //  the first block of stages 2 and 3, fc 64*5+5.
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
  const std::size_t resnet_total = conv(3, 16, 3) + 4 * conv(16, 16, 3) +
                                   (conv(16, 32, 3) + conv(32, 32, 3) + conv(16, 32, 1) + 2 * conv(32, 32, 3)) +
                                   (conv(32, 64, 3) + conv(64, 64, 3) + conv(32, 64, 1) + 2 * conv(64, 64, 3)) +
                                   (64 * 5 + 5);
  EXPECT_EQ(resnet_total, 174373u);
  EXPECT_EQ(build_model(spec_for(Architecture::resnet), 1).parameter_count(), resnet_total);

  //  VGG: two convs per block, 32 -> 4 after three pools, fc 1024->128->5.
  const std::size_t vgg_total = conv(3, 16, 3) + conv(16, 16, 3) + conv(16, 32, 3) + conv(32, 32, 3) +
                                conv(32, 64, 3) + conv(64, 64, 3) + (1024 * 128 + 128) + (128 * 5 + 5);
  EXPECT_EQ(vgg_total, 203925u);
  EXPECT_EQ(build_model(spec_for(Architecture::vgg), 1).parameter_count(), vgg_total);
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto a = build_model(spec_for(arch), 42);
    auto b = build_model(spec_for(arch), 42);
    auto c = build_model(spec_for(arch), 43);
    EXPECT_EQ(a.parameters().checksum(), b.parameters().checksum());
    EXPECT_NE(a.parameters().checksum(), c.parameters().checksum());
    auto it = b.parameters().begin();
    for (const auto& [name, t] : a.parameters()) {
      EXPECT_EQ(name, it->first);
      EXPECT_EQ(t.values(), it->second.values());
      ++it;
    }
  }
}

TEST(BuildModel, TruncatedNormalStaysWithinTwoStd) {
  auto m = build_model(spec_for(Architecture::vit), 5);
  for (float v : m.parameters().at("pos_embed").values()) EXPECT_LE(std::abs(v), 0.04f + 1e-7f);
  for (float v : m.parameters().at("blocks.0.ln1.gain").values()) EXPECT_EQ(v, 1.0f);
}

TEST(Forward, ShapeAndDeterminism) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto m = build_model(spec_for(arch), 3);
    auto x = random_images<float>(1, 3, m.spec());
    auto a = forward(m, x);
    auto b = forward(m, x);
    EXPECT_EQ(a.shape(), (Shape{3, 5}));
    EXPECT_EQ(a.values(), b.values()) << to_string(arch);
    EXPECT_THROW(forward(m, Tensor<float>::zeros({1, 3, 16, 16})), DimensionError);
  }
}

TEST(Forward, IdenticalImagesGiveIdenticalRows) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto m = build_model(spec_for(arch), 3);
    auto one = random_images<float>(9, 1, m.spec());
    auto logits = forward(m, concat<float>({one, one}, 0));
    EXPECT_EQ(row(logits, 0), row(logits, 1)) << to_string(arch);
  }
}

TEST(Forward, BatchPermutationPermutesRows) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto m = build_model(spec_for(arch), 3);
    auto x = random_images<float>(2, 3, m.spec());
    auto logits = forward(m, x);
    std::vector<Tensor<float>> imgs;
    for (std::size_t i : {2, 0, 1}) imgs.push_back(reshape(select(x, 0, i), Shape{1, 3, 32, 32}));
    auto permuted = forward(m, concat(imgs, 0));
    const std::size_t order[] = {2, 0, 1};
    for (std::size_t r = 0; r < 3; ++r) {
      auto expect = row(logits, order[r]);
      auto got = row(permuted, r);
      EXPECT_EQ(got, expect) << to_string(arch);
    }
  }
}

TEST(Attention, MatchesDirectSingleHeadEvaluation) {
  // 3 tokens of width 4, one head: out = softmax(Q K^T / 2) V, then proj.
  Rng rng(17);
  auto rnd = [&](Shape s) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return Tensor<double>::from(std::move(s), std::move(v));
  };
  auto x = rnd({1, 3, 4});
  auto wqkv = rnd({4, 12});
  auto bqkv = rnd({12});
  auto wo = rnd({4, 4});
  auto bo = rnd({4});
  auto got = vit::multi_head_attention(x, wqkv, bqkv, wo, bo, 1);

  double q[3][4], k[3][4], v[3][4];
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 12; ++j) {
      double acc = bqkv[j];
      for (int i = 0; i < 4; ++i) acc += x[t * 4 + i] * wqkv[i * 12 + j];
      (j < 4 ? q : j < 8 ? k : v)[t][j % 4] = acc;
    }
  for (int t = 0; t < 3; ++t) {
    double w[3], total = 0;
    for (int s = 0; s < 3; ++s) {
      double dot = 0;
      for (int i = 0; i < 4; ++i) dot += q[t][i] * k[s][i];
      w[s] = std::exp(dot / 2.0);
      total += w[s];
    }
    double mixed[4] = {0, 0, 0, 0};
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 4; ++i) mixed[i] += w[s] / total * v[s][i];
    for (int j = 0; j < 4; ++j) {
      double out = bo[j];
      for (int i = 0; i < 4; ++i) out += mixed[i] * wo[i * 4 + j];
      EXPECT_NEAR(got[t * 4 + j], out, 1e-5);
    }
  }
}

TEST(Forward, ConstantImageIsInvariantToPatchShuffle) {
  auto m = build_model(spec_for(Architecture::vit), 8);
  auto constant = Tensor<float>::full({1, 3, 32, 32}, 0.37f);
  // Shuffle 4x4 patches by reversing raster order; for a constant image the
  // shuffled image equals the original, so the class-token readout must too.
  auto patches = permute(reshape(constant, Shape{1, 3, 8, 4, 8, 4}), {0, 2, 4, 1, 3, 5});
  std::vector<float> v(patches.values());
  const std::size_t patch = 3 * 16;
  std::vector<float> shuffled(v.size());
  for (std::size_t p = 0; p < 64; ++p)
    std::copy_n(v.begin() + static_cast<long>(p * patch), patch, shuffled.begin() + static_cast<long>((63 - p) * patch));
  auto back = permute(Tensor<float>::from({1, 8, 8, 3, 4, 4}, shuffled), {0, 3, 1, 4, 2, 5});
  EXPECT_EQ(forward(m, reshape(back, Shape{1, 3, 32, 32})).values(), forward(m, constant).values());
}

TEST(InputGradient, ShapeAndNoParameterSideEffects) {
  auto m = build_model(spec_for(Architecture::vit), 4);
  auto x = random_images<float>(5, 2, m.spec());
  const Labels y{1, 3};
  const auto before = m.parameters().checksum();
  auto g = input_gradient(m, x, y);
  EXPECT_EQ(g.shape(), x.shape());
  EXPECT_EQ(m.parameters().checksum(), before);
  for (const auto& [name, t] : m.parameters()) EXPECT_FALSE(t.has_grad()) << name;
}

TEST(InputGradient, DuplicatedSampleHalvesUnderBatchMean) {
  auto m = build_model(spec_for(Architecture::resnet), 4);
  auto one = random_images<float>(6, 1, m.spec());
  auto single = input_gradient(m, one, Labels{2});
  auto dup = input_gradient(m, concat<float>({one, one}, 0), Labels{2, 2});
  const std::size_t n = one.size();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_NEAR(dup[i], 0.5f * single[i], 1e-6f + 1e-4f * std::abs(single[i]));
    EXPECT_EQ(dup[i], dup[n + i]);
  }
}

TEST(InputGradient, MatchesFiniteDifferencesOnToyModels) {
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    const auto spec = toy_spec(arch);
    const auto model = build_model<double>(spec, 12);
    const auto x = random_images<double>(13, 2, spec);
    const Labels y{0, 2};
    const auto analytic = input_gradient(model, x, y);
    Rng rng(99);
    double worst = 0;
    for (int probe = 0; probe < 16; ++probe) {
      const std::size_t i = rng.below(x.size());
      std::vector<double> plus(x.values()), minus(x.values());
      plus[i] += 1e-3;
      minus[i] -= 1e-3;
      const double fp = cross_entropy_loss(model.forward_frozen(Tensor<double>::from(x.shape(), plus)), y).item();
      const double fm = cross_entropy_loss(model.forward_frozen(Tensor<double>::from(x.shape(), minus)), y).item();
      worst = std::max(worst, advlab::testing::relative_error(analytic[i], (fp - fm) / 2e-3));
    }
    EXPECT_LT(worst, 1e-3) << to_string(arch);
  }
}

TEST(Predict, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(argmax_rows(Tensor<float>::from({1, 2}, {0.1f, 0.9f})), Labels{1});
  EXPECT_EQ(argmax_rows(Tensor<float>::from({1, 2}, {0.5f, 0.5f})), Labels{0});
  EXPECT_EQ(argmax_rows(Tensor<float>::from({2, 3}, {1, 3, 3, 2, 2, 0})), (Labels{1, 0}));
}

TEST(Checkpoint, SaveLoadForwardIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "advlab_models_test";
  std::filesystem::remove_all(dir);
  for (auto arch : {Architecture::vit, Architecture::resnet, Architecture::vgg}) {
    auto m = build_model(spec_for(arch), 21);
    // Perturb away from the seeded init so loading cannot pass by re-seeding.
    for (auto& [_, t] : m.parameters())
      for (float& v : t.mutable_data()) v = v * 1.5f + 0.001f;
    const auto path = dir / (to_string(arch) + ".json");
    save_checkpoint(path, m, {{"optim.step", {1}, {7.0f}}}, {{"note", "x"}});
    auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.model.spec(), m.spec());
    EXPECT_EQ(loaded.model.seed(), 21u);
    EXPECT_EQ(loaded.model.parameters().checksum(), m.parameters().checksum());
    ASSERT_EQ(loaded.extra.size(), 1u);
    EXPECT_EQ(loaded.extra[0].values, std::vector<float>{7.0f});
    EXPECT_EQ(loaded.metadata["note"], "x");
    auto x = random_images<float>(3, 2, m.spec());
    EXPECT_EQ(forward(loaded.model, x).values(), forward(m, x).values());
  }
}

TEST(Checkpoint, CorruptBlobIsRejected) {
  const auto dir = std::filesystem::temp_directory_path() / "advlab_models_corrupt";
  std::filesystem::remove_all(dir);
  auto m = build_model(toy_spec(Architecture::vgg), 1);
  save_checkpoint(dir / "m.json", m);
  std::filesystem::resize_file(dir / "m.bin", 8);
  EXPECT_THROW(load_checkpoint(dir / "m.json"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), CheckpointError);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), CheckpointError);
}
