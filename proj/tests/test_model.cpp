#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "balloonseg/model.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace {

using bseg::ModelConfig;
using bseg::Network;
using bseg::Shape;
using bseg::Tensor;

ModelConfig small_config(std::size_t h = 32, std::size_t w = 64, std::size_t base = 2, std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.input_h = h;
  cfg.input_w = w;
  cfg.base_width = base;
  cfg.init_seed = seed;
  return cfg;
}

Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor<float>::uniform(Shape{1, 3, h, w}, rng, 0.0f, 1.0f);
}

// Bumps running statistics away from their init values so round trips cover them.
void warm_batchnorm(Network<float>& net, const Tensor<float>& x) {
  for (int i = 0; i < 3; ++i) net.forward(x, bseg::Mode::Train);
}

TEST(Network, OutputShapeAndRange) {
  Network<float> net(small_config(64, 96, 8));
  const auto y = net.predict(random_image(64, 96, 2));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 64, 96}));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Network, EncoderShapesAt64x96) {
  Network<float> net(small_config(64, 96, 8));
  Network<float>::Tape tape;
  net.forward(random_image(64, 96, 3), bseg::Mode::Train, &tape);
  const std::array<Shape, 5> want{Shape{1, 8, 64, 96}, Shape{1, 16, 32, 48}, Shape{1, 32, 16, 24},
                                  Shape{1, 64, 8, 12}, Shape{1, 64, 4, 6}};
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(tape.skip_shapes[b], want[b]) << "block " << b + 1;
    EXPECT_EQ(tape.encoder[b].conv_outputs.size(), bseg::kVggConvsPerBlock[b]);
  }
  // decoder step i merges with the encoder output of matching size
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(tape.decoder[i].skip_shape, want[4 - i]);
    EXPECT_EQ(tape.decoder[i].up_shape.h, want[4 - i].h);
    EXPECT_EQ(tape.decoder[i].up_shape.w, want[4 - i].w);
  }
}

TEST(Network, DoublingBaseWidthKeepsOutputShape) {
  for (std::size_t base : {1u, 2u, 4u}) {
    Network<float> net(small_config(32, 64, base));
    EXPECT_EQ(net.predict(random_image(32, 64, 4)).shape(), (Shape{1, 1, 32, 64}));
  }
}

TEST(Network, RejectsIndivisibleInput) {
  EXPECT_THROW(Network<float>(small_config(48, 64)), bseg::ShapeError);
  Network<float> net(small_config());
  EXPECT_THROW(net.predict(random_image(48, 64, 5)), bseg::ShapeError);
}

TEST(Network, RegistryNamesAndRegularization) {
  Network<float> net(small_config());
  std::set<std::string> names;
  std::size_t regularized = 0;
  for (const auto* p : net.parameters_const()) {
    EXPECT_TRUE(names.insert(p->name).second) << p->name;
    if (p->regularized) {
      ++regularized;
      EXPECT_NE(p->name.find("_conv"), std::string::npos);
      EXPECT_EQ(p->name.rfind("decoder.", 0), 0u);
    }
  }
  EXPECT_EQ(regularized, 5u);
}

TEST(Network, EncoderParameterCountMatchesVgg16) {
  // closed form: sum over VGG-16 convs of 3*3*c_in*c_out + c_out
  const std::array<std::array<std::size_t, 2>, 13> convs{{{3, 64},
                                                          {64, 64},
                                                          {64, 128},
                                                          {128, 128},
                                                          {128, 256},
                                                          {256, 256},
                                                          {256, 256},
                                                          {256, 512},
                                                          {512, 512},
                                                          {512, 512},
                                                          {512, 512},
                                                          {512, 512},
                                                          {512, 512}}};
  std::size_t closed = 0;
  for (auto [ci, co] : convs) closed += 9 * ci * co + co;
  EXPECT_EQ(closed, 14714688u);
  Network<float> net(small_config(32, 32, 64));
  EXPECT_EQ(net.parameter_count("encoder."), closed);
}

TEST(Network, EvalIsDeterministic) {
  Network<float> net(small_config());
  const auto x = random_image(32, 64, 6);
  warm_batchnorm(net, x);
  const auto a = net.predict(x);
  const auto b = net.predict(x);
  EXPECT_EQ(a.vec(), b.vec());
}

TEST(L2Penalty, ValuesAndGradient) {
  Network<float> net(small_config());
  for (auto* p : net.parameters()) {
    if (p->regularized) std::fill(p->weights.data().begin(), p->weights.data().end(), 0.0f);
  }
  EXPECT_EQ(net.l2_penalty(), 0.0);
  bseg::LayerParams<float>* target = nullptr;
  for (auto* p : net.parameters()) {
    if (p->regularized) target = p;
  }
  ASSERT_NE(target, nullptr);
  target->weights[3] = 2.0f;
  EXPECT_NEAR(net.l2_penalty(), 0.004, 1e-12);

  net.zero_grad();
  net.add_l2_gradient();
  EXPECT_NEAR(target->weights.grad()[3], 2 * 0.001 * 2.0, 1e-9);
  const float h = 1e-2f;
  target->weights[3] = 2.0f + h;
  const double up = net.l2_penalty();
  target->weights[3] = 2.0f - h;
  const double down = net.l2_penalty();
  EXPECT_NEAR((up - down) / (2 * h), 0.004, 1e-6);
  // biases of the regularized convs carry no penalty
  net.zero_grad();
  net.add_l2_gradient();
  if (target->bias) {
    for (float g : target->bias->grad()) EXPECT_EQ(g, 0.0f);
  }
}

TEST(Network, FullNetworkGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = oracle::check_network(seed, 32, 2, 8);
    EXPECT_GT(r.report.checked, 200u);
    EXPECT_LT(r.report.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Weights, RoundTripIsBitExact) {
  test_support::TempDir dir;
  Network<float> a(small_config(32, 64, 2, 1));
  const auto x = random_image(32, 64, 7);
  warm_batchnorm(a, x);
  a.save_weights(dir.path() / "w.bseg");
  Network<float> b(small_config(32, 64, 2, 99));
  b.load_weights(dir.path() / "w.bseg");
  EXPECT_EQ(a.predict(x).vec(), b.predict(x).vec());
}

TEST(Weights, FileLayout) {
  test_support::TempDir dir;
  Network<float> net(small_config());
  net.save_weights(dir.path() / "w.bseg");
  std::ifstream is(dir.path() / "w.bseg", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BSEG");
  auto u32 = [&](std::size_t at) {
    return std::uint32_t(bytes[at]) | std::uint32_t(bytes[at + 1]) << 8 | std::uint32_t(bytes[at + 2]) << 16 |
           std::uint32_t(bytes[at + 3]) << 24;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), net.export_tensors().size());
  const std::size_t name_len = bytes[12] | bytes[13] << 8;
  EXPECT_EQ(std::string(bytes.begin() + 14, bytes.begin() + 14 + static_cast<long>(name_len)),
            "encoder.block1_conv1.weight");
  EXPECT_EQ(bytes[14 + name_len], 0);      // dtype f32
  EXPECT_EQ(bytes[15 + name_len], 4);      // rank
  EXPECT_EQ(u32(16 + name_len), 2u);       // c_out at base width 2
  EXPECT_EQ(u32(20 + name_len), 3u);       // c_in
}

TEST(Weights, TruncatedFileFailsWithoutMutation) {
  test_support::TempDir dir;
  Network<float> a(small_config(32, 64, 2, 1));
  a.save_weights(dir.path() / "w.bseg");
  const auto size = std::filesystem::file_size(dir.path() / "w.bseg");
  std::filesystem::resize_file(dir.path() / "w.bseg", size - 10);

  Network<float> b(small_config(32, 64, 2, 2));
  const auto before = b.export_tensors();
  EXPECT_THROW(b.load_weights(dir.path() / "w.bseg"), bseg::WeightFileError);
  const auto after = b.export_tensors();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values);
}

TEST(Weights, MismatchNamesTheTensor) {
  test_support::TempDir dir;
  Network<float> a(small_config(32, 64, 4));
  a.save_weights(dir.path() / "w.bseg");
  Network<float> b(small_config(32, 64, 2));
  const auto before = b.export_tensors();
  try {
    b.load_weights(dir.path() / "w.bseg");
    FAIL() << "expected a mismatch";
  } catch (const bseg::ModelMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.block1_conv1.weight"), std::string::npos) << e.what();
  }
  const auto after = b.export_tensors();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values);
}

TEST(Weights, EncoderOnlyLeavesDecoderUntouched) {
  test_support::TempDir dir;
  Network<float> a(small_config(32, 64, 2, 1));
  a.save_weights(dir.path() / "w.bseg");
  Network<float> b(small_config(32, 64, 2, 2));
  const auto b_before = b.export_tensors();
  b.load_weights(dir.path() / "w.bseg", bseg::LoadMode::EncoderOnly);
  const auto a_tensors = a.export_tensors();
  const auto b_after = b.export_tensors();
  for (std::size_t i = 0; i < b_after.size(); ++i) {
    if (b_after[i].name.rfind("encoder.", 0) == 0) {
      EXPECT_EQ(b_after[i].values, a_tensors[i].values) << b_after[i].name;
    } else {
      EXPECT_EQ(b_after[i].values, b_before[i].values) << b_after[i].name;
    }
  }
}

TEST(Weights, EncoderOnlyAcceptsAnEncoderFile) {
  test_support::TempDir dir;
  Network<float> a(small_config());
  auto tensors = a.export_tensors();
  std::erase_if(tensors, [](const bseg::NamedTensor& t) { return t.name.rfind("encoder.", 0) != 0; });
  bseg::write_weight_file(dir.path() / "enc.bseg", tensors);
  Network<float> b(small_config(32, 64, 2, 3));
  EXPECT_THROW(b.load_weights(dir.path() / "enc.bseg"), bseg::ModelMismatchError);
  EXPECT_NO_THROW(b.load_weights(dir.path() / "enc.bseg", bseg::LoadMode::EncoderOnly));
}

TEST(Weights, BadMagicAndVersion) {
  std::vector<char> bytes{'N', 'O', 'P', 'E', 1, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(bseg::decode_weight_file(bytes), bseg::WeightFileError);
  bytes = {'B', 'S', 'E', 'G', 2, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(bseg::decode_weight_file(bytes), bseg::WeightFileError);
  bytes = {'B', 'S', 'E', 'G', 1, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_TRUE(bseg::decode_weight_file(bytes).empty());
}

}  // namespace
