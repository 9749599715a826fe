#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "tpnerf/errors.hpp"
#include "tpnerf/model.hpp"
#include "tpnerf/radiance_decoder.hpp"

namespace tpnerf {
namespace {

TEST(PositionalEncoding, ZeroInput) {
  const std::vector<double> v{0, 0, 0};
  const auto e = positional_encode(v, 4, true);
  ASSERT_EQ(e.size(), 27u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(e[i], 0.0);
  for (int l = 0; l < 4; ++l) {
    for (int i = 0; i < 3; ++i) {
      EXPECT_EQ(e[3 + 6 * l + i], 0.0);
      EXPECT_EQ(e[3 + 6 * l + 3 + i], 1.0);
    }
  }
}

TEST(PositionalEncoding, Dimensions) {
  PositionalEncodingConfig pe;
  EXPECT_EQ(pe.output_dim(3, 10), 63);
  EXPECT_EQ(pe.output_dim(3, 4), 27);
  EXPECT_EQ(pe.output_dim(4, 10), 84);
  pe.include_input = false;
  EXPECT_EQ(pe.output_dim(3, 10), 60);
  const std::vector<double> v{0.1, 0.2, 0.3};
  EXPECT_EQ(positional_encode(v, 10, true).size(), 63u);
  EXPECT_EQ(positional_encode(v, 0, true).size(), 3u);
  EXPECT_EQ(positional_encode(v, 0, false).size(), 0u);
}

TEST(PositionalEncoding, FrequencyTermSpotCheck) {
  const std::vector<double> v{0.1, -0.7};
  const auto e = positional_encode(v, 10, true);
  const int l = 3;
  // Block layout: [v, sin(2^0 pi v), cos(2^0 pi v), ...] with k = 2 entries per block.
  EXPECT_NEAR(e[2 + 4 * l + 0], std::sin(8 * std::numbers::pi * 0.1), 1e-15);
  EXPECT_NEAR(e[2 + 4 * l + 1], std::sin(8 * std::numbers::pi * -0.7), 1e-15);
  EXPECT_NEAR(e[2 + 4 * l + 2], std::cos(8 * std::numbers::pi * 0.1), 1e-15);
  EXPECT_NEAR(e[2 + 4 * l + 3], std::cos(8 * std::numbers::pi * -0.7), 1e-15);
}

TEST(PositionalEncoding, TensorMatchesScalar) {
  const auto v = torch::rand({5, 4}, torch::kFloat64) * 2 - 1;
  const auto t = positional_encode(v, 6, true);
  ASSERT_EQ(t.sizes(), (std::vector<int64_t>{5, 4 * 13}));
  for (int r = 0; r < 5; ++r) {
    std::vector<double> row(4);
    for (int k = 0; k < 4; ++k) row[k] = v[r][k].item<double>();
    const auto e = positional_encode(row, 6, true);
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(t[r][i].item<double>(), e[i], 1e-12);
  }
}

TEST(Route, Boundary) {
  EXPECT_EQ(route(Vec3(0.5, 0, 0)), Branch::Near);
  EXPECT_EQ(route(Vec3(1.5, 0, 0)), Branch::Far);
  EXPECT_EQ(route(Vec3(1, 0, 0)), Branch::Far);
  EXPECT_EQ(route(Vec3(0, 0.6, 0.8)), Branch::Far);
  const auto near = route_near(torch::tensor({{0.5, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, -2.0}},
                                             torch::kFloat64));
  EXPECT_TRUE(near[0].item<bool>());
  EXPECT_FALSE(near[1].item<bool>());
  EXPECT_FALSE(near[2].item<bool>());
}

DecoderConfig small_decoder(int position_dim = 3) {
  DecoderConfig c;
  c.position_dim = position_dim;
  c.triplane_dim = 6;
  c.residual_dim = 5;
  c.hidden = 16;
  c.encoding.n_freq_pos = 3;
  c.encoding.n_freq_dir = 2;
  return c;
}

struct DecoderInputs {
  torch::Tensor positions, directions, triplane, residual, validity;

  DecoderInputs select_views(const std::vector<int64_t>& order) const {
    const auto idx = torch::tensor(order, torch::kInt64);
    return {positions, directions, triplane.index_select(0, idx), residual.index_select(0, idx),
            validity.index_select(0, idx)};
  }
};

DecoderInputs random_inputs(const DecoderConfig& c, int views, int points, bool all_valid = false) {
  DecoderInputs in;
  in.positions = torch::randn({points, c.position_dim}, torch::kFloat64);
  in.directions = torch::randn({points, 3}, torch::kFloat64);
  in.directions = in.directions / in.directions.norm(2, 1, true);
  in.triplane = torch::randn({views, points, c.triplane_dim}, torch::kFloat64);
  in.validity = all_valid ? torch::ones({views, points}, torch::kBool)
                          : torch::rand({views, points}, torch::kFloat64) > 0.3;
  in.residual = torch::randn({views, points, c.residual_dim}, torch::kFloat64) *
                in.validity.unsqueeze(-1).to(torch::kFloat64);
  return in;
}

RadianceSamples run(RadianceDecoder& d, const DecoderInputs& in) {
  return d->forward(in.positions, in.directions, in.triplane, in.residual, in.validity);
}

class Decoder : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(1);
    decoder = RadianceDecoder(small_decoder());
    decoder->to(torch::kFloat64);
  }
  RadianceDecoder decoder{nullptr};
};

TEST_F(Decoder, OutputRanges) {
  DecoderInputs in = random_inputs(decoder->config(), 3, 500);
  DecoderInputs scaled = in;
  scaled.triplane = in.triplane * 100;
  for (const DecoderInputs* x : {&in, &scaled}) {
    const auto out = run(decoder, *x);
    ASSERT_EQ(out.sigma.sizes(), (std::vector<int64_t>{500}));
    ASSERT_EQ(out.rgb.sizes(), (std::vector<int64_t>{500, 3}));
    EXPECT_GE(out.sigma.min().item<double>(), 0.0);
    EXPECT_GE(out.rgb.min().item<double>(), 0.0);
    EXPECT_LE(out.rgb.max().item<double>(), 1.0);
  }
}

TEST_F(Decoder, SingleViewDeterministic) {
  const auto in = random_inputs(decoder->config(), 1, 50, true);
  const auto a = run(decoder, in), b = run(decoder, in);
  EXPECT_TRUE(torch::equal(a.sigma, b.sigma));
  EXPECT_TRUE(torch::equal(a.rgb, b.rgb));
}

TEST_F(Decoder, DuplicatedViewsMatchSingle) {
  const auto in = random_inputs(decoder->config(), 1, 50, true);
  const auto a = run(decoder, in), b = run(decoder, in.select_views({0, 0}));
  EXPECT_TRUE(torch::allclose(a.sigma, b.sigma, 0, 1e-12));
  EXPECT_TRUE(torch::allclose(a.rgb, b.rgb, 0, 1e-12));
}

TEST_F(Decoder, PermutationInvariant) {
  const auto in = random_inputs(decoder->config(), 4, 200);
  const auto a = run(decoder, in), b = run(decoder, in.select_views({2, 0, 3, 1}));
  EXPECT_LE((a.sigma - b.sigma).abs().max().item<double>(), 1e-6);
  EXPECT_LE((a.rgb - b.rgb).abs().max().item<double>(), 1e-6);
}

TEST_F(Decoder, InvalidViewsAreIgnoredWhenAnyViewIsValid) {
  auto in = random_inputs(decoder->config(), 2, 30, true);
  in.validity[1].fill_(false);
  in.residual[1].zero_();
  const auto both = run(decoder, in);
  const auto first = run(decoder, in.select_views({0}));
  EXPECT_TRUE(torch::allclose(both.sigma, first.sigma, 0, 1e-12));
  EXPECT_TRUE(torch::allclose(both.rgb, first.rgb, 0, 1e-12));
}

TEST_F(Decoder, ZeroViewsIsInputError) {
  const auto in = random_inputs(decoder->config(), 1, 5);
  EXPECT_THROW(run(decoder, in.select_views({})), InputError);
}

TEST_F(Decoder, GradientsMatchFiniteDifferences) {
  const auto base = random_inputs(decoder->config(), 2, 4, true);
  const auto probe_sigma = torch::rand({4}, torch::kFloat64);
  const auto probe_rgb = torch::rand({4, 3}, torch::kFloat64);
  auto f = [&](const DecoderInputs& in) {
    const auto out = run(decoder, in);
    return (out.sigma * probe_sigma).sum() + (out.rgb * probe_rgb).sum();
  };
  auto in = base;
  in.positions = base.positions.clone().requires_grad_();
  in.triplane = base.triplane.clone().requires_grad_();
  in.residual = base.residual.clone().requires_grad_();
  f(in).backward();
  torch::NoGradGuard ng;
  const double h = 1e-6;
  const std::vector<std::pair<torch::Tensor DecoderInputs::*, const char*>> fields{
      {&DecoderInputs::positions, "positions"},
      {&DecoderInputs::triplane, "triplane"},
      {&DecoderInputs::residual, "residual"}};
  for (const auto& [field, name] : fields) {
    const auto grad = (in.*field).grad().view(-1);
    for (int64_t i = 0; i < grad.numel(); ++i) {
      auto p = base, m = base;
      p.*field = (base.*field).clone();
      m.*field = (base.*field).clone();
      (p.*field).view(-1)[i] += h;
      (m.*field).view(-1)[i] -= h;
      const double fd = (f(p) - f(m)).item<double>() / (2 * h);
      const double an = grad[i].item<double>();
      EXPECT_TRUE(testing::grad_close(an, fd, 1e-4)) << name << " " << i << " an " << an << " fd " << fd;
    }
  }
}

TEST(DecoderConfigTest, Validation) {
  auto c = small_decoder();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.conditioning_dim(), 3 * 7 + 6 + 5);
  c.skip_layer = 9;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(NearFar, BranchesShareNoParameters) {
  auto cfg = testing::micro_model();
  NerfModel model(cfg);
  model->to(torch::kFloat64);
  const auto near_params = model->decoder_near->parameters();
  const auto far_params = model->decoder_far->parameters();
  for (const auto& a : near_params)
    for (const auto& b : far_params) EXPECT_NE(a.data_ptr(), b.data_ptr());

  DecoderInputs in = random_inputs(model->decoder_far->config(), 2, 20);
  const auto before = run(model->decoder_far, in);
  {
    torch::NoGradGuard ng;
    for (auto& p : model->decoder_near->parameters()) p.add_(1.0);
  }
  const auto after = run(model->decoder_far, in);
  EXPECT_TRUE(torch::equal(before.sigma, after.sigma));
  EXPECT_TRUE(torch::equal(before.rgb, after.rgb));
  EXPECT_EQ(model->decoder_near->config().position_dim, 3);
  EXPECT_EQ(model->decoder_far->config().position_dim, 4);
}

TEST(PoolViews, ValidityWeightedMean) {
  const auto f = torch::tensor({{{1.0}, {2.0}}, {{3.0}, {4.0}}, {{5.0}, {6.0}}}, torch::kFloat64);
  const auto valid = torch::tensor({{true, false}, {true, false}, {false, false}});
  const auto p = pool_views(f, valid);
  EXPECT_DOUBLE_EQ(p[0][0].item<double>(), 2.0);
  EXPECT_DOUBLE_EQ(p[1][0].item<double>(), 4.0);  // nobody sees point 1: plain mean
}

}  // namespace
}  // namespace tpnerf
