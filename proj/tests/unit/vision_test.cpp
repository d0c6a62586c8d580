#include <random>

#include <gtest/gtest.h>

#include "rvlm/connector.hpp"
#include "rvlm/errors.hpp"
#include "rvlm/refiner.hpp"
#include "rvlm/vision_encoder.hpp"
#include "support.hpp"

namespace rvlm {
namespace {

using testing::random_mat;

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an rvlm::Error";
  return Errc::IoError;
}

Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img{h, w, std::vector<double>(static_cast<std::size_t>(h) * w * 3)};
  for (double& v : img.values) v = u(rng);
  return img;
}

FeatureGrid random_grid(int h, int w, int dim, std::mt19937_64& rng, Modality m = Modality::Rgb) {
  return FeatureGrid{m, h, w, random_mat(h * w, dim, rng)};
}

// ---------------------------------------------------------------- encoder

TEST(VisionEncoder, ZeroImageGivesIdenticalPatchVectors) {
  VisionEncoder enc(EncoderConfig{4, 8, 3});
  const auto grid = enc.encode_rgb(Image{16, 16, std::vector<double>(16 * 16 * 3, 0.0)});
  for (int k = 1; k < grid.values.rows(); ++k)
    for (int c = 0; c < grid.dim(); ++c) EXPECT_EQ(grid.values(k, c), grid.values(0, c));
}

TEST(VisionEncoder, GridShape) {
  VisionEncoder enc(EncoderConfig{16, 8, 3});
  std::mt19937_64 rng(1);
  const auto grid = enc.encode_rgb(random_image(32, 32, rng));
  EXPECT_EQ(grid.height, 2);
  EXPECT_EQ(grid.width, 2);
  EXPECT_EQ(grid.dim(), 8);
  EXPECT_EQ(grid.modality, Modality::Rgb);
}

TEST(VisionEncoder, DeterministicAcrossInstances) {
  std::mt19937_64 rng(2);
  const Image img = random_image(16, 16, rng);
  VisionEncoder a(EncoderConfig{4, 8, 9});
  VisionEncoder b(EncoderConfig{4, 8, 9});
  EXPECT_EQ(a.encode_rgb(img), a.encode_rgb(img));
  EXPECT_EQ(a.encode_rgb(img), b.encode_rgb(img));
  VisionEncoder c(EncoderConfig{4, 8, 10});
  EXPECT_NE(a.encode_rgb(img).values, c.encode_rgb(img).values);
}

TEST(VisionEncoder, MatchesPatchFlattenOracle) {
  std::mt19937_64 rng(3);
  const Image img = random_image(8, 12, rng);
  VisionEncoder enc(EncoderConfig{4, 5, 11});
  const auto grid = enc.encode_rgb(img);
  const Mat& proj = enc.projection();
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 3; ++px)
      for (int d = 0; d < 5; ++d) {
        double s = 0.0;
        int k = 0;
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) s += img.at(py * 4 + y, px * 4 + x, c) * proj(k++, d);
        EXPECT_NEAR(grid.cell(py, px)[d], s, 1e-12);
      }
}

TEST(VisionEncoder, ShapeErrors) {
  VisionEncoder enc(EncoderConfig{4, 8, 3});
  EXPECT_EQ(code_of([&] { enc.encode_rgb(Image{10, 8, std::vector<double>(240)}); }), Errc::ShapeError);
  EXPECT_EQ(code_of([&] { enc.encode_rgb(Image{8, 8, std::vector<double>(64)}); }), Errc::ShapeError);
  EXPECT_EQ(code_of([&] { enc.encode_depth(DepthMap{8, 6, std::vector<double>(48, 1.0)}); }), Errc::ShapeError);
  DepthMap bad{8, 8, std::vector<double>(64, 1.0)};
  bad.values[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { enc.encode_depth(bad); }), Errc::NonFiniteInput);
}

TEST(VisionEncoder, DepthEqualsRgbOfNormalizedReplica) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 7.0);
  VisionEncoder enc(EncoderConfig{4, 6, 5});
  for (int trial = 0; trial < 10; ++trial) {
    DepthMap d{8, 8, std::vector<double>(64)};
    for (double& v : d.values) v = u(rng);
    const double lo = *std::min_element(d.values.begin(), d.values.end());
    const double hi = *std::max_element(d.values.begin(), d.values.end());
    Image replica{8, 8, std::vector<double>(192)};
    for (int k = 0; k < 64; ++k)
      for (int c = 0; c < 3; ++c) replica.values[k * 3 + c] = (d.values[k] - lo) / (hi - lo);
    const auto got = enc.encode_depth(d);
    const auto want = enc.encode_rgb(replica);
    EXPECT_EQ(got.modality, Modality::Depth);
    for (std::size_t i = 0; i < got.values.size(); ++i)
      EXPECT_NEAR(got.values.flat()[i], want.values.flat()[i], 1e-12);
  }
}

TEST(VisionEncoder, DepthRangeNormalizesToUnitInterval) {
  DepthMap d{2, 2, {1.0, 2.0, 3.0, 1.5}};
  const Image img = depth_to_image(d);
  EXPECT_DOUBLE_EQ(img.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(img.at(0, 1, 1), 0.5);
  EXPECT_DOUBLE_EQ(img.at(1, 0, 2), 1.0);
  EXPECT_DOUBLE_EQ(img.at(1, 1, 0), 0.25);
}

TEST(VisionEncoder, ConstantDepthIsZeroImageEncoding) {
  VisionEncoder enc(EncoderConfig{4, 8, 3});
  const auto got = enc.encode_depth(DepthMap{8, 8, std::vector<double>(64, 2.5)});
  const auto zero = enc.encode_rgb(Image{8, 8, std::vector<double>(192, 0.0)});
  EXPECT_EQ(got.values, zero.values);
}

TEST(VisionEncoder, PatchLocality) {
  std::mt19937_64 rng(6);
  VisionEncoder enc(EncoderConfig{4, 8, 3});
  const Image base = random_image(12, 12, rng);
  const auto ref = enc.encode_rgb(base);
  for (int py = 0; py < 3; ++py)
    for (int px = 0; px < 3; ++px) {
      Image img = base;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          for (int c = 0; c < 3; ++c) {
            double& v = img.values[((py * 4 + y) * 12 + px * 4 + x) * 3 + c];
            v = 1.0 - v;
          }
      const auto got = enc.encode_rgb(img);
      for (int cy = 0; cy < 3; ++cy)
        for (int cx = 0; cx < 3; ++cx) {
          const bool same = std::equal(got.cell(cy, cx), got.cell(cy, cx) + 8, ref.cell(cy, cx));
          EXPECT_EQ(same, cy != py || cx != px) << py << px << cy << cx;
        }
    }
}

// -------------------------------------------------------------- connectors

TEST(PixelShuffle, FactorOneIsIdentity) {
  std::mt19937_64 rng(10);
  const auto g = random_grid(3, 5, 4, rng);
  EXPECT_EQ(pixel_shuffle(g, 1), g);
  EXPECT_EQ(pixel_unshuffle(g, 1), g);
}

TEST(PixelShuffle, TwoByTwoScanOrder) {
  const FeatureGrid g{Modality::Rgb, 2, 2, Mat(4, 1, {1.0, 2.0, 3.0, 4.0})};
  const auto s = pixel_shuffle(g, 2);
  EXPECT_EQ(s.height, 1);
  EXPECT_EQ(s.width, 1);
  EXPECT_EQ(s.values, Mat(1, 4, {1.0, 2.0, 3.0, 4.0}));
  EXPECT_EQ(pixel_unshuffle(s, 2), g);
}

TEST(PixelShuffle, MatchesLoopOracle) {
  std::mt19937_64 rng(11);
  const auto g = random_grid(4, 6, 3, rng);
  const auto s = pixel_shuffle(g, 2);
  ASSERT_EQ(s.height, 2);
  ASSERT_EQ(s.width, 3);
  ASSERT_EQ(s.dim(), 12);
  EXPECT_EQ(s.values.storage(), testing::shuffle_oracle(g.values.storage(), 4, 6, 3, 2));
}

TEST(PixelShuffle, PreservesMultisetAndRoundTrips) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 3);
    const int h = r * (1 + static_cast<int>(rng() % 3));
    const int w = r * (1 + static_cast<int>(rng() % 3));
    const int dim = 1 + static_cast<int>(rng() % 4);
    const auto g = random_grid(h, w, dim, rng);
    const auto s = pixel_shuffle(g, r);
    auto a = g.values.storage();
    auto b = s.values.storage();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(pixel_unshuffle(s, r), g);
  }
}

TEST(PixelShuffle, Errors) {
  std::mt19937_64 rng(13);
  EXPECT_EQ(code_of([&] { pixel_shuffle(random_grid(4, 6, 2, rng), 4); }), Errc::IndivisibleFactor);
  EXPECT_EQ(code_of([&] { pixel_shuffle(random_grid(3, 4, 2, rng), 2); }), Errc::IndivisibleFactor);
  EXPECT_EQ(code_of([&] { pixel_unshuffle(random_grid(2, 2, 6, rng), 2); }), Errc::IndivisibleChannels);
}

struct ConnectorFixture {
  ParamStore ps;
  Connector conn;
  ConnectorFixture(Modality m, int r, int dim, int lm_dim, std::uint64_t seed)
      : conn(m, r, ps.add("w", "rgb_connector", dim * r * r, lm_dim), ps.add("b", "rgb_connector", 1, lm_dim)) {
    std::mt19937_64 rng(seed);
    init_normal(conn.weight().value, 0.5, rng);
    init_normal(conn.bias().value, 0.5, rng);
  }
};

TEST(Connector, ZeroGridZeroBiasGivesZeros) {
  ConnectorFixture f(Modality::Rgb, 2, 3, 5, 20);
  f.conn.bias().value.fill(0.0);
  const auto out = f.conn.connect(FeatureGrid{Modality::Rgb, 4, 4, Mat(16, 3)});
  EXPECT_EQ(out.values, Mat(4, 5));
  EXPECT_EQ(out.grid_h, 2);
  EXPECT_EQ(out.grid_w, 2);
}

TEST(Connector, IdentityProjectionReturnsShuffledGrid) {
  ConnectorFixture f(Modality::Depth, 2, 2, 8, 21);
  f.conn.bias().value.fill(0.0);
  f.conn.weight().value.fill(0.0);
  for (int i = 0; i < 8; ++i) f.conn.weight().value(i, i) = 1.0;
  std::mt19937_64 rng(22);
  const auto g = random_grid(4, 2, 2, rng, Modality::Depth);
  EXPECT_EQ(f.conn.connect(g).values, pixel_shuffle(g, 2).values);
}

TEST(Connector, AffineOracleAndLinearity) {
  ConnectorFixture f(Modality::Rgb, 2, 3, 4, 23);
  std::mt19937_64 rng(24);
  const auto g = random_grid(4, 6, 3, rng);
  const auto flat = testing::shuffle_oracle(g.values.storage(), 4, 6, 3, 2);
  const auto out = f.conn.connect(g);
  ASSERT_EQ(out.count(), 6);
  for (int t = 0; t < 6; ++t)
    for (int o = 0; o < 4; ++o) {
      double s = f.conn.bias().value(0, o);
      for (int k = 0; k < 12; ++k) s += flat[t * 12 + k] * f.conn.weight().value(k, o);
      EXPECT_NEAR(out.values(t, o), s, 1e-12);
    }
  f.conn.bias().value.fill(0.0);
  FeatureGrid scaled = g;
  for (double& v : scaled.values.flat()) v *= -2.5;
  const auto a = f.conn.connect(g);
  const auto b = f.conn.connect(scaled);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(b.values.flat()[i], -2.5 * a.values.flat()[i], 1e-12);
}

TEST(Connector, RejectsOtherModality) {
  ConnectorFixture f(Modality::Rgb, 2, 3, 4, 25);
  std::mt19937_64 rng(26);
  EXPECT_EQ(code_of([&] { f.conn.connect(random_grid(4, 4, 3, rng, Modality::Depth)); }), Errc::ModalityMismatch);
  EXPECT_EQ(code_of([&] { f.conn.connect(random_grid(4, 4, 5, rng)); }), Errc::ShapeError);
  EXPECT_EQ(code_of([&] { f.conn.connect(random_grid(3, 4, 3, rng)); }), Errc::ShapeError);
}

TEST(Connector, GradientsMatchFiniteDifferences) {
  ConnectorFixture f(Modality::Rgb, 2, 2, 8, 27);
  std::mt19937_64 rng(28);
  const auto g = random_grid(4, 4, 2, rng);
  const Mat probe = random_mat(4, 8, rng);
  auto loss = [&](Graph& gr) {
    return ag::weighted_sum(f.conn.forward(gr, gr.constant(g.values), Modality::Rgb, 4, 4), probe);
  };
  const auto res = testing::check_param_grads(f.ps, {"rgb_connector"}, loss, 1.0, 1);
  EXPECT_EQ(res.checked, 72u);
  EXPECT_LT(res.max_rel, 1e-4);
  const auto in = testing::check_input_grads(g.values, [&](Graph& gr, Var x) {
    return ag::weighted_sum(f.conn.forward(gr, x, Modality::Rgb, 4, 4), probe);
  });
  EXPECT_LT(in.max_rel, 1e-4);
}

// ----------------------------------------------------------------- refiner

struct RefinerFixture {
  ParamStore ps;
  std::unique_ptr<Refiner> ref;
  RefinerFixture(const std::vector<int>& channels, std::uint64_t seed, double scale = 0.3) {
    std::vector<RefinerLayer> layers;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
      auto& w = ps.add("w" + std::to_string(i), "rgb_refiner", 16 * channels[i], channels[i + 1]);
      auto& b = ps.add("b" + std::to_string(i), "rgb_refiner", 1, channels[i + 1]);
      init_normal(w.value, scale, rng);
      init_normal(b.value, scale, rng);
      layers.push_back(RefinerLayer{&w, &b});
    }
    ref = std::make_unique<Refiner>(Modality::Rgb, std::move(layers));
  }
};

TEST(Refiner, ZeroInputZeroBiasGivesZeros) {
  RefinerFixture f({3, 4, 2}, 30);
  for (std::size_t i = 0; i < f.ps.size(); ++i)
    if (f.ps.at(i).name[0] == 'b') f.ps.at(i).value.fill(0.0);
  const auto out = f.ref->refine(TokenEmbeddings{Modality::Rgb, 2, 3, Mat(6, 3)});
  EXPECT_EQ(out.height, 8);
  EXPECT_EQ(out.width, 12);
  EXPECT_EQ(out.values, Mat(96, 2));
}

TEST(Refiner, SingleCellSingleChannel) {
  RefinerFixture f({1, 1}, 31);
  f.ps.at(0).value.fill(0.75);
  f.ps.at(1).value.fill(0.0);
  const auto out = f.ref->refine(TokenEmbeddings{Modality::Rgb, 1, 1, Mat(1, 1, {2.0})});
  EXPECT_EQ(out.values, Mat(4, 1, 1.5));
}

TEST(Refiner, TransposeConvMatchesGatherOracle) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    const int h = 1 + trial % 3, w = 2 + trial % 2, cin = 1 + trial % 3, cout = 2;
    const Mat x = random_mat(h * w, cin, rng);
    const Mat wt = random_mat(16 * cin, cout, rng);
    const Mat b = random_mat(1, cout, rng);
    Graph g;
    const Var out = ag::transpose_conv2d(g.constant(x), h, w, g.constant(wt), g.constant(b));
    const Mat want = testing::tconv_oracle(x, h, w, wt, b);
    ASSERT_TRUE(out.value().same_shape(want));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.value().flat()[i], want.flat()[i], 1e-12);
  }
}

TEST(Refiner, TwoLayersMatchComposedOracle) {
  RefinerFixture f({2, 3, 2}, 33);
  std::mt19937_64 rng(34);
  const Mat x = random_mat(4, 2, rng);
  Mat hidden = testing::tconv_oracle(x, 2, 2, f.ps.at(0).value, f.ps.at(1).value);
  for (double& v : hidden.flat()) v = std::max(v, 0.0);
  const Mat want = testing::tconv_oracle(hidden, 4, 4, f.ps.at(2).value, f.ps.at(3).value);
  const auto got = f.ref->refine(TokenEmbeddings{Modality::Rgb, 2, 2, x});
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.values.flat()[i], want.flat()[i], 1e-12);
}

TEST(Refiner, RejectsOtherModalityAndWidth) {
  RefinerFixture f({3, 2}, 35);
  EXPECT_EQ(code_of([&] { f.ref->refine(TokenEmbeddings{Modality::Depth, 1, 1, Mat(1, 3)}); }),
            Errc::ModalityMismatch);
  EXPECT_EQ(code_of([&] { f.ref->refine(TokenEmbeddings{Modality::Rgb, 1, 1, Mat(1, 4)}); }), Errc::ShapeError);
}

TEST(Refiner, GradientsMatchFiniteDifferences) {
  RefinerFixture f({4, 3, 2}, 36, 0.5);
  std::mt19937_64 rng(37);
  const Mat x = random_mat(4, 4, rng);
  const Mat probe = random_mat(64, 2, rng);
  auto loss = [&](Graph& g) { return ag::weighted_sum(f.ref->forward(g, g.constant(x), Modality::Rgb, 2, 2), probe); };
  const auto res = testing::check_param_grads(f.ps, {"rgb_refiner"}, loss, 1.0, 2);
  EXPECT_EQ(res.checked, f.ps.count_values());
  EXPECT_LT(res.max_rel, 1e-4);
}

// --------------------------------------------------------------- mask pool

BinaryGrid random_mask(int h, int w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  BinaryGrid m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  for (auto& c : m.cells) c = b(rng) ? 1 : 0;
  return m;
}

TEST(MaskPool, HandComputedMean) {
  const FeatureGrid grid{Modality::Rgb, 2, 2, Mat(4, 1, {1.0, 2.0, 3.0, 4.0})};
  const RegionMask mask{2, 2, Bitmap{{1, 1, 0, 1}}};
  EXPECT_NEAR(mask_pool(grid, mask).values(0, 0), 7.0 / 3.0, 1e-15);
}

TEST(MaskPool, ConstantFullAndSingletonMasks) {
  std::mt19937_64 rng(40);
  const Mat v = random_mat(1, 3, rng);
  FeatureGrid constant{Modality::Rgb, 4, 4, Mat(16, 3)};
  for (int k = 0; k < 16; ++k)
    for (int c = 0; c < 3; ++c) constant.values(k, c) = v(0, c);
  const auto pooled = mask_pool(constant, encode_mask(random_mask(8, 8, rng, 0.9))).values;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pooled(0, c), v(0, c), 1e-15);

  const auto grid = random_grid(4, 4, 3, rng);
  BinaryGrid one{4, 4, std::vector<std::uint8_t>(16, 0)};
  one.cells[9] = 1;
  EXPECT_EQ(mask_pool(grid, encode_mask(one)).values, Mat(1, 3, {grid.values(9, 0), grid.values(9, 1), grid.values(9, 2)}));
}

TEST(MaskPool, MatchesShuffledOracle) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 6), w = 1 + static_cast<int>(rng() % 6);
    const int mh = h * (1 + static_cast<int>(rng() % 3)), mw = w * (1 + static_cast<int>(rng() % 3));
    const auto grid = random_grid(h, w, 3, rng);
    const auto mask = random_mask(mh, mw, rng, 0.3);
    const auto sel = testing::resample_oracle(mask, h, w);
    const bool empty = std::none_of(sel.begin(), sel.end(), [](auto c) { return c != 0; });
    if (empty) {
      EXPECT_EQ(code_of([&] { mask_pool(grid, encode_mask(mask)); }), Errc::EmptyRegion);
      continue;
    }
    const auto want = testing::masked_mean_oracle(grid.values, sel, rng);
    const auto got = mask_pool(grid, encode_mask(mask));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(got.values(0, c), want[c], 1e-10);
  }
}

TEST(MaskPool, ResampleMatchesCellCentreRule) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mask(3 + static_cast<int>(rng() % 30), 3 + static_cast<int>(rng() % 30), rng, 0.5);
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    EXPECT_EQ(resample_mask(m, h, w).cells, testing::resample_oracle(m, h, w));
  }
}

TEST(MaskPool, DisjointUnionIdentity) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto grid = random_grid(5, 5, 4, rng);
    BinaryGrid a{5, 5, std::vector<std::uint8_t>(25, 0)}, b = a, u = a;
    for (int k = 0; k < 25; ++k) {
      const auto pick = rng() % 3;
      a.cells[k] = pick == 0;
      b.cells[k] = pick == 1;
      u.cells[k] = pick != 2;
    }
    if (a.active() == 0 || b.active() == 0) continue;
    const auto pa = mask_pool(grid, encode_mask(a)).values;
    const auto pb = mask_pool(grid, encode_mask(b)).values;
    const auto pu = mask_pool(grid, encode_mask(u)).values;
    const double na = static_cast<double>(a.active()), nb = static_cast<double>(b.active());
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(pu(0, c), (na * pa(0, c) + nb * pb(0, c)) / (na + nb), 1e-10);
  }
}

TEST(MaskPool, GradientIsOneOverMaskSize) {
  std::mt19937_64 rng(44);
  const Mat x = random_mat(9, 2, rng);
  const BinaryGrid m{3, 3, {1, 0, 1, 0, 1, 0, 0, 0, 0}};
  Graph g;
  const Var xin = g.input(x);
  g.backward(ag::weighted_sum(mask_pool(xin, m, 3, 3), Mat(1, 2, 1.0)));
  const Mat grad = g.grad(xin);
  for (int k = 0; k < 9; ++k)
    for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(grad(k, c), m.cells[k] ? 1.0 / 3.0 : 0.0);
  const auto fd = testing::check_input_grads(x, [&](Graph& gr, Var v) {
    return ag::weighted_sum(mask_pool(v, m, 3, 3), Mat(1, 2, 1.0));
  });
  EXPECT_LT(fd.max_rel, 1e-6);
}

}  // namespace
}  // namespace rvlm
