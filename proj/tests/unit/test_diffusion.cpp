#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fridu/diffusion/train.hpp"

using namespace fridu;
using namespace fridu::edm;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// Checks d/dx <r, f(x)> against central differences for a few entries of x.
void check_input_grad(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                      const std::function<Tensor<double>(const Tensor<double>&)>& grad, Tensor<double> x,
                      std::uint64_t seed, double tol = 1e-6) {
  const Tensor<double> y = f(x);
  const Tensor<double> r = random_tensor(y.n, y.c, y.h, y.w, seed);
  const Tensor<double> g = grad(r);
  ASSERT_TRUE(g.same_shape(x));
  auto dot = [&](const Tensor<double>& a) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * r.data[i];
    return s;
  };
  Rng rng(seed + 1);
  for (int trial = 0; trial < 25; ++trial) {
    const size_t j = rng.below(x.size());
    const double h = 1e-5, old = x.data[j];
    x.data[j] = old + h;
    const double up = dot(f(x));
    x.data[j] = old - h;
    const double dn = dot(f(x));
    x.data[j] = old;
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(g.data[j], fd, tol * std::max(1.0, std::abs(fd))) << "entry " << j;
  }
}

void check_param_grad(nn::ParamStore<double>& ps, const std::function<double()>& loss, std::uint64_t seed,
                      double tol = 1e-6, int trials = 40) {
  Rng rng(seed);
  const std::vector<double> analytic = ps.grad;
  for (int trial = 0; trial < trials; ++trial) {
    const size_t j = rng.below(ps.size());
    const double h = 1e-5, old = ps.value[j];
    ps.value[j] = old + h;
    const double up = loss();
    ps.value[j] = old - h;
    const double dn = loss();
    ps.value[j] = old;
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(analytic[j], fd, tol * std::max(1.0, std::abs(fd))) << ps.entries.size() << " param " << j;
  }
}

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

class ConvGrad : public ::testing::TestWithParam<int> {};

TEST_P(ConvGrad, MatchesFiniteDifferences) {
  const int k = GetParam();
  nn::ParamStore<double> ps;
  nn::Conv2d<double> conv(ps, "c", 3, 5, k);
  Rng rng(1);
  conv.init(rng, 1.0);
  for (size_t i = ps.size() - 5; i < ps.size(); ++i) ps.value[i] = rng.normal();
  const Tensor<double> x = random_tensor(2, 3, 6, 7, 2);
  const Tensor<double> r = random_tensor(2, 5, 6, 7, 3);
  check_input_grad([&](const Tensor<double>& in) { return conv.forward(in, false); },
                   [&](const Tensor<double>& dy) {
                     conv.forward(x, true);
                     return conv.backward(dy);
                   },
                   x, 4);
  ps.zero_grad();
  conv.forward(x, true);
  conv.backward(r);
  check_param_grad(ps, [&] { return inner(conv.forward(x, false), r); }, 5);
}

INSTANTIATE_TEST_SUITE_P(Kernels, ConvGrad, ::testing::Values(1, 3));

TEST(Conv2d, ThreeByThreeMatchesDirectSum) {
  nn::ParamStore<double> ps;
  nn::Conv2d<double> conv(ps, "c", 2, 3, 3);
  Rng rng(6);
  for (auto& v : ps.value) v = rng.normal();
  const Tensor<double> x = random_tensor(1, 2, 5, 4, 7);
  const Tensor<double> y = conv.forward(x, false);
  for (int o = 0; o < 3; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 4; ++xx) {
        double s = ps.value[ps.entries[1].offset + o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
              s += ps.value[((o * 2 + c) * 3 + ky) * 3 + kx] * x.at(0, c, sy, sx);
            }
        EXPECT_NEAR(y.at(0, o, yy, xx), s, 1e-12);
      }
}

TEST(GroupNorm, GradientsMatchFiniteDifferences) {
  nn::ParamStore<double> ps;
  nn::GroupNorm<double> gn(ps, "g", 8);
  Rng rng(8);
  for (auto& v : ps.value) v = 1.0 + 0.3 * rng.normal();
  const Tensor<double> x = random_tensor(2, 8, 3, 4, 9);
  const Tensor<double> r = random_tensor(2, 8, 3, 4, 10);
  check_input_grad([&](const Tensor<double>& in) { return gn.forward(in, false); },
                   [&](const Tensor<double>& dy) {
                     gn.forward(x, true);
                     return gn.backward(dy);
                   },
                   x, 11);
  ps.zero_grad();
  gn.forward(x, true);
  gn.backward(r);
  check_param_grad(ps, [&] { return inner(gn.forward(x, false), r); }, 12, 1e-6, 16);
}

TEST(GroupNorm, NormalizesEachGroup) {
  nn::ParamStore<double> ps;
  nn::GroupNorm<double> gn(ps, "g", 8);  // 2 groups of 4
  const Tensor<double> y = gn.forward(random_tensor(1, 8, 5, 5, 13), false);
  for (int g = 0; g < 2; ++g) {
    double m = 0, v = 0;
    for (int j = 0; j < 100; ++j) m += y.data[g * 100 + j];
    for (int j = 0; j < 100; ++j) v += std::pow(y.data[g * 100 + j] - m / 100, 2);
    EXPECT_NEAR(m / 100, 0.0, 1e-12);
    EXPECT_NEAR(v / 100, 1.0, 1e-3);
  }
}

TEST(Layers, SiLUPoolUpsampleGradients) {
  nn::SiLU<double> act;
  const Tensor<double> x = random_tensor(2, 3, 4, 6, 14);
  check_input_grad([&](const Tensor<double>& in) { return act.forward(in, false); },
                   [&](const Tensor<double>& dy) {
                     act.forward(x, true);
                     return act.backward(dy);
                   },
                   x, 15);
  check_input_grad([](const Tensor<double>& in) { return nn::avg_pool2(in); },
                   [](const Tensor<double>& dy) { return nn::avg_pool2_backward(dy); }, x, 16);
  check_input_grad([](const Tensor<double>& in) { return nn::upsample2(in); },
                   [](const Tensor<double>& dy) { return nn::upsample2_backward(dy); }, x, 17);
  EXPECT_THROW(nn::avg_pool2(random_tensor(1, 1, 3, 4, 1)), ShapeError);
}

TEST(UNet, EndToEndGradientsMatchFiniteDifferences) {
  nn::UNetConfig cfg;
  cfg.model_channels = 4;
  cfg.channel_mult_emb = 1.0;
  nn::UNet<double> net(cfg, 18);
  // Give the zero-ish output layers real weights so every path carries gradient.
  Rng rng(19);
  for (auto& v : net.params().value) v += 0.1 * rng.normal();
  const Tensor<double> x = random_tensor(2, 4, 8, 8, 20);
  const std::vector<double> noise = {-0.3, 0.7};
  const Tensor<double> r = random_tensor(2, 1, 8, 8, 21);
  net.params().zero_grad();
  net.forward(x, noise, true);
  const Tensor<double> dx = net.backward(r);
  check_param_grad(net.params(), [&] { return inner(net.forward(x, noise, false), r); }, 22, 1e-5, 60);
  check_input_grad([&](const Tensor<double>& in) { return net.forward(in, noise, false); },
                   [&](const Tensor<double>&) { return dx; }, x, 21, 1e-5);
}

TEST(UNet, PreservesShapeAtTrainedPatchSizes) {
  nn::UNetConfig cfg;
  cfg.model_channels = 4;
  nn::UNet<float> net(cfg, 23);
  for (int p : {32, 64, 128}) {
    const Tensor<float> y = net.forward(Tensor<float>(1, 4, p, p, 0.1f), {0.f});
    EXPECT_EQ(y.h, p);
    EXPECT_EQ(y.w, p);
    EXPECT_EQ(y.c, 1);
  }
  EXPECT_THROW(net.forward(Tensor<float>(1, 4, 7, 8), {0.f}), ShapeError);
  EXPECT_THROW(net.forward(Tensor<float>(1, 3, 8, 8), {0.f}), ShapeError);
}

TEST(UNet, DefaultArchitectureWidths) {
  const nn::UNetConfig cfg;
  EXPECT_EQ(cfg.model_channels, 16);
  EXPECT_EQ(cfg.num_blocks, 2);
  EXPECT_EQ(cfg.channel_mult, (std::vector<int>{2, 4}));
  EXPECT_EQ(cfg.in_channels, 4);
  EXPECT_EQ(cfg.emb_channels(), 2);
  nn::UNet<float> net(cfg);
  EXPECT_EQ(net.forward(Tensor<float>(1, 4, 16, 16), {0.f}).c, 1);
}

TEST(Edm, LossWeightIdentityAndSubstitution) {
  const double sd = 0.5;
  for (int i = 0; i < 10; ++i) {
    const double s = std::pow(10.0, -3.0 + 5.0 * i / 9.0);
    EXPECT_NEAR(loss_weight(s, sd) * std::pow(c_out(s, sd), 2), 1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(loss_weight(sd, sd), 2.0 / (sd * sd));
  EXPECT_GT(loss_weight(1e-8, sd), 1e15);
  EXPECT_NEAR(c_skip(1e-9, sd), 1.0, 1e-15);
}

TEST(Edm, SampleSigma) {
  EDMConfig cfg;
  cfg.p_std = 0.0;
  Rng rng(24);
  EXPECT_DOUBLE_EQ(sample_sigma(cfg, rng), std::exp(cfg.p_mean));
  cfg = EDMConfig{};
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double s = sample_sigma(cfg, rng);
    ASSERT_GT(s, 0.0);
    acc += std::log(s);
  }
  EXPECT_NEAR(acc / n, cfg.p_mean, 3 * cfg.p_std / std::sqrt(n));
}

TEST(Edm, Corrupt) {
  Rng rng(25);
  const Eigen::MatrixXd c = standard_normal(8, 8, rng), e = standard_normal(8, 8, rng);
  EXPECT_EQ(corrupt(c, 0.0, e), c);
  EXPECT_EQ(corrupt(c, 3.0, Eigen::MatrixXd::Zero(8, 8)), c);
  EXPECT_THROW(corrupt(c, 1.0, Eigen::MatrixXd::Zero(8, 7)), DimensionError);
  const double sigma = 1.7;
  double ss = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) ss += (corrupt(c, sigma, standard_normal(8, 8, rng)) - c).squaredNorm();
  EXPECT_NEAR(ss / (trials * 64.0), sigma * sigma, 0.05 * sigma * sigma);
}

TEST(Edm, DenoiseSkipPathAndLimits) {
  nn::UNetConfig cfg;
  cfg.model_channels = 4;
  nn::UNet<float> net(cfg, 26);
  net.zero_output_head();
  Rng rng(27);
  const Eigen::MatrixXd x = standard_normal(16, 16, rng), cond = standard_normal(16, 16, rng);
  for (double s : {0.01, 0.5, 10.0}) EXPECT_LT((denoise(net, x, cond, s, 0.5) - c_skip(s, 0.5) * x).norm(), 1e-12);
  nn::UNet<float> live(cfg, 28);
  EXPECT_LT((denoise(live, x, cond, 1e-6, 0.5) - x).cwiseAbs().maxCoeff(), 1e-4);
  const Eigen::MatrixXd a = denoise(live, x, cond, 0.7, 0.5), b = denoise(live, x, cond, 0.7, 0.5);
  EXPECT_EQ(a, b);
  EXPECT_THROW(denoise(live, x, Eigen::MatrixXd::Zero(16, 8), 0.7, 0.5), ShapeError);
}

TEST(Edm, DatasetScale) {
  EXPECT_THROW(dataset_scale({}, 0.5), EmptyDatasetError);
  std::vector<TrainingExample> flat = {{"a", Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXd::Constant(4, 4, 3.0)}};
  EXPECT_THROW(dataset_scale(flat, 0.5), ScaleDegenerateError);

  Rng rng(29);
  std::vector<TrainingExample> ex;
  for (int i = 0; i < 20; ++i) ex.push_back({"p" + std::to_string(i), standard_normal(32, 32, rng), 2.0 * standard_normal(32, 32, rng)});
  const DataScale s = dataset_scale(ex, 0.5);
  EXPECT_NEAR(s.s_data, 2.0, 0.05);
  const auto scaled = apply_scale(ex, s);
  double ss = 0, mean = 0;
  for (const auto& e : scaled) mean += e.c_gt.sum();
  mean /= 20 * 1024.0;
  for (const auto& e : scaled) ss += (e.c_gt.array() - mean).square().sum();
  EXPECT_NEAR(std::sqrt(ss / (20 * 1024.0)), 0.5, 1e-12);
  EXPECT_LT((s.unscale(s.scale(ex[3].c_gt)) - ex[3].c_gt).cwiseAbs().maxCoeff(), 1e-12);
  ex[0].c_init.resize(3, 3);
  EXPECT_THROW(apply_scale(ex, s), DimensionError);
}

TEST(Patches, FullAndQuarterCoordinates) {
  Rng rng(30);
  TrainingExample ex{"x", standard_normal(128, 128, rng), standard_normal(128, 128, rng)};
  const PatchSample full = sample_patch(ex, 0.3, 128, rng);
  EXPECT_EQ(full.row0, 0);
  EXPECT_EQ(full.col0, 0);
  EXPECT_EQ(coord(full.row0, 128), -1.0);
  EXPECT_EQ(coord(full.row0 + 127, 128), 1.0);
  // Quarter patch at the top-left corner.
  EXPECT_DOUBLE_EQ(coord(0 + 31, 128), -1.0 + 2.0 * 31 / 127);
  nn::Tensor<double> t(1, 4, 32, 32);
  fill_input(t, 0, Eigen::MatrixXd::Zero(32, 32), Eigen::MatrixXd::Zero(32, 32), 0, 0, 128, 1.0);
  EXPECT_EQ(t.at(0, 2, 0, 0), -1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 2, 31, 0), -1.0 + 2.0 * 31 / 127);
  EXPECT_DOUBLE_EQ(t.at(0, 3, 0, 31), -1.0 + 2.0 * 31 / 127);

  const PatchSample q = sample_patch(ex, 0.3, 32, rng);
  EXPECT_EQ(q.target, ex.c_gt.block(q.row0, q.col0, 32, 32));
  EXPECT_EQ(q.cond, ex.c_init.block(q.row0, q.col0, 32, 32));
}

TEST(Patches, OffsetsAreUniform) {
  Rng rng(31);
  TrainingExample ex{"x", Eigen::MatrixXd::Zero(16, 16), Eigen::MatrixXd::Zero(16, 16)};
  const int p = 12, cells = 16 - p + 1, draws = 10000;  // 5 offsets per axis
  std::vector<int> counts(cells * cells, 0);
  for (int i = 0; i < draws; ++i) {
    const auto s = sample_patch(ex, 1.0, p, rng);
    ++counts[s.row0 * cells + s.col0];
  }
  const double expected = static_cast<double>(draws) / counts.size();
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 51.2);  // 24 dof, p = 0.001
}

TEST(Patches, ResolutionMixing) {
  Rng rng(32);
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 20000; ++i) {
    const int p = draw_resolution(64, {0.5, 0.25, 0.25}, rng);
    counts[p == 64 ? 0 : p == 32 ? 1 : 2]++;
  }
  EXPECT_NEAR(counts[0] / 20000.0, 0.5, 0.02);
  EXPECT_NEAR(counts[1] / 20000.0, 0.25, 0.02);
  EXPECT_NEAR(counts[2] / 20000.0, 0.25, 0.02);
}

namespace {

std::vector<TrainingExample> tiny_dataset(int size, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingExample> ex;
  for (int i = 0; i < count; ++i) {
    Eigen::MatrixXd gt = Eigen::MatrixXd::Identity(size, size);
    for (int j = 0; j < size; ++j) gt(j, j) = (j % 3 == 0) ? -1.0 : 1.0;
    ex.push_back({"t" + std::to_string(i), gt + 0.3 * standard_normal(size, size, rng), gt});
  }
  return ex;
}

}  // namespace

TEST(Train, SingleExampleProbeLossFallsTenfold) {
  auto raw = tiny_dataset(16, 1, 33);
  const DataScale sc = dataset_scale(raw, 0.5);
  const auto data = apply_scale(raw, sc);
  nn::UNetConfig net;
  net.model_channels = 8;
  EDMConfig ec;
  ec.image_size = 16;
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 4;
  tc.probe_every = 500;
  tc.seed = 34;
  const auto res = train(data, net, ec, tc, sc);
  ASSERT_GE(res.curve.size(), 2u);
  EXPECT_LT(res.curve.back().probe_loss, res.curve.front().probe_loss / 10.0)
      << res.curve.front().probe_loss << " -> " << res.curve.back().probe_loss;
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  auto raw = tiny_dataset(16, 3, 35);
  const DataScale sc = dataset_scale(raw, 0.5);
  const auto data = apply_scale(raw, sc);
  nn::UNetConfig net;
  net.model_channels = 4;
  EDMConfig ec;
  ec.image_size = 16;
  TrainConfig tc;
  tc.steps = 20;
  tc.batch_size = 2;
  tc.probe_every = 5;
  tc.checkpoint_every = 10;
  tc.seed = 36;
  const fs::path dir = fs::temp_directory_path() / "fridu_resume_test";
  fs::create_directories(dir);
  std::vector<TrainState> saved;
  const auto full = train(data, net, ec, tc, sc, std::nullopt, {}, [&](const TrainState& s) {
    nn::UNet<float> layout_net(s.net);
    save_checkpoint(dir / ("ck" + std::to_string(s.step) + ".bin"), s, layout_net.params().entries);
    saved.push_back(s);
  });
  ASSERT_EQ(saved.size(), 2u);
  const TrainState mid = load_checkpoint(dir / "ck10.bin");
  EXPECT_EQ(mid.step, 10);
  EXPECT_EQ(mid.params, saved[0].params);
  EXPECT_EQ(mid.adam_v, saved[0].adam_v);
  EXPECT_EQ(mid.scale.s_data, sc.s_data);
  const auto resumed = train(data, net, ec, tc, sc, mid);
  EXPECT_EQ(resumed.state.params, full.state.params);
  EXPECT_EQ(resumed.state.ema, full.state.ema);
  ASSERT_EQ(resumed.curve.size(), 2u);
  EXPECT_EQ(resumed.curve.back().probe_loss, full.curve.back().probe_loss);
  EXPECT_EQ(resumed.curve.back().train_loss, full.curve.back().train_loss);

  write_file_atomic(dir / "bad.bin", "NOTACKPT00000000");
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), MissingArtifactError);
  fs::remove_all(dir);
}

TEST(Train, Validation) {
  nn::UNetConfig net;
  net.model_channels = 4;
  EDMConfig ec;
  ec.image_size = 16;
  TrainConfig tc;
  tc.steps = 1;
  EXPECT_THROW(train({}, net, ec, tc, {}), EmptyDatasetError);
  auto data = tiny_dataset(8, 1, 37);
  EXPECT_THROW(train(data, net, ec, tc, {}), ConfigError);
  tc.patch_probs = {0.5, 0.6};
  ec.image_size = 8;
  EXPECT_THROW(train(data, net, ec, tc, {}), ConfigError);
}

TEST(Train, DivergenceIsReported) {
  auto data = tiny_dataset(16, 1, 38);
  nn::UNetConfig net;
  net.model_channels = 4;
  EDMConfig ec;
  ec.image_size = 16;
  TrainConfig tc;
  tc.steps = 50;
  tc.batch_size = 2;
  tc.lr = 1e30;
  EXPECT_THROW(train(data, net, ec, tc, {}), DivergenceError);
}
