#include <gtest/gtest.h>

#include <cmath>

#include "agspnet/nn/gradcheck.hpp"
#include "agspnet/scd_net.hpp"
#include "support/ccam_oracle.hpp"
#include "support/tensors.hpp"

using namespace agspnet;
using namespace agspnet::scd;
using nn::Shape;
using nn::Tensor;
using testutil::random_tensor;
using testutil::random_var;
using oracle::ccam_oracle;

namespace {

template <typename T>
void randomize(nn::Registry<T>& reg, std::uint64_t seed, double scale = 0.5) {
  for (auto& p : reg.params()) {
    p.value() = random_tensor<T>(p.value().shape, seed++, -scale, scale);
  }
}

ScdConfig tiny_config() {
  ScdConfig c;
  c.stem = 4;
  c.features = 8;
  c.reduced = 8;
  c.head = 6;
  c.change = 4;
  c.classes_t1 = 3;
  c.classes_t2 = 4;
  return c;
}

ScdSample tile_pair(int size, std::uint64_t seed) {
  Rng rng(seed);
  ScdSample s;
  s.img_t1 = Tensor<float>(Shape{1, 3, size, size});
  s.img_t2 = s.img_t1;
  const int half = size / 2;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const int a = (c >= half) + 1, b = (r >= half) ? 3 : a;
      s.y_t1.push_back(a);
      s.y_t2.push_back(b);
      s.y_bcd.push_back(r >= half && a != 3 ? 1.0f : 0.0f);
      for (int band = 0; band < 3; ++band) {
        s.img_t1.at(0, band, r, c) = 0.15f * ((a + band) % 3) - 0.2f + static_cast<float>(rng.normal() * 0.02);
        s.img_t2.at(0, band, r, c) = 0.15f * ((b * 2 + band) % 3) - 0.2f + static_cast<float>(rng.normal() * 0.02);
      }
    }
  return s;
}

}  // namespace

TEST(Ccam, MatchesBruteForceOracle) {
  nn::Registry<double> reg(1);
  Ccam<double> m(reg, "ccam", 4);
  randomize(reg, 10, 1.0);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto x = random_tensor<double>({1, 4, 5, 6}, seed);
    const auto oracle = ccam_oracle(x, m);
    const auto got = m(nn::leaf(x));
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(got->value.data[i], oracle.data[i], 1e-5);
  }
  nn::Registry<float> regf(1);
  Ccam<float> mf(regf, "ccam", 4);
  for (std::size_t i = 0; i < reg.params().size(); ++i) regf.params()[i].value() = reg.params()[i].value().cast<float>();
  const auto x = random_tensor<double>({1, 4, 5, 6}, 9);
  const auto oracle = ccam_oracle(x, m);
  const auto got = mf(nn::leaf(x.cast<float>()));
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(got->value.data[i], oracle.data[i], 1e-5);
}

TEST(Ccam, SinglePixelIsValuePlusInput) {
  nn::Registry<double> reg(2);
  Ccam<double> m(reg, "ccam", 8);
  randomize(reg, 3);
  const auto x = random_var<double>({2, 8, 1, 1}, 4, false);
  const auto v = m.v(x);
  const auto y = m(x);
  EXPECT_EQ(m.attention(x)->value.data, std::vector<double>(2, 1.0));
  for (std::size_t i = 0; i < y->value.size(); ++i) EXPECT_DOUBLE_EQ(y->value.data[i], v->value.data[i] + x->value.data[i]);
}

TEST(Ccam, ZeroQueryGivesUniformAttention) {
  nn::Registry<double> reg(3);
  Ccam<double> m(reg, "ccam", 8);
  randomize(reg, 5);
  std::fill(m.q.weight->value().data.begin(), m.q.weight->value().data.end(), 0.0);
  std::fill(m.q.bias->value().data.begin(), m.q.bias->value().data.end(), 0.0);
  const auto x = random_var<double>({1, 8, 4, 5}, 6, false);
  const auto v = m.v(x)->value;
  const auto y = m(x)->value;
  for (int c = 0; c < 8; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 5; ++w) {
        double mean = 0;
        for (int i = 0; i < 4; ++i) mean += v.at(0, c, i, w);
        for (int j = 0; j < 5; ++j)
          if (j != w) mean += v.at(0, c, h, j);
        mean /= 8.0;
        EXPECT_NEAR(y.at(0, c, h, w), mean + x->value.at(0, c, h, w), 1e-12);
      }
}

TEST(Ccam, AttentionRowsSumToOne) {
  nn::Registry<float> reg(4);
  Ccam<float> m(reg, "ccam", 16);
  const auto x = random_var<float>({2, 16, 7, 9}, 7, false);
  for (auto& v : x->value.data) v *= 3.0f;
  const auto a = m.attention(x)->value;
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 7; ++h)
      for (int w = 0; w < 9; ++w) {
        double s = 0;
        for (int j = 0; j < 15; ++j) s += a.at(n, j, h, w);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
}

TEST(Ccam, LocalityOfSinglePass) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    nn::Registry<double> reg(seed);
    Ccam<double> m(reg, "ccam", 8);
    const auto x = random_var<double>({1, 8, 5, 6}, seed + 100);
    const int p = static_cast<int>(seed % 5), q = static_cast<int>(seed % 6);
    const auto y = m(x);
    std::vector<double> seed_grad(y->value.size(), 0.0);
    for (int c = 0; c < 8; ++c) seed_grad[y->value.offset(0, c, p, q)] = 1.0;
    x->grad.clear();
    nn::backward(y, seed_grad);
    for (int c = 0; c < 8; ++c)
      for (int r = 0; r < 5; ++r)
        for (int s = 0; s < 6; ++s) {
          if (r != p && s != q) {
            EXPECT_EQ(x->grad[x->value.offset(0, c, r, s)], 0.0) << seed;
          }
        }
  }
}

TEST(Ccam, TwoPassesReachEveryPixel) {
  nn::Registry<double> reg(7);
  Ccam<double> m(reg, "ccam", 8);
  Rng rng(8);
  int hits = 0, total = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto x = random_var<double>({1, 8, 6, 7}, 200 + trial);
    int p, q, r, s;
    do {
      p = rng.range(0, 5), q = rng.range(0, 6), r = rng.range(0, 5), s = rng.range(0, 6);
    } while (p == r || q == s);
    const auto y = rcca(m, x, 2);
    std::vector<double> g(y->value.size(), 0.0);
    for (int c = 0; c < 8; ++c) g[y->value.offset(0, c, p, q)] = 1.0;
    nn::backward(y, g);
    bool nonzero = false;
    for (int c = 0; c < 8; ++c) nonzero = nonzero || x->grad[x->value.offset(0, c, r, s)] != 0.0;
    hits += nonzero;
    ++total;
  }
  EXPECT_GE(hits, 0.95 * total);
}

TEST(Rcca, CompositionAndGradcheck) {
  nn::Registry<double> reg(9);
  Ccam<double> m(reg, "ccam", 8);
  const auto x = random_var<double>({1, 8, 4, 5}, 10);
  EXPECT_EQ(rcca(m, x, 1)->value.data, m(x)->value.data);
  EXPECT_EQ(rcca(m, x, 2)->value.data, m(m(x))->value.data);
  EXPECT_THROW(rcca(m, x, 0), ConfigError);
  for (const Shape s : {Shape{1, 8, 4, 5}, Shape{2, 8, 3, 3}, Shape{1, 8, 5, 2}}) {
    const auto xi = random_var<double>(s, s.h * 7 + s.w);
    std::vector<nn::Var<double>> leaves{xi};
    for (auto& p : reg.params()) leaves.push_back(p.var);
    auto rep = nn::gradcheck([&] { return m(xi); }, leaves);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
    rep = nn::gradcheck([&] { return rcca(m, xi, 2); }, leaves);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  }
}

TEST(SegHead, ShapeAndUniformPosterior) {
  ScdModel<float> model(1);
  const auto img = nn::leaf(random_tensor<float>({2, 3, 32, 32}, 3));
  const auto out = model.forward(img, img);
  EXPECT_EQ(out.seg_t1->value.shape, (Shape{2, 5, 32, 32}));
  EXPECT_EQ(out.seg_t2->value.shape, (Shape{2, 5, 32, 32}));
  EXPECT_EQ(out.change->value.shape, (Shape{2, 1, 32, 32}));
  EXPECT_EQ(out.f_t1->value.shape, (Shape{2, 32, 8, 8}));
  auto& cls = *model.branch(1).classifier.weight;
  std::fill(cls.value().data.begin(), cls.value().data.end(), 0.0f);
  const auto p = nn::softmax(model.forward(img, img).seg_t1, 1);
  for (float v : p->value.data) EXPECT_FLOAT_EQ(v, 0.2f);
}

TEST(SegHead, Gradcheck) {
  const auto cfg = tiny_config();
  ScdModel<double> model(2, cfg);
  const auto& br = model.branch(1);
  const auto f = random_var<double>({1, cfg.features, 3, 4}, 5);
  const auto x2 = random_var<double>({1, cfg.reduced, 3, 4}, 6);
  std::vector<nn::Var<double>> leaves{f, x2};
  for (auto& p : model.registry().params())
    if (p.name.rfind("t1.seg", 0) == 0) leaves.push_back(p.var);
  const auto rep = nn::gradcheck([&] { return br.seg_head(f, x2); }, leaves);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
}

TEST(ChangeHead, SymmetryAndConstantOnEqualInputs) {
  ScdModel<float> model(3);
  const auto& head = model.change_head();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a = random_var<float>({2, 32, 6, 5}, seed, false);
    const auto b = random_var<float>({2, 32, 6, 5}, seed + 50, false);
    EXPECT_EQ(head(a, b)->value.data, head(b, a)->value.data);
  }
  const auto a = random_var<float>({1, 32, 4, 4}, 9, false);
  const auto same = head(a, a)->value.data;
  for (float v : same) EXPECT_EQ(v, same[0]);
}

TEST(ChangeHead, Gradcheck) {
  const auto cfg = tiny_config();
  ScdModel<double> model(4, cfg);
  const auto f1 = random_var<double>({2, cfg.features, 3, 3}, 1);
  const auto f2 = random_var<double>({2, cfg.features, 3, 3}, 2);
  std::vector<nn::Var<double>> leaves{f1, f2};
  for (auto& p : model.registry().params())
    if (p.name.rfind("change", 0) == 0) leaves.push_back(p.var);
  const auto rep = nn::gradcheck([&] { return model.change_head()(f1, f2); }, leaves);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
}

TEST(ScdModel, SwappedInputsWithTiedBackbones) {
  ScdModel<float> model(5);
  model.tie_backbones();
  const auto a = nn::leaf(random_tensor<float>({1, 3, 16, 16}, 1));
  const auto b = nn::leaf(random_tensor<float>({1, 3, 16, 16}, 2));
  const auto ab = model.forward(a, b), ba = model.forward(b, a);
  EXPECT_EQ(ab.change->value.data, ba.change->value.data);
  EXPECT_EQ(ab.f_t1->value.data, ba.f_t2->value.data);
}

TEST(ScdModel, RejectsBadShapes) {
  ScdModel<float> model(5);
  const auto a = nn::leaf(random_tensor<float>({1, 3, 16, 16}, 1));
  EXPECT_THROW(model.forward(a, nn::leaf(random_tensor<float>({1, 3, 16, 12}, 1))), nn::ShapeError);
  const auto odd = nn::leaf(random_tensor<float>({1, 3, 18, 16}, 1));
  EXPECT_THROW(model.forward(odd, odd), nn::ShapeError);
}

TEST(ScdModel, EndToEndGradcheck) {
  ScdModel<double> model(6);
  const auto a = random_var<double>({1, 3, 16, 16}, 7);
  const auto b = random_var<double>({1, 3, 16, 16}, 8);
  const auto s = tile_pair(16, 3);
  std::vector<double> ybcd(s.y_bcd.begin(), s.y_bcd.end());
  std::vector<nn::Var<double>> leaves{a, b};
  for (auto& p : model.registry().params()) leaves.push_back(p.var);
  nn::GradcheckOptions opt;
  opt.tol = 1e-3;
  opt.max_per_leaf = 6;
  const auto rep = nn::gradcheck(
      [&] {
        const auto o = model.forward(a, b);
        return total_loss(o.seg_t1, s.y_t1, o.seg_t2, s.y_t2, o.change, ybcd).total;
      },
      leaves, opt);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
}

TEST(TotalLoss, WeightsAndOracle) {
  // equal components: CCE of uniform logits over 2 classes and BCE of 0 logits are both ln 2
  const auto seg = nn::leaf(Tensor<double>(Shape{1, 2, 2, 2}, 0.0));
  const auto bcd = nn::leaf(Tensor<double>(Shape{1, 1, 2, 2}, 0.0));
  const auto l = total_loss(seg, {0, 1, 1, 0}, seg, {1, 1, 0, 0}, bcd, {1.0, 0.0, 0.0, 1.0});
  EXPECT_NEAR(l.total_value(), 4.0 * std::log(2.0), 1e-12);

  Tensor<double> perfect(Shape{1, 3, 1, 2}, -40.0);
  perfect.at(0, 2, 0, 0) = 40.0;
  perfect.at(0, 1, 0, 1) = 40.0;
  Tensor<double> sure(Shape{1, 1, 1, 2});
  sure.data = {40.0, -40.0};
  EXPECT_LT(total_loss(nn::leaf(perfect), {2, 1}, nn::leaf(perfect), {2, 1}, nn::leaf(sure), {1.0, 0.0}).total_value(), 1e-12);

  const auto z1 = random_tensor<double>({2, 4, 3, 3}, 1, -2, 2), z2 = random_tensor<double>({2, 3, 3, 3}, 2, -2, 2);
  const auto zb = random_tensor<double>({2, 1, 3, 3}, 3, -2, 2);
  Rng rng(4);
  std::vector<int> y1(18), y2(18);
  std::vector<double> yb(18);
  for (int i = 0; i < 18; ++i) {
    y1[i] = static_cast<int>(rng.below(4));
    y2[i] = static_cast<int>(rng.below(3));
    yb[i] = rng.bernoulli(0.4);
  }
  auto cce = [](const Tensor<double>& z, const std::vector<int>& y) {
    double acc = 0;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 9; ++p) {
        double zs = 0;
        for (int c = 0; c < z.shape.c; ++c) zs += std::exp(z.data[n * z.shape.c * 9 + c * 9 + p]);
        acc -= std::log(std::exp(z.data[n * z.shape.c * 9 + y[n * 9 + p] * 9 + p]) / zs);
      }
    return acc / 18;
  };
  double bce = 0;
  for (int i = 0; i < 18; ++i) {
    const double p = 1 / (1 + std::exp(-zb.data[i]));
    bce -= yb[i] * std::log(p) + (1 - yb[i]) * std::log(1 - p);
  }
  const double oracle = cce(z1, y1) + cce(z2, y2) + 2 * bce / 18;
  EXPECT_NEAR(total_loss(nn::leaf(z1), y1, nn::leaf(z2), y2, nn::leaf(zb), yb).total_value(), oracle, 1e-6);
  y1[0] = 4;
  EXPECT_THROW(total_loss(nn::leaf(z1), y1, nn::leaf(z2), y2, nn::leaf(zb), yb), DataError);
}

TEST(ScdInfer, ArgmaxTiesToLowestClass) {
  Tensor<float> t(Shape{1, 3, 1, 3}, 0.0f);
  t.at(0, 2, 0, 1) = 1.0f;
  t.at(0, 1, 0, 2) = 0.5f;
  t.at(0, 2, 0, 2) = 0.5f;
  EXPECT_EQ(argmax_channels(t), (std::vector<int>{0, 2, 1}));
}

TEST(ScdInfer, IdenticalPairOnTiedBackbonesHasConstantChange) {
  ScdModel<float> model(8);
  model.tie_backbones();
  model.registry().training = false;
  RgbImage img(GeoFrame::unit(24, 16, 1.0));
  Rng rng(3);
  for (auto& b : img.bands)
    for (auto& v : b.cells()) v = static_cast<float>(rng.below(256));
  const auto pred = infer(model, img, img, 64, 0);
  for (auto v : pred.change.cells()) EXPECT_EQ(v, pred.change[0]);
}

TEST(ScdInfer, MatchesManualForwardTrace) {
  ScdModel<float> model(9);
  model.registry().training = false;
  RgbImage a(GeoFrame::unit(8, 8, 1.0)), b(GeoFrame::unit(8, 8, 1.0));
  Rng rng(5);
  for (int band = 0; band < 3; ++band) {
    for (auto& v : a.bands[band].cells()) v = static_cast<float>(rng.below(256));
    for (auto& v : b.bands[band].cells()) v = static_cast<float>(rng.below(256));
  }
  const auto pred = infer(model, a, b, 8, 0);
  nn::NoGrad ng;
  Tensor<float> ta(Shape{1, 3, 8, 8}), tb(Shape{1, 3, 8, 8});
  for (int band = 0; band < 3; ++band)
    for (int i = 0; i < 64; ++i) {
      ta.data[band * 64 + i] = static_cast<float>(a.bands[band][i] / 255.0 - 0.5);
      tb.data[band * 64 + i] = static_cast<float>(b.bands[band][i] / 255.0 - 0.5);
    }
  const auto o = model.forward(nn::leaf(ta), nn::leaf(tb));
  for (int i = 0; i < 64; ++i) {
    int best1 = 0, best2 = 0;
    for (int c = 1; c < 5; ++c) {
      if (o.seg_t1->value.data[c * 64 + i] > o.seg_t1->value.data[best1 * 64 + i]) best1 = c;
      if (o.seg_t2->value.data[c * 64 + i] > o.seg_t2->value.data[best2 * 64 + i]) best2 = c;
    }
    EXPECT_EQ(pred.seg_t1[i], best1);
    EXPECT_EQ(pred.seg_t2[i], best2);
    EXPECT_EQ(pred.change[i], o.change->value.data[i] > 0.0f);
  }
}

TEST(ScdTrain, OverfitsOnePairAndDecomposesLoss) {
  ScdModel<float> model(10);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch = 1;
  cfg.sgd.lr = 0.01;
  const auto res = train(model, {tile_pair(32, 1)}, {}, cfg);
  ASSERT_EQ(res.steps.size(), 300u);
  double best = INFINITY;
  for (const auto& s : res.steps) {
    EXPECT_NEAR(s.total, s.t1 + s.t2 + 2.0 * s.bcd, 1e-6);
    best = std::min(best, s.total);
  }
  EXPECT_LT(best, 0.1);
  EXPECT_EQ(res.best_epoch, 300);
}

TEST(ScdTrain, ZeroLearningRateAndBestValidationRestore) {
  ScdModel<float> model(11);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.registry().params()) before.push_back(p.value().data);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.sgd.lr = 0.0;
  train(model, {tile_pair(16, 1)}, {}, cfg);
  std::size_t i = 0;
  for (const auto& p : model.registry().params()) EXPECT_EQ(p.value().data, before[i++]) << p.name;

  ScdModel<float> m2(12);
  cfg.epochs = 4;
  cfg.sgd.lr = 0.02;
  const std::vector<ScdSample> val{tile_pair(16, 7)};
  const auto res = train(m2, {tile_pair(16, 2), tile_pair(16, 3)}, val, cfg);
  double best = INFINITY;
  for (const auto& e : res.epochs) best = std::min(best, e.val_loss);
  EXPECT_NEAR(evaluate_loss(m2, val), best, 1e-6);
  EXPECT_TRUE(res.epochs[res.best_epoch - 1].best);
}

TEST(ScdTrain, DeterministicUnderSeed) {
  auto run = [] {
    ScdModel<float> model(13);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 2;
    const auto res = train(model, {tile_pair(16, 1), tile_pair(16, 2), tile_pair(16, 3)}, {}, cfg);
    std::vector<double> out;
    for (const auto& s : res.steps) out.push_back(s.total);
    for (const auto& p : model.registry().params()) out.insert(out.end(), p.value().data.begin(), p.value().data.end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
