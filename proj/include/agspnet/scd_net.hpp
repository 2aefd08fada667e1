#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "agspnet/nn/layers.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/rng.hpp"

// Pseudo-Siamese semantic change network: two independent residual
// backbones with recurrent criss-cross attention and per-epoch
// segmentation heads, plus a change discriminator on |F_t1 - F_t2|.

namespace agspnet::scd {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Registry;
using nn::Shape;
using nn::Tensor;
using nn::Var;

/// Criss-cross attention module: Q, K (C/8 channels) and V (C channels)
/// from three unshared 1x1 convolutions.
template <typename T>
struct Ccam {
  Conv2d<T> q, k, v;

  Ccam() = default;
  Ccam(Registry<T>& reg, const std::string& name, int channels)
      : q(reg, name + ".q", channels, std::max(1, channels / 8), 1),
        k(reg, name + ".k", channels, std::max(1, channels / 8), 1),
        v(reg, name + ".v", channels, channels, 1) {}

  /// Attention weights, N x (H+W-1) x H x W.
  Var<T> attention(const Var<T>& x) const { return nn::softmax(nn::cc_affinity(q(x), k(x)), 1); }

  Var<T> operator()(const Var<T>& x) const { return nn::add(nn::cc_aggregate(attention(x), v(x)), x); }
};

/// R passes of one shared CCAM.
template <typename T>
Var<T> rcca(const Ccam<T>& ccam, Var<T> x, int R = 2) {
  if (R < 1) throw ConfigError("rcca needs R >= 1");
  for (int r = 0; r < R; ++r) x = ccam(x);
  return x;
}

template <typename T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(Registry<T>& reg, const std::string& name, int cin, int cout, int k, int stride = 1, int dil = 1)
      : conv(reg, name + ".conv", cin, cout, k, stride, -1, dil, false), bn(reg, name + ".bn", cout) {}
  Var<T> operator()(const Var<T>& x) const { return nn::relu(bn(conv(x))); }
};

template <typename T>
struct ResidualBlock {
  ConvBnRelu<T> a;
  Conv2d<T> conv_b;
  BatchNorm2d<T> bn_b;
  bool project = false;
  Conv2d<T> proj;
  BatchNorm2d<T> proj_bn;

  ResidualBlock(Registry<T>& reg, const std::string& name, int cin, int cout, int dil = 1)
      : a(reg, name + ".a", cin, cout, 3, 1, dil),
        conv_b(reg, name + ".b.conv", cout, cout, 3, 1, -1, dil, false),
        bn_b(reg, name + ".b.bn", cout),
        project(cin != cout) {
    if (project) {
      proj = Conv2d<T>(reg, name + ".proj.conv", cin, cout, 1, 1, 0, 1, false);
      proj_bn = BatchNorm2d<T>(reg, name + ".proj.bn", cout);
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    const auto y = bn_b(conv_b(a(x)));
    return nn::relu(nn::add(y, project ? proj_bn(proj(x)) : x));
  }
};

struct ScdConfig {
  int classes_t1 = 5;
  int classes_t2 = 5;
  int stem = 16;
  int features = 32;  // C of the backbone output F
  int reduced = 16;   // channels of X fed to the attention
  int recurrence = 2;
  int head = 32;
  int change = 16;
};

/// Stem (7x7/2 conv, BN, ReLU, 2x2 maxpool) and four residual blocks; the
/// last block is dilated. Output stride 4, no pooling head.
template <typename T>
struct Backbone {
  ConvBnRelu<T> stem;
  std::vector<ResidualBlock<T>> blocks;

  Backbone(Registry<T>& reg, const std::string& name, const ScdConfig& c) : stem(reg, name + ".stem", 3, c.stem, 7, 2) {
    blocks.emplace_back(reg, name + ".res1", c.stem, c.stem);
    blocks.emplace_back(reg, name + ".res2", c.stem, c.features);
    blocks.emplace_back(reg, name + ".res3", c.features, c.features);
    blocks.emplace_back(reg, name + ".res4", c.features, c.features, 2);
  }

  Var<T> operator()(const Var<T>& img) const {
    Var<T> x = nn::maxpool2d(stem(img));
    for (const auto& b : blocks) x = b(x);
    return x;
  }
};

/// One epoch's branch: backbone, reduction to X, RCCA and seg head.
template <typename T>
struct Branch {
  Backbone<T> backbone;
  ConvBnRelu<T> reduce;
  Ccam<T> ccam;
  ConvBnRelu<T> fuse;
  Conv2d<T> classifier;
  int recurrence;

  Branch(Registry<T>& reg, const std::string& name, const ScdConfig& c, int classes)
      : backbone(reg, name + ".backbone", c),
        reduce(reg, name + ".reduce", c.features, c.reduced, 3),
        ccam(reg, name + ".ccam", c.reduced),
        fuse(reg, name + ".seg.fuse", c.features + c.reduced, c.head, 3),
        classifier(reg, name + ".seg.classifier", c.head, classes, 1),
        recurrence(c.recurrence) {}

  /// [F, X''] -> conv/BN/ReLU -> 1x1 classifier -> x4 bilinear.
  Var<T> seg_head(const Var<T>& f, const Var<T>& x2) const {
    return nn::upsample_bilinear(classifier(fuse(nn::concat<T>({f, x2}))), 4);
  }
};

template <typename T>
struct ChangeHead {
  ConvBnRelu<T> l1, l2;
  Conv2d<T> classifier;

  ChangeHead(Registry<T>& reg, const std::string& name, const ScdConfig& c)
      : l1(reg, name + ".l1", c.features, c.change, 3),
        l2(reg, name + ".l2", c.change, c.change, 3),
        classifier(reg, name + ".classifier", c.change, 1, 1) {}

  /// |F1 - F2| -> two conv/BN/ReLU -> 1-channel logits -> x4 bilinear.
  Var<T> operator()(const Var<T>& f1, const Var<T>& f2) const {
    return nn::upsample_bilinear(classifier(l2(l1(nn::abs(nn::sub(f1, f2))))), 4);
  }
};

template <typename T>
struct ScdOutputs {
  Var<T> seg_t1, seg_t2, change;  // logits at input resolution
  Var<T> f_t1, f_t2;
};

template <typename T>
class ScdModel {
 public:
  explicit ScdModel(std::uint64_t seed, ScdConfig cfg = {})
      : cfg_(cfg),
        reg_(std::make_unique<Registry<T>>(seed)),
        t1_(*reg_, "t1", cfg, cfg.classes_t1),
        t2_(*reg_, "t2", cfg, cfg.classes_t2),
        change_(*reg_, "change", cfg) {
    if (cfg.classes_t1 < 2 || cfg.classes_t2 < 2 || cfg.recurrence < 1) throw ConfigError("invalid SCD network config");
  }

  ScdOutputs<T> forward(const Var<T>& img_t1, const Var<T>& img_t2) const {
    const Shape s = img_t1->value.shape;
    if (!(s == img_t2->value.shape)) throw nn::ShapeError("scd: epoch images differ in shape");
    if (s.c != 3 || s.h % 4 || s.w % 4 || s.h < 8 || s.w < 8) {
      throw nn::ShapeError("scd: expected Nx3xHxW with H, W multiples of 4 and >= 8, got " + s.str());
    }
    ScdOutputs<T> out;
    out.f_t1 = t1_.backbone(img_t1);
    out.f_t2 = t2_.backbone(img_t2);
    out.seg_t1 = t1_.seg_head(out.f_t1, rcca(t1_.ccam, t1_.reduce(out.f_t1), t1_.recurrence));
    out.seg_t2 = t2_.seg_head(out.f_t2, rcca(t2_.ccam, t2_.reduce(out.f_t2), t2_.recurrence));
    out.change = change_(out.f_t1, out.f_t2);
    return out;
  }

  /// Copies the t1 backbone into the t2 backbone (same architecture), so
  /// both epochs see one feature extractor. Used for symmetry checks.
  void tie_backbones() {
    auto& ps = reg_->params();
    for (auto& dst : ps) {
      if (dst.name.rfind("t2.backbone.", 0) != 0) continue;
      const std::string src = "t1" + dst.name.substr(2);
      for (auto& p : ps)
        if (p.name == src) dst.value() = p.value();
    }
    for (auto& dst : reg_->buffers()) {
      if (dst.name.rfind("t2.backbone.", 0) != 0) continue;
      const std::string src = "t1" + dst.name.substr(2);
      for (auto& b : reg_->buffers())
        if (b.name == src) dst.data = b.data;
    }
  }

  Registry<T>& registry() { return *reg_; }
  const Registry<T>& registry() const { return *reg_; }
  const ScdConfig& config() const { return cfg_; }
  const Branch<T>& branch(int epoch) const { return epoch == 1 ? t1_ : t2_; }
  const ChangeHead<T>& change_head() const { return change_; }

 private:
  ScdConfig cfg_;
  std::unique_ptr<Registry<T>> reg_;
  Branch<T> t1_, t2_;
  ChangeHead<T> change_;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  double t1 = 0, t2 = 0, bcd = 0;  // component values as reported

  double total_value() const { return total->value.data[0]; }
};

/// Loss = CCE(t1) + CCE(t2) + 2 * BCE(change).
template <typename T>
LossTerms<T> total_loss(const Var<T>& logits_t1, const std::vector<int>& y_t1, const Var<T>& logits_t2,
                        const std::vector<int>& y_t2, const Var<T>& logits_bcd, const std::vector<T>& y_bcd) {
  const auto l1 = nn::cross_entropy(logits_t1, y_t1);
  const auto l2 = nn::cross_entropy(logits_t2, y_t2);
  const auto lb = nn::bce_with_logits(logits_bcd, y_bcd);
  LossTerms<T> out;
  out.total = nn::add(nn::add(l1, l2), nn::scale(lb, T(2)));
  out.t1 = l1->value.data[0];
  out.t2 = l2->value.data[0];
  out.bcd = lb->value.data[0];
  return out;
}

struct ScdSample {
  Tensor<float> img_t1, img_t2;  // 1x3xHxW
  std::vector<int> y_t1, y_t2;   // HxW class ids
  std::vector<float> y_bcd;      // HxW in {0,1}
};

struct TrainConfig {
  int epochs = 20;
  int batch = 4;
  nn::SgdConfig sgd;
  std::uint64_t seed = 1;
};

struct StepLog {
  int epoch, step;
  double total, t1, t2, bcd;
};

struct EpochLog {
  int epoch;
  double train_loss;
  double val_loss;  // NaN without a validation set
  bool best;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
};

namespace detail {

struct Batch {
  Tensor<float> img_t1, img_t2;
  std::vector<int> y_t1, y_t2;
  std::vector<float> y_bcd;
};

inline Batch make_batch(const std::vector<ScdSample>& data, const std::vector<std::size_t>& order, std::size_t first,
                        std::size_t last) {
  const Shape s = data[order[first]].img_t1.shape;
  Batch b;
  b.img_t1 = Tensor<float>(Shape{static_cast<int>(last - first), 3, s.h, s.w});
  b.img_t2 = b.img_t1;
  for (std::size_t i = first; i < last; ++i) {
    const auto& smp = data[order[i]];
    if (!(smp.img_t1.shape == s) || !(smp.img_t2.shape == s)) throw DataError("SCD training tiles must share one size");
    std::copy(smp.img_t1.data.begin(), smp.img_t1.data.end(), b.img_t1.data.begin() + (i - first) * s.chw());
    std::copy(smp.img_t2.data.begin(), smp.img_t2.data.end(), b.img_t2.data.begin() + (i - first) * s.chw());
    b.y_t1.insert(b.y_t1.end(), smp.y_t1.begin(), smp.y_t1.end());
    b.y_t2.insert(b.y_t2.end(), smp.y_t2.begin(), smp.y_t2.end());
    b.y_bcd.insert(b.y_bcd.end(), smp.y_bcd.begin(), smp.y_bcd.end());
  }
  return b;
}

}  // namespace detail

/// Mean total loss over a sample set in eval mode.
inline double evaluate_loss(ScdModel<float>& model, const std::vector<ScdSample>& data, int batch = 4) {
  nn::NoGrad ng;
  const bool was = model.registry().training;
  model.registry().training = false;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0;
  for (std::size_t first = 0; first < order.size(); first += batch) {
    const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(batch));
    auto b = detail::make_batch(data, order, first, last);
    const auto out = model.forward(nn::leaf(std::move(b.img_t1)), nn::leaf(std::move(b.img_t2)));
    total += total_loss(out.seg_t1, b.y_t1, out.seg_t2, b.y_t2, out.change, b.y_bcd).total_value() * (last - first);
  }
  model.registry().training = was;
  return total / static_cast<double>(data.size());
}

/// Minibatch SGD. After every epoch the validation loss is measured and the
/// parameters of the best epoch are restored at the end (the last epoch's
/// when `val` is empty).
inline TrainResult train(ScdModel<float>& model, const std::vector<ScdSample>& data, const std::vector<ScdSample>& val,
                         const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (data.empty()) throw DataError("SCD training set is empty");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("SCD training needs epochs >= 0 and batch >= 1");
  auto& reg = model.registry();
  Rng rng = Rng::stream(cfg.seed, "scd-train");
  std::vector<std::size_t> order(data.size());
  TrainResult res;
  double best = INFINITY;
  std::vector<std::vector<float>> best_params, best_buffers;
  auto snapshot = [&] {
    best_params.clear();
    best_buffers.clear();
    for (const auto& p : reg.params()) best_params.push_back(p.value().data);
    for (const auto& b : reg.buffers()) best_buffers.push_back(b.data);
  };
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    reg.training = true;
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum = 0;
    int step = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch));
      auto b = detail::make_batch(data, order, first, last);
      try {
        const auto out = model.forward(nn::leaf(std::move(b.img_t1)), nn::leaf(std::move(b.img_t2)));
        const auto loss = total_loss(out.seg_t1, b.y_t1, out.seg_t2, b.y_t2, out.change, b.y_bcd);
        nn::backward(loss.total);
        nn::sgd_step(reg.params(), cfg.sgd);
        res.steps.push_back({epoch, ++step, loss.total_value(), loss.t1, loss.t2, loss.bcd});
        sum += loss.total_value();
      } catch (const NumericalError& e) {
        throw NumericalError("SCD training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step + 1) + ": " + e.what());
      }
    }
    EpochLog log{epoch, sum / step, NAN, false};
    const double score = val.empty() ? -epoch : (log.val_loss = evaluate_loss(model, val, cfg.batch));
    if (score < best) {
      best = score;
      log.best = true;
      res.best_epoch = epoch;
      snapshot();
    }
    res.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!best_params.empty()) {
    std::size_t i = 0;
    for (auto& p : reg.params()) p.value().data = best_params[i++];
    i = 0;
    for (auto& b : reg.buffers()) b.data = best_buffers[i++];
  }
  reg.training = false;
  return res;
}

/// Per-pixel argmax over channels; ties go to the lowest class id.
template <typename T>
std::vector<int> argmax_channels(const Tensor<T>& logits, int n = 0) {
  const Shape s = logits.shape;
  std::vector<int> out(s.hw(), 0);
  for (std::size_t p = 0; p < s.hw(); ++p) {
    T best = logits.data[n * s.chw() + p];
    for (int c = 1; c < s.c; ++c) {
      const T v = logits.data[n * s.chw() + c * s.hw() + p];
      if (v > best) {
        best = v;
        out[p] = c;
      }
    }
  }
  return out;
}

struct Prediction {
  LabelRaster seg_t1, seg_t2;
  BinaryMask change;
};

/// Eval-mode inference over windows: cores of `tile` cells plus `margin`
/// cells of context, both multiples of 4. Change is logit > 0, i.e. the
/// argmax of (unchanged, changed) with ties to unchanged.
inline Prediction infer(ScdModel<float>& model, const RgbImage& img_t1, const RgbImage& img_t2, int tile = 64,
                        int margin = 16) {
  require_aligned(img_t1.bands[0], img_t2.bands[0], "scd infer");
  if (tile % 4 || margin % 4 || tile < 8) throw ConfigError("scd infer: tile and margin must be multiples of 4, tile >= 8");
  nn::NoGrad ng;
  const bool was = model.registry().training;
  model.registry().training = false;
  const GeoFrame& f = img_t1.frame();
  Prediction out{LabelRaster(f, 0), LabelRaster(f, 0), BinaryMask(f, 0)};
  for (int r0 = 0; r0 < f.height; r0 += tile) {
    for (int c0 = 0; c0 < f.width; c0 += tile) {
      const int r1 = std::min(f.height, r0 + tile), c1 = std::min(f.width, c0 + tile);
      const int wr0 = std::max(0, r0 - margin), wc0 = std::max(0, c0 - margin);
      const int wr1 = std::min(f.height, r1 + margin), wc1 = std::min(f.width, c1 + margin);
      const int w = wc1 - wc0, h = wr1 - wr0;
      const int pw = std::max(8, (w + 3) / 4 * 4), ph = std::max(8, (h + 3) / 4 * 4);
      Tensor<float> a(Shape{1, 3, ph, pw}), b(Shape{1, 3, ph, pw});
      for (int band = 0; band < 3; ++band)
        for (int r = 0; r < ph; ++r)
          for (int c = 0; c < pw; ++c) {
            const int sc = wc0 + std::min(c, w - 1), sr = wr0 + std::min(r, h - 1);
            a.at(0, band, r, c) = static_cast<float>(img_t1.bands[band](sc, sr) / 255.0 - 0.5);
            b.at(0, band, r, c) = static_cast<float>(img_t2.bands[band](sc, sr) / 255.0 - 0.5);
          }
      const auto o = model.forward(nn::leaf(std::move(a)), nn::leaf(std::move(b)));
      const auto s1 = argmax_channels(o.seg_t1->value), s2 = argmax_channels(o.seg_t2->value);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
          const std::size_t p = static_cast<std::size_t>(r - wr0) * pw + (c - wc0);
          out.seg_t1(c, r) = static_cast<std::uint16_t>(s1[p]);
          out.seg_t2(c, r) = static_cast<std::uint16_t>(s2[p]);
          out.change(c, r) = o.change->value.data[p] > 0.0f;
        }
    }
  }
  model.registry().training = was;
  return out;
}

}  // namespace agspnet::scd
