#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "agspnet/nn/layers.hpp"
#include "agspnet/raster.hpp"
#include "agspnet/rng.hpp"

// Toy bidirectional cascade edge detector: five incremental-detection
// blocks with scale-enhancement modules, shallow-to-deep and deep-to-shallow
// cumulative side outputs, and a 1x1 fusion over all ten side outputs.

namespace agspnet::edge {

using nn::Conv2d;
using nn::Registry;
using nn::Shape;
using nn::Tensor;
using nn::Var;

struct SemConfig {
  int r0 = 1;
  int K = 3;
  int channels = 8;
};

inline void validate(const SemConfig& c) {
  if (c.r0 < 1 || c.K < 1 || c.channels < 1) throw ConfigError("SEM needs r0 >= 1, K >= 1, channels >= 1");
}

/// Dilation rates r0*k for k = 1..K.
inline std::vector<int> sem_rates(const SemConfig& c) {
  std::vector<int> r(c.K);
  for (int k = 0; k < c.K; ++k) r[k] = c.r0 * (k + 1);
  return r;
}

template <typename T>
struct Sem {
  std::vector<Conv2d<T>> branches;
  Conv2d<T> project;

  Sem(Registry<T>& reg, const std::string& name, int cin, int channels, const std::vector<int>& rates) {
    for (std::size_t k = 0; k < rates.size(); ++k) {
      branches.emplace_back(reg, name + ".branch" + std::to_string(k), cin, channels, 3, 1, rates[k], rates[k]);
    }
    project = Conv2d<T>(reg, name + ".project", channels, channels, 1);
  }

  /// Σ_k relu(branch_k(x)), before the 1x1 projection.
  Var<T> branch_sum(const Var<T>& x) const {
    Var<T> acc;
    for (const auto& b : branches) {
      const auto y = nn::relu(b(x));
      acc = acc ? nn::add(acc, y) : y;
    }
    return acc;
  }

  Var<T> operator()(const Var<T>& x) const { return project(branch_sum(x)); }
};

struct BdcnConfig {
  std::array<int, 5> widths = {8, 16, 32, 32, 32};
  std::array<int, 5> convs = {2, 2, 3, 3, 3};
  SemConfig sem;
};

template <typename T>
struct BdcnOutputsT {
  std::array<Var<T>, 5> s2d, d2s;
  Var<T> fused;

  std::vector<Var<T>> all() const {
    std::vector<Var<T>> v(s2d.begin(), s2d.end());
    v.insert(v.end(), d2s.begin(), d2s.end());
    v.push_back(fused);
    return v;
  }
};

template <typename T>
class Bdcn {
 public:
  explicit Bdcn(std::uint64_t seed, BdcnConfig cfg = {}) : cfg_(cfg), reg_(std::make_unique<Registry<T>>(seed)) {
    validate(cfg.sem);
    const auto rates = sem_rates(cfg.sem);
    int cin = 3;
    for (int b = 0; b < 5; ++b) {
      Block blk;
      const std::string bn = "block" + std::to_string(b + 1);
      for (int i = 0; i < cfg.convs[b]; ++i) {
        blk.convs.emplace_back(*reg_, bn + ".conv" + std::to_string(i + 1), cin, cfg.widths[b], 3);
        blk.sems.emplace_back(*reg_, bn + ".sem" + std::to_string(i + 1), cfg.widths[b], cfg.sem.channels, rates);
        cin = cfg.widths[b];
      }
      blk.head_s2d = Conv2d<T>(*reg_, bn + ".head_s2d", cfg.sem.channels, 1, 1);
      blk.head_d2s = Conv2d<T>(*reg_, bn + ".head_d2s", cfg.sem.channels, 1, 1);
      blocks_.push_back(std::move(blk));
    }
    fuse_ = Conv2d<T>(*reg_, "fuse", 10, 1, 1);
  }

  /// Eleven full-resolution logit maps. Side outputs are cumulative:
  /// s2d[i] sums the raw predictions of blocks 0..i, d2s[i] those of i..4.
  BdcnOutputsT<T> forward(const Var<T>& image) const {
    const Shape s = image->value.shape;
    if (s.c != 3) throw nn::ShapeError("bdcn: expected 3-channel input, got " + s.str());
    if (s.h % 16 || s.w % 16 || s.h == 0 || s.w == 0) {
      throw nn::ShapeError("bdcn: spatial size must be a positive multiple of 16, got " + s.str());
    }
    std::array<Var<T>, 5> raw_s2d, raw_d2s;
    Var<T> x = image;
    for (int b = 0; b < 5; ++b) {
      if (b > 0) x = nn::maxpool2d(x);
      const Block& blk = blocks_[b];
      Var<T> feat;
      for (std::size_t i = 0; i < blk.convs.size(); ++i) {
        x = nn::relu(blk.convs[i](x));
        const auto e = blk.sems[i](x);
        feat = feat ? nn::add(feat, e) : e;
      }
      raw_s2d[b] = nn::upsample_bilinear(blk.head_s2d(feat), 1 << b);
      raw_d2s[b] = nn::upsample_bilinear(blk.head_d2s(feat), 1 << b);
    }
    BdcnOutputsT<T> out;
    out.s2d[0] = raw_s2d[0];
    for (int b = 1; b < 5; ++b) out.s2d[b] = nn::add(out.s2d[b - 1], raw_s2d[b]);
    out.d2s[4] = raw_d2s[4];
    for (int b = 3; b >= 0; --b) out.d2s[b] = nn::add(out.d2s[b + 1], raw_d2s[b]);
    std::vector<Var<T>> side(out.s2d.begin(), out.s2d.end());
    side.insert(side.end(), out.d2s.begin(), out.d2s.end());
    out.fused = fuse_(nn::concat(side));
    return out;
  }

  /// Σ of class-balanced BCE over the ten side outputs and the fused map.
  Var<T> loss(const BdcnOutputsT<T>& out, const std::vector<T>& target) const {
    Var<T> total;
    for (const auto& o : out.all()) {
      const auto l = nn::class_balanced_bce(o, target);
      total = total ? nn::add(total, l) : l;
    }
    return total;
  }

  Registry<T>& registry() { return *reg_; }
  const Registry<T>& registry() const { return *reg_; }
  const BdcnConfig& config() const { return cfg_; }
  const Sem<T>& sem(int block, int conv) const { return blocks_[block].sems[conv]; }

 private:
  struct Block {
    std::vector<Conv2d<T>> convs;
    std::vector<Sem<T>> sems;
    Conv2d<T> head_s2d, head_d2s;
  };

  BdcnConfig cfg_;
  std::unique_ptr<Registry<T>> reg_;
  std::vector<Block> blocks_;
  Conv2d<T> fuse_;
};

/// RGB in 0..255 -> 1x3xHxW tensor scaled to [-0.5, 0.5].
template <typename T = float>
Tensor<T> image_tensor(const RgbImage& img) {
  Tensor<T> t(Shape{1, 3, img.height(), img.width()});
  for (int b = 0; b < 3; ++b) {
    const auto& band = img.bands[b];
    for (std::size_t i = 0; i < band.size(); ++i) t.data[b * band.size() + i] = static_cast<T>(band[i] / 255.0 - 0.5);
  }
  return t;
}

struct EdgeSample {
  Tensor<float> image;       // 1x3xHxW
  std::vector<float> edges;  // HxW in {0,1}
};

struct TrainConfig {
  int epochs = 20;
  int batch = 4;
  nn::SgdConfig sgd;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch;
  double mean_loss;
};

/// Stacks samples [first, last) of `order` into one batch.
template <typename T>
std::pair<Tensor<T>, std::vector<T>> make_batch(const std::vector<EdgeSample>& data, const std::vector<std::size_t>& order,
                                                std::size_t first, std::size_t last) {
  const Shape s1 = data[order[first]].image.shape;
  Tensor<T> img(Shape{static_cast<int>(last - first), 3, s1.h, s1.w});
  std::vector<T> target;
  for (std::size_t i = first; i < last; ++i) {
    const auto& smp = data[order[i]];
    if (smp.image.shape != s1) throw DataError("edge training tiles must share one size");
    std::copy(smp.image.data.begin(), smp.image.data.end(), img.data.begin() + (i - first) * s1.chw());
    target.insert(target.end(), smp.edges.begin(), smp.edges.end());
  }
  return {std::move(img), std::move(target)};
}

/// Minibatch SGD over shuffled samples; `on_epoch` sees every epoch's log.
inline std::vector<EpochLog> train(Bdcn<float>& model, const std::vector<EdgeSample>& data, const TrainConfig& cfg,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (data.empty()) throw DataError("edge training set is empty");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("edge training needs epochs >= 0 and batch >= 1");
  model.registry().training = true;
  Rng rng = Rng::stream(cfg.seed, "edge-train");
  std::vector<std::size_t> order(data.size());
  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double total = 0;
    std::size_t steps = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch));
      auto [img, target] = make_batch<float>(data, order, first, last);
      try {
        const auto out = model.forward(nn::leaf(std::move(img)));
        const auto loss = model.loss(out, target);
        nn::backward(loss);
        nn::sgd_step(model.registry().params(), cfg.sgd);
        total += loss->value.data[0];
        ++steps;
      } catch (const NumericalError& e) {
        throw NumericalError("edge training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(steps + 1) + ": " + e.what());
      }
    }
    logs.push_back({epoch, total / static_cast<double>(steps)});
    if (on_epoch) on_epoch(logs.back());
  }
  model.registry().training = false;
  return logs;
}

namespace detail {

// sigmoid(fused) over the window [c0,c1)x[r0,r1), edge-padded up to a
// multiple of 16.
inline std::vector<float> infer_window(const Bdcn<float>& model, const RgbImage& img, int c0, int r0, int c1, int r1) {
  const int w = c1 - c0, h = r1 - r0;
  const int pw = (w + 15) / 16 * 16, ph = (h + 15) / 16 * 16;
  Tensor<float> t(Shape{1, 3, ph, pw});
  for (int b = 0; b < 3; ++b)
    for (int r = 0; r < ph; ++r)
      for (int c = 0; c < pw; ++c)
        t.at(0, b, r, c) = static_cast<float>(img.bands[b](c0 + std::min(c, w - 1), r0 + std::min(r, h - 1)) / 255.0 - 0.5);
  const auto prob = nn::sigmoid(model.forward(nn::leaf(std::move(t))).fused);
  std::vector<float> out(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out[r * w + c] = prob->value.at(0, 0, r, c);
  return out;
}

}  // namespace detail

/// Edge probabilities sigmoid(fused) in eval mode. Large images are
/// processed in overlapping windows (core `tile`, context `margin` on each
/// side) so memory stays bounded; only window cores are written.
inline FloatRaster infer(Bdcn<float>& model, const RgbImage& img, int tile = 192, int margin = 32) {
  nn::NoGrad ng;
  const bool was_training = model.registry().training;
  model.registry().training = false;
  const int w = img.width(), h = img.height();
  FloatRaster out(img.frame(), 0.0f);
  for (int r0 = 0; r0 < h; r0 += tile) {
    for (int c0 = 0; c0 < w; c0 += tile) {
      const int r1 = std::min(h, r0 + tile), c1 = std::min(w, c0 + tile);
      const int wr0 = std::max(0, r0 - margin), wc0 = std::max(0, c0 - margin);
      const int wr1 = std::min(h, r1 + margin), wc1 = std::min(w, c1 + margin);
      const auto p = detail::infer_window(model, img, wc0, wr0, wc1, wr1);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) out(c, r) = p[(r - wr0) * (wc1 - wc0) + (c - wc0)];
    }
  }
  model.registry().training = was_training;
  return out;
}

}  // namespace agspnet::edge
