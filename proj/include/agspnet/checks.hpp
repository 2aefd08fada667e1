#pragma once

#include <functional>
#include <string>
#include <vector>

#include "agspnet/edge_net.hpp"
#include "agspnet/nn/gradcheck.hpp"
#include "agspnet/nn/layers.hpp"
#include "agspnet/nn/ops.hpp"
#include "agspnet/scd_net.hpp"
#include "json.hpp"

// Finite-difference gradient checks over every differentiable operation
// and both networks, shared by the `gradcheck` subcommand and the
// acceptance suite.

namespace agspnet::checks {

struct GradcheckEntry {
  std::string name;
  double tol;
  nn::GradcheckReport report;
};

namespace detail {

inline nn::Var<double> random_var(const nn::Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return nn::leaf(std::move(t), true);
}

}  // namespace detail

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kNetworkTolerance = 1e-3;

/// Runs the op checks (three shapes each, tolerance 1e-4) and the two
/// end-to-end network checks on 16x16 inputs (tolerance 1e-3).
inline std::vector<GradcheckEntry> gradcheck_suite(std::uint64_t seed = 1,
                                                   const std::function<void(const GradcheckEntry&)>& on_entry = {}) {
  using nn::Shape;
  using nn::Var;
  std::vector<GradcheckEntry> out;
  Rng rng = Rng::stream(seed, "gradcheck");
  auto check = [&](const std::string& name, double tol, const std::function<Var<double>()>& f,
                   const std::vector<Var<double>>& leaves, int max_per_leaf = 64) {
    nn::GradcheckOptions opt;
    opt.tol = tol;
    opt.max_per_leaf = max_per_leaf;
    opt.seed = rng();
    out.push_back({name, tol, nn::gradcheck(f, leaves, opt)});
    if (on_entry) on_entry(out.back());
  };
  const std::vector<Shape> shapes = {{1, 2, 4, 5}, {2, 3, 3, 3}, {1, 1, 6, 4}};

  for (const auto& s : shapes) {
    const std::string tag = " " + s.str();
    const auto x = detail::random_var(s, rng);
    const auto y = detail::random_var(s, rng);
    for (auto& v : x->value.data)
      if (std::abs(v) < 0.05) v = 0.1;  // keep relu/abs away from their kinks
    check("relu" + tag, kOpTolerance, [&] { return nn::relu(x); }, {x});
    check("sigmoid" + tag, kOpTolerance, [&] { return nn::sigmoid(x); }, {x});
    check("abs" + tag, kOpTolerance, [&] { return nn::abs(x); }, {x});
    check("scale" + tag, kOpTolerance, [&] { return nn::scale(x, -1.5); }, {x});
    check("add" + tag, kOpTolerance, [&] { return nn::add(x, y); }, {x, y});
    check("sub" + tag, kOpTolerance, [&] { return nn::sub(x, y); }, {x, y});
    check("concat" + tag, kOpTolerance, [&] { return nn::concat<double>({x, y}); }, {x, y});
    check("softmax" + tag, kOpTolerance, [&] { return nn::softmax(x, 1); }, {x});
    check("sum" + tag, kOpTolerance, [&] { return nn::sum(x); }, {x});
    std::vector<double> w(s.size());
    for (auto& v : w) v = rng.uniform(-1, 1);
    check("weighted_sum" + tag, kOpTolerance, [&] { return nn::weighted_sum(x, w); }, {x});
    check("upsample_bilinear" + tag, kOpTolerance, [&] { return nn::upsample_bilinear(x, 2); }, {x});

    const int k = 1 + static_cast<int>(rng.below(3)) * 2;
    const auto wconv = detail::random_var({3, s.c, k, k}, rng);
    const auto bconv = detail::random_var({1, 3, 1, 1}, rng);
    check("conv2d k" + std::to_string(k) + tag, kOpTolerance, [&] { return nn::conv2d(x, wconv, bconv, 1, k / 2, 1); },
          {x, wconv, bconv});
    check("conv2d dilated" + tag, kOpTolerance, [&] { return nn::conv2d(x, wconv, bconv, 1, k - 1, 2); },
          {x, wconv, bconv});

    nn::Registry<double> reg(rng());
    nn::BatchNorm2d<double> bn(reg, "bn", s.c);
    check("batchnorm2d" + tag, kOpTolerance, [&] { return bn(x); }, {x, bn.gamma->var, bn.beta->var});

    const auto q = detail::random_var(s, rng), kk = detail::random_var(s, rng);
    check("cc_affinity" + tag, kOpTolerance, [&] { return nn::cc_affinity(q, kk); }, {q, kk});
    const auto a = detail::random_var({s.n, s.h + s.w - 1, s.h, s.w}, rng);
    check("cc_aggregate" + tag, kOpTolerance, [&] { return nn::cc_aggregate(a, y); }, {a, y});

    std::vector<int> labels(static_cast<std::size_t>(s.n) * s.hw());
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.c)));
    check("cross_entropy" + tag, kOpTolerance, [&] { return nn::cross_entropy(x, labels); }, {x});
    const Shape one{s.n, 1, s.h, s.w};
    const auto z = detail::random_var(one, rng, -3, 3);
    std::vector<double> t(one.size());
    for (auto& v : t) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    check("bce_with_logits" + tag, kOpTolerance, [&] { return nn::bce_with_logits(z, t); }, {z});
    check("class_balanced_bce" + tag, kOpTolerance, [&] { return nn::class_balanced_bce(z, t); }, {z});
  }
  for (const Shape s : {Shape{1, 2, 4, 6}, Shape{2, 1, 6, 4}, Shape{1, 3, 2, 2}}) {
    const auto x = detail::random_var(s, rng);
    check("maxpool2d " + s.str(), kOpTolerance, [&] { return nn::maxpool2d(x); }, {x});
  }

  {
    nn::Registry<double> reg(rng());
    edge::Sem<double> sem(reg, "sem", 3, 4, {1, 2, 3});
    const auto x = detail::random_var({1, 3, 6, 6}, rng);
    std::vector<Var<double>> leaves{x};
    for (auto& p : reg.params()) leaves.push_back(p.var);
    check("sem", kOpTolerance, [&] { return sem(x); }, leaves, 16);
  }
  {
    nn::Registry<double> reg(rng());
    scd::Ccam<double> ccam(reg, "ccam", 8);
    const auto x = detail::random_var({1, 8, 4, 5}, rng);
    std::vector<Var<double>> leaves{x};
    for (auto& p : reg.params()) leaves.push_back(p.var);
    check("rcca R=2", kOpTolerance, [&] { return scd::rcca(ccam, x, 2); }, leaves, 16);
  }

  {
    edge::Bdcn<double> model(rng());
    const auto x = detail::random_var({1, 3, 16, 16}, rng);
    std::vector<double> target(256);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i % 16 == 5 || i / 16 == 10) ? 1.0 : 0.0;
    std::vector<Var<double>> leaves{x};
    for (auto& p : model.registry().params()) leaves.push_back(p.var);
    check("bdcn end-to-end 1x3x16x16", kNetworkTolerance, [&] { return model.loss(model.forward(x), target); }, leaves, 6);
  }
  {
    scd::ScdModel<double> model(rng());
    const auto a = detail::random_var({1, 3, 16, 16}, rng);
    const auto b = detail::random_var({1, 3, 16, 16}, rng);
    std::vector<int> y1(256), y2(256);
    std::vector<double> yc(256);
    for (std::size_t i = 0; i < 256; ++i) {
      y1[i] = static_cast<int>(rng.below(5));
      y2[i] = static_cast<int>(rng.below(5));
      yc[i] = y1[i] != y2[i] ? 1.0 : 0.0;
    }
    std::vector<Var<double>> leaves{a, b};
    for (auto& p : model.registry().params()) leaves.push_back(p.var);
    check("scd end-to-end 2x(1x3x16x16)", kNetworkTolerance,
          [&] {
            const auto o = model.forward(a, b);
            return scd::total_loss(o.seg_t1, y1, o.seg_t2, y2, o.change, yc).total;
          },
          leaves, 6);
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<GradcheckEntry>& entries) {
  nlohmann::json rows = nlohmann::json::array();
  bool all = true;
  for (const auto& e : entries) {
    rows.push_back({{"name", e.name},
                    {"tol", e.tol},
                    {"max_rel_error", e.report.max_rel_error},
                    {"checked", e.report.checked},
                    {"passed", e.report.passed}});
    all = all && e.report.passed;
  }
  return {{"passed", all}, {"checks", rows}};
}

}  // namespace agspnet::checks
