#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "agspnet/nn/ops.hpp"
#include "agspnet/rng.hpp"

namespace agspnet::nn {

struct GradcheckOptions {
  double eps = 1e-6;
  double tol = 1e-4;
  double floor = 1e-3;            // magnitude floor of the relative-error denominator
  std::size_t max_per_leaf = 64;  // elements probed per leaf, sampled without replacement
  std::uint64_t seed = 1;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "leaf[index]" of the largest error
  bool passed = false;
};

/// Compares the analytic gradient of `f` with respect to each leaf against
/// central differences. `f` rebuilds the graph from the leaves' current
/// values; non-scalar outputs are projected onto fixed random weights.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradcheckReport gradcheck(const std::function<Var<double>()>& f, const std::vector<Var<double>>& leaves,
                                 const GradcheckOptions& opt = {}) {
  Rng rng = Rng::stream(opt.seed, "gradcheck");
  std::vector<double> proj;
  auto scalar = [&](const Var<double>& out) {
    if (out->value.size() == 1) return out;
    if (proj.size() != out->value.size()) {
      proj.resize(out->value.size());
      for (auto& w : proj) w = rng.uniform(-1.0, 1.0);
    }
    return weighted_sum(out, proj);
  };
  for (const auto& l : leaves) {
    l->requires_grad = true;
    l->grad.clear();
  }
  const Var<double> loss = scalar(f());
  backward(loss);
  GradcheckReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = *leaves[li];
    const std::vector<double> analytic = leaf.has_grad() ? leaf.grad : std::vector<double>(leaf.value.size(), 0.0);
    std::vector<std::size_t> idx(leaf.value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > opt.max_per_leaf) {
      for (std::size_t i = 0; i < opt.max_per_leaf; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(opt.max_per_leaf);
    }
    for (const std::size_t i : idx) {
      const double orig = leaf.value.data[i];
      double fp, fm;
      {
        NoGrad ng;
        leaf.value.data[i] = orig + opt.eps;
        fp = scalar(f())->value.data[0];
        leaf.value.data[i] = orig - opt.eps;
        fm = scalar(f())->value.data[0];
      }
      leaf.value.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      const double err = std::abs(analytic[i] - numeric) / denom;
      ++rep.checked;
      if (err >= rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst = "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
      }
    }
  }
  if (!std::isfinite(rep.max_rel_error)) throw NumericalError("gradcheck: non-finite error");
  rep.passed = rep.max_rel_error < opt.tol;
  return rep;
}

}  // namespace agspnet::nn
