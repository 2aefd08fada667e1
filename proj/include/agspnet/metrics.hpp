#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "agspnet/raster.hpp"
#include "json.hpp"

namespace agspnet::metrics {

/// counts[i * n + j] = cells with truth i predicted j.
struct ConfusionMatrix {
  int n = 0;
  std::vector<std::uint64_t> counts;
  std::vector<std::string> names;

  explicit ConfusionMatrix(int n_ = 2) : n(n_), counts(static_cast<std::size_t>(n_) * n_, 0) {
    if (n_ < 2) throw ConfigError("confusion matrix needs at least 2 categories");
  }
  std::uint64_t& operator()(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * n + pred]; }
  std::uint64_t operator()(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * n + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  std::uint64_t row(int k) const {
    std::uint64_t s = 0;
    for (int j = 0; j < n; ++j) s += (*this)(k, j);
    return s;
  }
  std::uint64_t col(int k) const {
    std::uint64_t s = 0;
    for (int i = 0; i < n; ++i) s += (*this)(i, k);
    return s;
  }
};

/// Counts aligned truth/prediction labels; cells where `mask` is 0 are
/// skipped.
template <typename L>
ConfusionMatrix build_cm(const Raster<L>& truth, const Raster<L>& pred, int n, const BinaryMask* mask = nullptr) {
  require_aligned(truth, pred, "build_cm");
  if (mask) require_aligned(truth, *mask, "build_cm");
  ConfusionMatrix cm(n);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const auto t = static_cast<long long>(truth[i]), p = static_cast<long long>(pred[i]);
    if (t < 0 || t >= n || p < 0 || p >= n) throw DataError("label outside [0," + std::to_string(n) + ") in build_cm");
    ++cm(static_cast<int>(t), static_cast<int>(p));
  }
  return cm;
}

struct Prf {
  double pre = 0, rec = 0, f1 = 0;
};

inline double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

/// Precision, recall, F1 from precision and recall; 0/0 gives 0.
inline Prf prf(double pre, double rec) { return {pre, rec, safe_div(2 * pre * rec, pre + rec)}; }

/// One-vs-rest precision, recall and F1 of class k.
inline Prf per_class_prf(const ConfusionMatrix& cm, int k) {
  const double tp = static_cast<double>(cm(k, k));
  const double fp = static_cast<double>(cm.col(k)) - tp;
  const double fn = static_cast<double>(cm.row(k)) - tp;
  return prf(safe_div(tp, tp + fp), safe_div(tp, tp + fn));
}

inline double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  require(total > 0, "overall accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (int k = 0; k < cm.n; ++k) diag += cm(k, k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

/// Chance agreement Σ_k row_k * col_k / N².
inline double chance_agreement(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  double r = 0;
  for (int k = 0; k < cm.n; ++k) r += static_cast<double>(cm.row(k)) * static_cast<double>(cm.col(k));
  return r / (total * total);
}

/// Cohen's kappa; 0 when chance agreement is 1 (single-category data).
inline double kappa(const ConfusionMatrix& cm) {
  const double oa = overall_accuracy(cm);
  const double r = chance_agreement(cm);
  if (r == 1.0) return 0.0;
  return (oa - r) / (1.0 - r);
}

struct IouResult {
  std::vector<double> per_class;  // NaN for excluded (0/0) classes
  double mean = 0;
};

inline IouResult iou(const ConfusionMatrix& cm) {
  IouResult out;
  double sum = 0;
  int used = 0;
  for (int k = 0; k < cm.n; ++k) {
    const double tp = static_cast<double>(cm(k, k));
    const double denom = static_cast<double>(cm.row(k) + cm.col(k)) - tp;
    if (denom == 0) {
      out.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.per_class.push_back(tp / denom);
    sum += tp / denom;
    ++used;
  }
  out.mean = used ? sum / used : 0.0;
  return out;
}

inline double miou(const ConfusionMatrix& cm) { return iou(cm).mean; }

struct Overall {
  double pre, rec, f1, kc, oa, miou;
};

/// Macro (unweighted over all n categories) Pre/Rec/F1 with KC, OA, mIoU.
inline Overall overall(const ConfusionMatrix& cm) {
  Overall o{0, 0, 0, kappa(cm), overall_accuracy(cm), miou(cm)};
  for (int k = 0; k < cm.n; ++k) {
    const auto p = per_class_prf(cm, k);
    o.pre += p.pre;
    o.rec += p.rec;
    o.f1 += p.f1;
  }
  o.pre /= cm.n;
  o.rec /= cm.n;
  o.f1 /= cm.n;
  return o;
}

/// Detailed per-category and overall report.
inline nlohmann::json overall_report(const ConfusionMatrix& cm) {
  const auto ious = iou(cm);
  nlohmann::json detail = nlohmann::json::array();
  for (int k = 0; k < cm.n; ++k) {
    const auto p = per_class_prf(cm, k);
    nlohmann::json row = {{"category", k}, {"pre", p.pre}, {"rec", p.rec}, {"f1", p.f1},
                          {"iou", std::isnan(ious.per_class[k]) ? nlohmann::json(nullptr) : nlohmann::json(ious.per_class[k])},
                          {"truth_cells", cm.row(k)}, {"pred_cells", cm.col(k)}};
    if (static_cast<std::size_t>(k) < cm.names.size()) row["name"] = cm.names[k];
    detail.push_back(row);
  }
  const auto o = overall(cm);
  nlohmann::json matrix = nlohmann::json::array();
  for (int i = 0; i < cm.n; ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (int j = 0; j < cm.n; ++j) r.push_back(cm(i, j));
    matrix.push_back(r);
  }
  return {{"detailed", detail},
          {"overall", {{"pre", o.pre}, {"rec", o.rec}, {"f1", o.f1}, {"kc", o.kc}, {"oa", o.oa}, {"miou", o.miou}}},
          {"confusion_matrix", matrix},
          {"averaging", "macro"}};
}

}  // namespace agspnet::metrics
