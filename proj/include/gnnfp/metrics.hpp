#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

namespace gnnfp {

inline double accuracy(const std::vector<int>& pred,
                       const std::vector<int>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw std::invalid_argument("accuracy: empty or mismatched inputs");
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / pred.size();
}

// Label agreement between two models on the same inputs.
inline double fidelity(const std::vector<int>& pred_a,
                       const std::vector<int>& pred_b) {
  return accuracy(pred_a, pred_b);
}

struct VerdictOutcome {
  bool truth_surrogate;
  bool flagged_surrogate;
};

struct ErrorRates {
  std::optional<double> fpr;  // independent flagged as surrogate
  std::optional<double> fnr;  // surrogate flagged as independent
};

// Denominator-zero rates are reported as not-applicable, never as 0.
inline ErrorRates fpr_fnr(const std::vector<VerdictOutcome>& outcomes) {
  int fp = 0, tn = 0, fn = 0, tp = 0;
  for (const auto& o : outcomes) {
    if (o.truth_surrogate)
      (o.flagged_surrogate ? tp : fn)++;
    else
      (o.flagged_surrogate ? fp : tn)++;
  }
  ErrorRates r;
  if (fp + tn > 0) r.fpr = static_cast<double>(fp) / (fp + tn);
  if (fn + tp > 0) r.fnr = static_cast<double>(fn) / (fn + tp);
  return r;
}

struct MeanCi {
  double mean = 0.0;
  std::optional<double> ci_half_width;  // 1.96 * stderr; n/a for one repeat
};

inline MeanCi mean_ci95(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_ci95: empty");
  MeanCi out;
  for (double x : xs) out.mean += x;
  out.mean /= xs.size();
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    double stderr_ = std::sqrt(ss / (xs.size() - 1)) / std::sqrt(double(xs.size()));
    out.ci_half_width = 1.96 * stderr_;
  }
  return out;
}

}  // namespace gnnfp
