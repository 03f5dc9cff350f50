#pragma once

#include <cmath>
#include <vector>

#include "mote/config.hpp"
#include "mote/mat.hpp"

namespace mote {

// Cross-entropy of one logit row against a target class.
// When dlogits is non-null, adds scale * (softmax - onehot) into it.
inline double softmax_xent(const double* logits, int n, int target,
                           double* dlogits = nullptr, double scale = 1.0) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  double loss = std::log(z) - (logits[target] - mx);
  if (dlogits) {
    for (int i = 0; i < n; ++i)
      dlogits[i] += scale * std::exp(logits[i] - mx) / z;
    dlogits[target] -= scale;
  }
  return loss;
}

struct MlmLossResult {
  double value = 0.0;
  bool empty = false;  // warning flag: no masked positions
};

// Mean cross-entropy over masked positions. logits holds one row per label,
// in label order.
inline MlmLossResult mlm_loss(const Mat& logits,
                              const std::vector<int>& labels) {
  if (int(labels.size()) != logits.rows)
    throw InputError("mlm_loss: one logit row per label required");
  if (labels.empty()) return {0.0, true};
  double total = 0.0;
  for (size_t i = 0; i < labels.size(); ++i)
    total += softmax_xent(logits.row(int(i)), logits.cols, labels[i]);
  return {total / double(labels.size()), false};
}

// Mean next-token cross-entropy. Row i of the decoder logits predicts span
// token i; the leading CLS (position 0) is never a target.
inline double clm_loss(const Mat& logits, const TokenSequence& span) {
  if (span.length() < 2) throw InputError("clm_loss: span length must be >= 2");
  if (logits.rows != span.length())
    throw InputError("clm_loss: logits rows must equal span length");
  double total = 0.0;
  for (int i = 1; i < span.length(); ++i)
    total += softmax_xent(logits.row(i), logits.cols, span.ids[i]);
  return total / double(span.length() - 1);
}

// InfoNCE over one positive and a set of negatives, optionally returning the
// gradient with respect to each raw score.
inline double contrastive_loss(double pos_score,
                               const std::vector<double>& neg_scores,
                               double temperature, double* dpos = nullptr,
                               std::vector<double>* dnegs = nullptr) {
  if (neg_scores.empty())
    throw InputError("contrastive_loss: at least one negative required");
  if (temperature <= 0.0)
    throw ConfigError("contrastive_loss: temperature must be positive");
  double inv_t = 1.0 / temperature;
  double mx = pos_score;
  for (double s : neg_scores) mx = std::max(mx, s);
  double zpos = std::exp((pos_score - mx) * inv_t);
  double z = zpos;
  for (double s : neg_scores) z += std::exp((s - mx) * inv_t);
  double loss = -std::log(zpos / z);
  if (dpos) *dpos = (zpos / z - 1.0) * inv_t;
  if (dnegs) {
    dnegs->resize(neg_scores.size());
    for (size_t i = 0; i < neg_scores.size(); ++i)
      (*dnegs)[i] = std::exp((neg_scores[i] - mx) * inv_t) / z * inv_t;
  }
  return loss;
}

}  // namespace mote
