#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "hofmn/common.hpp"
#include "hofmn/model.hpp"

namespace hofmn {

// Every loss decreases as the attack makes progress; the attack descends it.
enum class LossKind { ce, ll, dlr };

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ce: return "ce";
    case LossKind::ll: return "ll";
    case LossKind::dlr: return "dlr";
  }
  return "?";
}

inline LossKind loss_kind_from_string(std::string_view name) {
  if (name == "ce") return LossKind::ce;
  if (name == "ll") return LossKind::ll;
  if (name == "dlr") return LossKind::dlr;
  throw rejected_input("unknown loss '" + std::string(name) + "'");
}

/// Permutation ordering the logits descending; equal logits keep index order.
inline std::vector<std::size_t> sorted_logit_indices(const Vector& logits) {
  std::vector<std::size_t> order(static_cast<std::size_t>(logits.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits[static_cast<Eigen::Index>(a)] > logits[static_cast<Eigen::Index>(b)];
  });
  return order;
}

/// True iff the lowest-index argmax differs from the label.
inline bool is_adversarial(const Vector& logits, std::size_t label) {
  return predict(logits) != label;
}

namespace detail {

inline std::size_t strongest_other(const Vector& logits, std::size_t label) {
  std::size_t best = label == 0 ? 1 : 0;
  for (std::size_t j = 0; j < static_cast<std::size_t>(logits.size()); ++j)
    if (j != label && logits[static_cast<Eigen::Index>(j)] > logits[static_cast<Eigen::Index>(best)])
      best = j;
  return best;
}

inline void check_label(const Vector& logits, std::size_t label) {
  require(logits.size() >= 2, "losses need at least two classes");
  require(label < static_cast<std::size_t>(logits.size()), "label out of range");
  require(logits.allFinite(), "non-finite logits");
}

}  // namespace detail

/// Loss value and its gradient with respect to the logits.
inline HeadEval loss_head(LossKind kind, const Vector& logits, std::size_t label) {
  detail::check_label(logits, label);
  const auto y = static_cast<Eigen::Index>(label);
  HeadEval out;
  out.grad = Vector::Zero(logits.size());
  switch (kind) {
    case LossKind::ce: {
      // log softmax_y, evaluated with the max shift.
      const double top = logits.maxCoeff();
      const Vector shifted = (logits.array() - top).exp().matrix();
      const double sum = shifted.sum();
      out.value = logits[y] - top - std::log(sum);
      out.grad = -shifted / sum;
      out.grad[y] += 1.0;
      break;
    }
    case LossKind::ll: {
      const auto j = static_cast<Eigen::Index>(detail::strongest_other(logits, label));
      out.value = logits[y] - logits[j];
      out.grad[y] = 1.0;
      out.grad[j] = -1.0;
      break;
    }
    case LossKind::dlr: {
      if (logits.size() < 3)
        throw unsupported_configuration("DLR loss needs at least three classes");
      const auto order = sorted_logit_indices(logits);
      const auto first = static_cast<Eigen::Index>(order[0]);
      const auto third = static_cast<Eigen::Index>(order[2]);
      const double denom = logits[first] - logits[third];
      if (!(denom > 0.0))
        throw degenerate_denominator("DLR denominator vanishes (top and third logits tie)");
      const auto j = static_cast<Eigen::Index>(detail::strongest_other(logits, label));
      const double numer = logits[y] - logits[j];
      out.value = numer / denom;
      out.grad[y] += 1.0 / denom;
      out.grad[j] -= 1.0 / denom;
      const double scale = numer / (denom * denom);
      out.grad[first] -= scale;
      out.grad[third] += scale;
      break;
    }
  }
  return out;
}

inline double loss_value(LossKind kind, const Vector& logits, std::size_t label) {
  return loss_head(kind, logits, label).value;
}

inline Vector loss_gradient(LossKind kind, const Model& model, const Vector& x,
                            std::size_t label) {
  return input_gradient(model, x, [&](const Vector& z) { return loss_head(kind, z, label); });
}

}  // namespace hofmn
