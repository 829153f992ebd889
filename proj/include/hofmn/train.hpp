#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hofmn/common.hpp"
#include "hofmn/dataset.hpp"
#include "hofmn/losses.hpp"
#include "hofmn/model.hpp"

namespace hofmn {

struct TrainOptions {
  std::size_t epochs = 100;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Inner maximisation used by adversarial training. eps == 0 disables it.
struct AdversarialOptions {
  double eps = 0.0;
  std::size_t pgd_steps = 10;
};

struct TrainReport {
  Model model;
  double train_accuracy = 0.0;
};

inline double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : data.samples) correct += predict(model.forward(s.x)) == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {

// l-inf PGD on the cross-entropy: sign steps of 2.5 * eps / steps, projected
// onto the eps-ball and the unit box.
inline Vector pgd_linf(const Model& model, const Sample& s, double eps, std::size_t steps) {
  Vector delta = Vector::Zero(s.x.size());
  if (eps <= 0.0) return delta;
  const double step = 2.5 * eps / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector g = loss_gradient(LossKind::ce, model, s.x + delta, s.label);
    delta -= step * g.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
    delta = delta.cwiseMax(-eps).cwiseMin(eps);
    delta = (s.x + delta).cwiseMax(0.0).cwiseMin(1.0) - s.x;
  }
  return delta;
}

inline TrainReport train(const Dataset& data, const Architecture& arch, const TrainOptions& opt,
                         const AdversarialOptions& adv) {
  require(!data.empty(), "training set is empty");
  require(opt.epochs >= 1, "epochs must be at least 1");
  require(opt.lr > 0.0, "learning rate must be positive");
  require(opt.batch_size >= 1, "batch size must be at least 1");
  require(adv.eps >= 0.0, "training radius must be non-negative");
  require(adv.pgd_steps >= 1, "pgd steps must be at least 1");
  require(data.dim() == arch.input_dim, "dataset dimension does not match the architecture");
  data.validate(arch.class_count());

  Model model = Model::random(arch, derive_seed(opt.seed, "train/init"));
  std::mt19937_64 shuffle_rng(derive_seed(opt.seed, "train/shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Matrix> dw;
  std::vector<Vector> db;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    dw.push_back(Matrix::Zero(model.weights()[l].rows(), model.weights()[l].cols()));
    db.push_back(Vector::Zero(model.biases()[l].size()));
  }

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      for (auto& m : dw) m.setZero();
      for (auto& v : db) v.setZero();
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = data.samples[order[i]];
        const Vector input = s.x + pgd_linf(model, s, adv.eps, adv.pgd_steps);
        const auto tape = model.forward_tape(input);
        // Mean cross-entropy is -log softmax_y, the negated CE head.
        const Vector dlogits = -loss_head(LossKind::ce, tape.logits, s.label).grad;
        model.backprop_params(tape, dlogits, dw, db);
      }
      const double scale = opt.lr / static_cast<double>(end - start);
      for (std::size_t l = 0; l < model.layer_count(); ++l) {
        model.mutable_weights()[l] -= scale * dw[l];
        model.mutable_biases()[l] -= scale * db[l];
      }
    }
  }
  model.seed_provenance = "seed=" + std::to_string(opt.seed);
  if (adv.eps > 0.0) model.seed_provenance += ";eps_train=" + std::to_string(adv.eps);
  return {model, accuracy(model, data)};
}

}  // namespace detail

inline TrainReport train_standard(const Dataset& data, const Architecture& arch,
                                  const TrainOptions& opt) {
  return detail::train(data, arch, opt, AdversarialOptions{});
}

inline TrainReport train_adversarial(const Dataset& data, const Architecture& arch,
                                     const TrainOptions& opt, const AdversarialOptions& adv) {
  return detail::train(data, arch, opt, adv);
}

}  // namespace hofmn
