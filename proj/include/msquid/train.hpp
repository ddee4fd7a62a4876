#pragma once

// Mini-batch SGD with momentum for the CNN classifier.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cnn.hpp"
#include "detail/random.hpp"
#include "labels.hpp"
#include "tensor.hpp"

namespace msquid::cnn {

/// Minimum number of training images per class.
inline constexpr std::size_t kMinSamplesPerClass = 30;

struct TrainConfig {
  std::size_t iterations = 500;  // mini-batch steps
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Worker threads for per-sample gradients; 0 = hardware concurrency.
  // Results do not depend on this value.
  unsigned threads = 0;
};

struct Sample {
  Tensor input;
  Label label = Label::Benign;
};

struct TrainResult {
  CnnModel model;
  std::vector<double> loss_trace;  // mean batch loss per iteration
};

// Thrown when the loss stops being finite; carries the trace up to and
// including the offending iteration.
class TrainError : public CnnError {
 public:
  TrainError(CnnErrc kind, const std::string& msg, std::vector<double> trace = {})
      : CnnError(kind, msg), trace_(std::move(trace)) {}

  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.iterations == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) ||
      !(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw TrainError(CnnErrc::InvalidConfig,
                     "training config requires iterations >= 1, batch_size >= 1, "
                     "learning_rate > 0 and momentum in [0, 1)");
  }
}

inline void check_class_minimum(std::span<const Sample> data) {
  std::size_t counts[2] = {0, 0};
  for (const auto& s : data) ++counts[static_cast<std::size_t>(s.label)];
  if (counts[0] < kMinSamplesPerClass || counts[1] < kMinSamplesPerClass) {
    throw TrainError(CnnErrc::TooFewSamples,
                     "training needs at least 30 images for each class (benign " +
                         std::to_string(counts[0]) + ", malicious " + std::to_string(counts[1]) +
                         ")");
  }
}

/// Batches are drawn without replacement by a partial seeded shuffle each
/// iteration. The batch gradient is the mean of per-sample gradients, summed
/// in batch order, so results are identical for any thread count.
inline TrainResult train(CnnModel model, std::span<const Sample> data, const TrainConfig& cfg) {
  validate(cfg);
  check_class_minimum(data);
  for (const auto& s : data) check_input(model, s.input);

  const std::size_t n = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                      : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, batch));

  Rng rng(mix_seed(cfg.seed, 0x7472616996e));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<CnnModel> sample_grads(batch, CnnModel::zeros(model.input_side));
  std::vector<double> sample_loss(batch, 0.0);
  std::vector<Workspace> workspaces(threads);
  CnnModel velocity = CnnModel::zeros(model.input_side);
  CnnModel grad = CnnModel::zeros(model.input_side);

  TrainResult result;
  result.loss_trace.reserve(cfg.iterations);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(order[i], order[j]);
    }

    auto work = [&](unsigned t) {
      for (std::size_t i = t; i < batch; i += threads) {
        sample_grads[i].set_zero();
        const Sample& s = data[order[i]];
        sample_loss[i] = accumulate_gradient(model, s.input, s.label, workspaces[t], sample_grads[i]);
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    }

    grad.set_zero();
    double batch_loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      grad.add_scaled(sample_grads[i], 1.0);
      batch_loss += sample_loss[i];
    }
    batch_loss /= static_cast<double>(batch);
    result.loss_trace.push_back(batch_loss);
    if (!std::isfinite(batch_loss)) {
      throw TrainError(CnnErrc::NonFiniteLoss,
                       "loss diverged at iteration " + std::to_string(it), result.loss_trace);
    }

    // v <- momentum * v - lr * mean_grad ; w <- w + v
    const double step = cfg.learning_rate / static_cast<double>(batch);
    auto vb = velocity.blocks();
    auto gb = grad.blocks();
    auto wb = model.blocks();
    for (std::size_t k = 0; k < vb.size(); ++k) {
      auto& v = *vb[k];
      const auto& g = *gb[k];
      auto& w = *wb[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg.momentum * v[i] - step * g[i];
        w[i] += v[i];
      }
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace msquid::cnn
