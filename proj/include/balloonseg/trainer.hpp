#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/adam.hpp"
#include "balloonseg/augment.hpp"
#include "balloonseg/dataset.hpp"
#include "balloonseg/losses.hpp"
#include "balloonseg/metrics.hpp"
#include "balloonseg/model.hpp"
#include "balloonseg/rng.hpp"

namespace bseg {

struct TrainConfig {
  AdamConfig adam{};
  std::size_t epochs = 500;
  double split_train = 0.85;
  std::uint64_t seed = 0;
  double bce_weight = 1.0;
  double dice_weight = 1.0;
  DiceDenominator dice_form = DiceDenominator::Additive;
  double binarize_threshold = 0.5;
  std::size_t batch_size = 1;
  bool augment = true;
  AugmentConfig augmentation{};
  std::size_t checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;
  bool deterministic = true;

  void validate() const {
    if (!(adam.lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0,1)");
    if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0,1)");
    if (!(adam.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (!(split_train > 0.0 && split_train < 1.0)) throw std::invalid_argument("split_train must lie in (0,1)");
    if (!(bce_weight >= 0.0) || !(dice_weight >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
      throw std::invalid_argument("binarize_threshold must lie in (0,1)");
    }
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
    if (checkpoint_every > 0 && checkpoint_dir.empty()) throw std::invalid_argument("checkpoint_dir is required");
    augmentation.validate();
  }
};

/// Raised when a loss turns NaN or infinite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t epoch, std::string page_id, double loss)
      : NumericError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) + ", sample " +
                     page_id),
        epoch_(epoch),
        page_id_(std::move(page_id)) {}
  std::size_t epoch() const { return epoch_; }
  const std::string& page_id() const { return page_id_; }

 private:
  std::size_t epoch_;
  std::string page_id_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean total loss over optimizer steps
  MetricsReport train;      // on the augmented training forwards
  MetricsReport val;
};

inline std::string tsv_header() {
  return "epoch\ttrain_bce\ttrain_dice\tval_bce\tval_dice\tval_precision\tval_recall\tval_f1";
}

inline std::string tsv_line(const EpochLog& e) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << e.epoch << '\t' << e.train.bce << '\t' << e.train.dice_coeff << '\t'
     << e.val.bce << '\t' << e.val.dice_coeff << '\t' << e.val.precision << '\t' << e.val.recall << '\t' << e.val.f1;
  return os.str();
}

struct TrainResult {
  std::vector<EpochLog> history;
  MetricsReport summary;  // per-metric median of the last 5 validation reports
};

/// Stacks single-sample tensors along the batch axis.
inline Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  Shape s = items.front()->shape();
  for (const auto* t : items) {
    if (t->shape() != s) throw ShapeError("stack_batch: " + t->shape().str() + " differs from " + s.str());
  }
  const std::size_t per = s.size();
  s.n *= items.size();
  Tensor<float> out(s);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i]->data().begin(), items[i]->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

/// Eval-mode metrics pooled over all pixels of all samples.
inline MetricsReport evaluate(const Network<float>& net, const std::vector<Example>& samples, double threshold,
                              std::size_t epoch = 0) {
  MetricsAccumulator acc(threshold);
  for (const auto& s : samples) acc.add(s.mask, net.predict(s.image));
  return acc.report(epoch);
}

/// Metrics for precomputed predictions (same order as samples).
inline MetricsReport evaluate_predictions(const std::vector<Tensor<float>>& masks,
                                          const std::vector<Tensor<float>>& predictions, double threshold) {
  if (masks.size() != predictions.size()) throw std::invalid_argument("evaluate: mask/prediction count mismatch");
  MetricsAccumulator acc(threshold);
  for (std::size_t i = 0; i < masks.size(); ++i) acc.add(masks[i], predictions[i]);
  return acc.report();
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".bseg";
  return dir / os.str();
}

/// Full-pass epochs of Adam on bce + dice + L2. Augmentation draws come from
/// derive_seed(seed, page_id, epoch) so they do not depend on sample order.
/// When `val` is empty the per-epoch validation report is computed on `train`.
/// `stop` is asked after every epoch; returning true ends training early.
inline TrainResult train(Network<float>& net, const std::vector<Example>& train_set, const std::vector<Example>& val,
                         const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {},
                         const std::function<bool(const TrainResult&)>& stop = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);

  Adam<float> opt(cfg.adam);
  const LossWeights weights{cfg.bce_weight, cfg.dice_weight, cfg.dice_form};
  const auto& eval_set = val.empty() ? train_set : val;
  std::random_device entropy;
  const std::uint64_t order_seed =
      cfg.deterministic ? cfg.seed : (static_cast<std::uint64_t>(entropy()) << 32) ^ entropy();

  TrainResult result;
  std::vector<MetricsReport> val_history;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 order_rng(derive_seed(order_seed, "order", epoch));
    std::shuffle(order.begin(), order.end(), order_rng);

    MetricsAccumulator train_acc(cfg.binarize_threshold);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor<float>> images, masks;
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = train_set[order[k]];
        if (cfg.augment) {
          std::mt19937_64 rng(derive_seed(cfg.seed, ex.page_id, epoch));
          auto [img, msk] = bseg::augment(ex.image, ex.mask, cfg.augmentation, rng);
          images.push_back(std::move(img));
          masks.push_back(std::move(msk));
        } else {
          images.push_back(ex.image);
          masks.push_back(ex.mask);
        }
      }
      std::vector<const Tensor<float>*> ip, mp;
      for (std::size_t k = 0; k < images.size(); ++k) {
        ip.push_back(&images[k]);
        mp.push_back(&masks[k]);
      }
      const Tensor<float> x = images.size() == 1 ? std::move(images.front()) : stack_batch(ip);
      const Tensor<float> y = masks.size() == 1 ? std::move(masks.front()) : stack_batch(mp);

      net.zero_grad();
      typename Network<float>::Tape tape;
      const Tensor<float> yhat = net.forward(x, Mode::Train, &tape);
      const auto loss = total_loss(y, yhat, net.l2_penalty(), weights);
      if (!std::isfinite(loss.total)) throw TrainingDiverged(epoch, train_set[order[start]].page_id, loss.total);
      net.backward(tape, loss.grad);
      net.add_l2_gradient();
      opt.step(net.parameters());
      train_acc.add(y, yhat);
      loss_sum += loss.total;
      ++steps;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(steps);
    log.train = train_acc.report(epoch);
    log.val = evaluate(net, eval_set, cfg.binarize_threshold, epoch);
    val_history.push_back(log.val);
    result.history.push_back(log);
    result.summary = median_of_last(val_history, 5);
    const bool last = epoch == cfg.epochs || (stop && stop(result));
    if (cfg.checkpoint_every > 0 && (epoch % cfg.checkpoint_every == 0 || last)) {
      net.save_weights(checkpoint_path(cfg.checkpoint_dir, epoch));
    }
    if (on_epoch) on_epoch(log);
    if (last) break;
  }
  return result;
}

}  // namespace bseg
