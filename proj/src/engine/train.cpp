// SPDX-License-Identifier: Apache-2.0

#include "burnlora/engine/train.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "burnlora/diffcore/ops.hpp"
#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::engine {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 1 || max_steps < 1) throw ConfigError("train.max_epochs and train.max_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (weights.burn <= 0 || weights.unburn <= 0) throw ConfigError("train class weights must be positive");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"max_steps", max_steps},
          {"seed", seed},
          {"weight_burn", weights.burn},
          {"weight_unburn", weights.unburn},
          {"eval_every", eval_every},
          {"target_val_iou", target_val_iou},
          {"log_path", log_path.string()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const std::set<std::string> known{"lr",         "batch_size", "max_epochs", "max_steps",
                                           "seed",       "weight_burn", "weight_unburn", "eval_every",
                                           "target_val_iou", "log_path"};
  if (!j.is_object()) throw ConfigError("train: expected an object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (!known.count(key)) throw ConfigError("train: unknown key '" + key + "'");
      if (key == "lr") c.lr = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::int64_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::int64_t>();
      else if (key == "max_steps") c.max_steps = v.get<std::int64_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "weight_burn") c.weights.burn = v.get<double>();
      else if (key == "weight_unburn") c.weights.unburn = v.get<double>();
      else if (key == "eval_every") c.eval_every = v.get<std::int64_t>();
      else if (key == "target_val_iou") c.target_val_iou = v.get<double>();
      else if (key == "log_path") c.log_path = v.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
Tensor<T> band_tensor(const std::vector<float>& values, std::int64_t size) {
  return Tensor<T>::from({3, size, size}, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
objective::ConfusionCounts evaluate(const ModelAssembly<T>& model, const std::vector<dataplane::Patch>& patches) {
  objective::ConfusionCounts total;
  for (const auto& p : patches) {
    const auto logits = model.forward(band_tensor<T>(p.pre, p.size), band_tensor<T>(p.post, p.size));
    const auto pred = objective::argmax_mask<T>(logits.data(), p.mask.size());
    total += objective::confusion(pred, p.mask);
  }
  return total;
}

template <typename T>
TrainResult<T> train(ModelAssembly<T>& model, const std::vector<dataplane::Patch>& train_set,
                     const std::vector<dataplane::Patch>& val_set, const TrainConfig& config,
                     const Checkpoint<T>* resume) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw DataError("train: training and validation sets must be non-empty");
  const auto img = model.config().vit.img_size;
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& p : *set) {
      if (p.size != img) {
        throw DataError("patch of " + p.fire_id + " has size " + std::to_string(p.size) + ", model expects " +
                        std::to_string(img));
      }
    }
  }

  diffcore::Adam<T> adam({config.lr, 0.9, 0.999, 1e-8});
  TrainResult<T> result;
  std::int64_t step = 0;
  if (resume) {
    restore(*resume, model, &adam, false);
    step = resume->step;
    result.best_val_iou = resume->best_val_iou;
    result.best_step = step;
    result.best = *resume;
  }

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log " + config.log_path.string());
  }
  auto record = [&](const HistoryEntry& e) {
    result.history.push_back(e);
    if (log) {
      json line{{"step", e.step}, {"loss", e.loss}};
      line["val_iou"] = e.val_iou ? json(*e.val_iou) : json(nullptr);
      log << line.dump() << '\n' << std::flush;
    }
  };

  const auto n = static_cast<std::int64_t>(train_set.size());
  const auto per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const auto limit = std::min(config.max_steps, config.max_epochs * per_epoch);
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  auto& params = model.store().params();
  bool stop = false;

  while (step < limit && !stop) {
    const auto epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = diffcore::Rng::derive(config.seed, "epoch" + std::to_string(epoch)).permutation(train_set.size());
      order_epoch = epoch;
    }
    const auto begin = (step % per_epoch) * config.batch_size;
    const auto end = std::min(begin + config.batch_size, n);

    model.store().zero_grad();
    std::vector<std::string> ids;
    Tensor<T> loss;
    try {
      for (auto i = begin; i < end; ++i) {
        const auto& p = train_set[order[static_cast<std::size_t>(i)]];
        ids.push_back(p.fire_id + "@" + std::to_string(p.row) + "," + std::to_string(p.col));
        const auto logits = model.forward(band_tensor<T>(p.pre, p.size), band_tensor<T>(p.post, p.size));
        const auto l = objective::weighted_ce(logits, p.mask, config.weights);
        loss = loss.defined() ? diffcore::add(loss, l) : l;
      }
      loss = diffcore::scale(loss, static_cast<T>(1.0 / static_cast<double>(end - begin)));
      if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("non-finite loss");
      if (loss.requires_grad()) loss.backward();
      for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad()) {
          if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + p.name);
        }
      }
    } catch (const NumericError& e) {
      std::string list;
      for (const auto& id : ids) list += (list.empty() ? "" : " ") + id;
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step + 1) + " (batch: " + list + ")");
    }
    adam.step(params);
    ++step;

    HistoryEntry entry{step, static_cast<double>(loss.item()), std::nullopt};
    if (step % config.eval_every == 0 || step == limit) {
      const double val = objective::iou(evaluate(model, val_set));
      entry.val_iou = val;
      if (val > result.best_val_iou || result.best.entries.empty()) {
        result.best_val_iou = std::max(val, result.best_val_iou);
        result.best_step = step;
        result.best = capture(model, &adam, step, result.best_val_iou);
      }
      if (config.target_val_iou > 0 && val >= config.target_val_iou) stop = true;
    }
    record(entry);
  }
  model.store().zero_grad();
  result.steps = step;
  result.last = capture(model, &adam, step, result.best_val_iou);
  return result;
}

template Tensor<float> band_tensor(const std::vector<float>&, std::int64_t);
template Tensor<double> band_tensor(const std::vector<float>&, std::int64_t);
template objective::ConfusionCounts evaluate(const ModelAssembly<float>&, const std::vector<dataplane::Patch>&);
template objective::ConfusionCounts evaluate(const ModelAssembly<double>&, const std::vector<dataplane::Patch>&);
template TrainResult<float> train(ModelAssembly<float>&, const std::vector<dataplane::Patch>&,
                                  const std::vector<dataplane::Patch>&, const TrainConfig&, const Checkpoint<float>*);
template TrainResult<double> train(ModelAssembly<double>&, const std::vector<dataplane::Patch>&,
                                   const std::vector<dataplane::Patch>&, const TrainConfig&,
                                   const Checkpoint<double>*);

}  // namespace burnlora::engine
