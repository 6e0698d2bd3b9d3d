#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "backward.hpp"
#include "data.hpp"
#include "error.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "optim.hpp"

namespace dforest {

struct TrainConfig {
  std::size_t trees = 1024;
  std::size_t depth = 5;
  std::size_t batch_size = 512;
  OptimizerConfig optimizer;  // learning rate 0.002, qhadam
  GateKind gate = GateKind::sigmoid;
  std::size_t reduction = 16;
  std::size_t max_epochs = 256;
  // Epochs without validation improvement before stopping.
  std::size_t patience = 16;
  std::uint64_t seed = 42;
  std::size_t threads = 1;

  void validate() const {
    if (trees < 1 || depth < 1 || batch_size < 1 || reduction < 1 || patience < 1 ||
        threads < 1)
      throw Error("trees, depth, batch size, reduction, patience and threads must be >= 1");
    if (depth > 20) throw Error("depth " + std::to_string(depth) + " is too large");
    optimizer.validate();
    attention_hidden_width(trees, reduction);
  }

  ModelShape shape(std::size_t features, std::size_t outputs) const {
    return {trees, depth, features, outputs, reduction, gate};
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_metric = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;  // empty when no epoch ran
  double best_val_metric = 0;
  double test_metric = 0;
  std::size_t parameter_count = 0;
  double wall_seconds = 0;
  // Largest byte count held by the model, optimizer state, forward trace,
  // gradient buffer and batch buffer at any point in training.
  std::size_t peak_buffer_bytes = 0;
};

struct TrainResult {
  Parameters params;
  TrainReport report;
};

struct TrainOptions {
  std::ostream* progress = nullptr;
  // Starting point instead of a seeded initialization; must match the shape
  // implied by the config and data.
  std::optional<Parameters> initial;
};

// Metric over all rows, streamed in unshuffled batches. Per-row metric terms
// are summed in row order, so the value does not depend on batch_size.
inline double evaluate(const Parameters& params, const DataMatrix& data,
                       const TaskBinding& binding, std::size_t batch_size = 512,
                       std::size_t threads = 1) {
  if (data.features() != params.forest.features())
    throw Error("model expects " + std::to_string(params.forest.features()) +
                " features, data has " + std::to_string(data.features()));
  if (params.forest.outputs() != binding.outputs())
    throw Error("model output width does not match the task");
  if (batch_size == 0) throw Error("batch size must be >= 1");
  if (data.size() == 0) throw Error("cannot evaluate on an empty dataset");
  Batch batch;
  ForwardTrace trace;
  double sum = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    slice_batch(data, begin, count, batch);
    forward(params, batch.rows, trace, threads);
    for (std::size_t i = 0; i < count; ++i)
      sum += sample_metric(binding, trace.predictions.row(i), batch.targets[i]);
  }
  return sum / double(data.size());
}

// Raw model outputs (B x F) for every row, in row order.
inline Matrix<double> predict_all(const Parameters& params, const DataMatrix& data,
                                  std::size_t batch_size = 512, std::size_t threads = 1) {
  if (data.features() != params.forest.features())
    throw Error("model expects " + std::to_string(params.forest.features()) +
                " features, data has " + std::to_string(data.features()));
  Matrix<double> out(data.size(), params.forest.outputs());
  Batch batch;
  ForwardTrace trace;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    slice_batch(data, begin, count, batch);
    forward(params, batch.rows, trace, threads);
    for (std::size_t i = 0; i < count; ++i) {
      auto src = trace.predictions.row(i);
      std::copy(src.begin(), src.end(), out.row(begin + i).begin());
    }
  }
  return out;
}

// Mini-batch training with patience early stopping on the validation metric.
// Returns the best-validation snapshot, evaluated on the test split.
inline TrainResult train(const TrainConfig& config, const DataMatrix& train_data,
                         const DataMatrix& val_data, const DataMatrix& test_data,
                         const TaskBinding& binding, TrainOptions options = {}) {
  config.validate();
  if (train_data.size() == 0 || val_data.size() == 0 || test_data.size() == 0)
    throw Error("train, validation and test splits must be nonempty");
  const std::size_t m = train_data.features();
  if (val_data.features() != m || test_data.features() != m)
    throw Error("train, validation and test splits have different feature counts");
  const auto wall_start = std::chrono::steady_clock::now();

  const auto shape = config.shape(m, binding.outputs());
  Parameters params = options.initial ? std::move(*options.initial)
                                      : initialize_parameters(shape, config.seed);
  params.forest.validate();
  if (params.shape().features != m || params.forest.outputs() != binding.outputs() ||
      params.forest.size() != config.trees || params.forest.depth() != config.depth ||
      params.attention.gate != config.gate)
    throw Error("initial parameters do not match the training configuration");

  Optimizer optimizer(config.optimizer);
  GradientBuffer grads = GradientBuffer::like(params);
  ForwardTrace trace;
  Batch batch;

  TrainResult result{params, {}};
  auto& report = result.report;
  report.parameter_count = parameter_count(params);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    BatchStream stream(train_data, config.batch_size, config.seed, epoch);
    double loss_sum = 0;
    std::size_t batch_index = 0;
    while (stream.next(batch)) {
      forward(params, batch.rows, trace, config.threads);
      const auto value = loss(trace.predictions, batch.targets, binding);
      if (!std::isfinite(value.mean))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch_index));
      loss_sum += value.mean * double(batch.size());
      backward_pass(params, trace, batch, binding, grads, config.threads);
      optimizer.step(params, grads);
      report.peak_buffer_bytes =
          std::max(report.peak_buffer_bytes, parameter_bytes(params) +
                                                 parameter_bytes(grads.values) +
                                                 optimizer.capacity_bytes() +
                                                 trace.capacity_bytes() + batch.capacity_bytes());
      ++batch_index;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(train_data.size());
    rec.val_metric = evaluate(params, val_data, binding, config.batch_size, config.threads);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    report.history.push_back(rec);
    if (options.progress) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %4zu  train_loss %.6g  val_%s %.6g  %.2fs\n",
                    epoch, rec.train_loss, std::string(to_string(binding.metric)).c_str(),
                    rec.val_metric, rec.seconds);
      *options.progress << line << std::flush;
    }

    if (!report.best_epoch || rec.val_metric < report.best_val_metric) {
      report.best_epoch = epoch;
      report.best_val_metric = rec.val_metric;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  report.test_metric = evaluate(result.params, test_data, binding, config.batch_size,
                                config.threads);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return result;
}

}  // namespace dforest
