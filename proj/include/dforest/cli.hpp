#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "backward.hpp"
#include "data.hpp"
#include "error.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "objective.hpp"
#include "trainer.hpp"

namespace dforest::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2 };

// Test seam for gradcheck: runs on the analytic gradient before comparison.
using GradientHook = std::function<void(GradientBuffer&)>;

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline SplitFractions parse_split(const std::string& s) {
  std::vector<double> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto v = dforest::detail::parse_real(dforest::detail::trim(item));
    if (!v) throw UsageError("--split expects three comma-separated numbers, got '" + s + "'");
    parts.push_back(*v);
  }
  if (parts.size() != 3)
    throw UsageError("--split expects three comma-separated numbers, got '" + s + "'");
  return {parts[0], parts[1], parts[2]};
}

template <typename Fn>
auto usage_guard(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

struct TrainFlags {
  std::string data, train, val, test;
  std::string task = "regression";
  int classes = 0;
  std::string target;
  std::string split = "0.7,0.15,0.15";
  std::size_t trees = 1024, depth = 5, batch = 512;
  double lr = 0.002;
  std::string optimizer = "qhadam", attention = "sigmoid";
  std::size_t reduction = 16, epochs = 256, patience = 16;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::string out = "model.json", metrics;
};

struct EvalFlags {
  std::string model, data, out;
  std::size_t batch = 512, threads = 1;
};

struct GradcheckFlags {
  std::uint64_t seed = 42;
  double eps = 1e-5, tolerance = 1e-4;
  std::string attention = "sigmoid", task = "regression";
  int classes = 3;
  std::size_t trees = 4, depth = 3, features = 10, batch = 8, reduction = 2;
};

inline int cmd_train(const TrainFlags& f, Streams io) {
  const auto kind = usage_guard([&] { return parse_target_kind(f.task); });
  TrainConfig config;
  config.trees = f.trees;
  config.depth = f.depth;
  config.batch_size = f.batch;
  config.optimizer.learning_rate = f.lr;
  config.optimizer.kind = usage_guard([&] { return parse_optimizer_kind(f.optimizer); });
  config.gate = usage_guard([&] { return parse_gate_kind(f.attention); });
  config.reduction = f.reduction;
  config.max_epochs = f.epochs;
  config.patience = f.patience;
  config.seed = f.seed;
  config.threads = f.threads;
  usage_guard([&] {
    config.validate();
    return 0;
  });
  const bool triple = !f.train.empty() || !f.val.empty() || !f.test.empty();
  if (triple == !f.data.empty())
    throw UsageError("give either --data or all of --train/--val/--test");
  if (triple && (f.train.empty() || f.val.empty() || f.test.empty()))
    throw UsageError("--train, --val and --test must be given together");
  if (kind == TargetKind::multiclass && f.classes < 2)
    throw UsageError("--task multiclass requires --classes C with C >= 2");

  DatasetSchema schema;
  schema.target_kind = kind;
  schema.classes = kind == TargetKind::multiclass ? f.classes : 0;
  schema.target_column = f.target;

  DataMatrix train_set, val_set, test_set;
  if (triple) {
    train_set = load_csv(f.train, schema);
    val_set = load_csv(f.val, train_set.schema);
    test_set = load_csv(f.test, train_set.schema);
    if (val_set.schema.feature_names != train_set.schema.feature_names ||
        test_set.schema.feature_names != train_set.schema.feature_names)
      throw Error("--train/--val/--test files have different feature columns");
  } else {
    const auto fractions = parse_split(f.split);
    auto all = load_csv(f.data, schema);
    std::tie(train_set, val_set, test_set) = split(all, fractions, f.seed);
  }
  const auto standardizer = Standardizer::fit(train_set);
  standardizer.apply_inplace(train_set);
  standardizer.apply_inplace(val_set);
  standardizer.apply_inplace(test_set);

  const auto binding = TaskBinding::for_schema(train_set.schema);
  TrainOptions options;
  options.progress = &io.out;
  auto result = train(config, train_set, val_set, test_set, binding, options);

  ModelFile model{kModelFormatVersion, train_set.schema, standardizer, std::move(result.params)};
  save_model(f.out, model);
  const std::string metrics_path = f.metrics.empty() ? f.out + ".metrics.json" : f.metrics;
  std::ofstream ms(metrics_path);
  if (!ms) throw Error("cannot write metrics file '" + metrics_path + "'");
  ms << metrics_json(config, binding, result.report).dump(2) << '\n';
  io.out << "test_" << to_string(binding.metric) << ' ' << fmt17(result.report.test_metric)
         << '\n';
  return kSuccess;
}

// Loads a CSV against a saved model's schema and standardizes it.
inline DataMatrix load_for_model(const ModelFile& model, const std::string& path,
                                 bool require_target) {
  DataMatrix data;
  if (require_target) {
    DatasetSchema schema = model.schema;
    schema.feature_count = 0;
    data = load_csv(path, schema);
    if (data.features() != model.schema.feature_count)
      throw Error("schema mismatch: model expects M = " +
                  std::to_string(model.schema.feature_count) + " features, '" + path +
                  "' has M = " + std::to_string(data.features()));
  } else {
    data = load_features_csv(path, model.schema);
  }
  model.standardizer.apply_inplace(data);
  return data;
}

inline int cmd_evaluate(const EvalFlags& f, Streams io) {
  const auto model = load_model(f.model);
  const auto data = load_for_model(model, f.data, true);
  const auto binding = TaskBinding::for_schema(model.schema);
  const double value = evaluate(model.params, data, binding, f.batch, f.threads);
  io.out << to_string(binding.metric) << ' ' << fmt17(value) << '\n';
  return kSuccess;
}

inline int cmd_predict(const EvalFlags& f, Streams io) {
  if (f.out.empty()) throw UsageError("predict requires --out PATH");
  const auto model = load_model(f.model);
  const auto data = load_for_model(model, f.data, false);
  const auto pred = predict_all(model.params, data, f.batch, f.threads);
  std::ofstream os(f.out);
  if (!os) throw Error("cannot write predictions to '" + f.out + "'");
  const auto kind = model.schema.target_kind;
  if (kind == TargetKind::regression) {
    os << "prediction\n";
    for (std::size_t i = 0; i < pred.rows(); ++i) os << fmt17(pred(i, 0)) << '\n';
  } else {
    const std::size_t classes = static_cast<std::size_t>(model.schema.classes);
    os << "class";
    for (std::size_t c = 0; c < classes; ++c) os << ",prob_" << c;
    os << '\n';
    std::vector<double> prob(classes);
    for (std::size_t i = 0; i < pred.rows(); ++i) {
      if (kind == TargetKind::binary) {
        prob[1] = sigmoid(pred(i, 0));
        prob[0] = 1.0 - prob[1];
      } else {
        apply_gate<double>(GateKind::softmax, pred.row(i), prob);
      }
      std::size_t label = 0;
      if (kind == TargetKind::binary) {
        label = pred(i, 0) > 0.0 ? 1 : 0;
      } else {
        auto row = pred.row(i);
        label = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      }
      os << label;
      for (double p : prob) os << ',' << fmt17(p);
      os << '\n';
    }
  }
  io.out << "wrote " << pred.rows() << " predictions to " << f.out << '\n';
  return kSuccess;
}

inline int cmd_gradcheck(const GradcheckFlags& f, Streams io, const GradientHook& hook) {
  const auto kind = usage_guard([&] { return parse_target_kind(f.task); });
  const auto gate = usage_guard([&] { return parse_gate_kind(f.attention); });
  const auto binding = usage_guard([&] { return TaskBinding::for_task(kind, f.classes); });
  ModelShape shape{f.trees, f.depth, f.features, binding.outputs(), f.reduction, gate};
  usage_guard([&] {
    attention_hidden_width(shape.trees, shape.reduction);
    if (f.batch < 1 || !(f.eps > 0)) throw Error("--batch must be >= 1 and --eps > 0");
    return 0;
  });
  auto prob = random_gradcheck_problem(shape, binding, f.batch, f.seed);

  ForwardTrace trace;
  forward(prob.params, prob.batch.rows, trace);
  auto grads = GradientBuffer::like(prob.params);
  backward_pass(prob.params, trace, prob.batch, binding, grads);
  if (hook) hook(grads);
  FiniteDifferenceOptions opt;
  opt.eps = f.eps;
  opt.seed = f.seed;
  const auto report = finite_difference_check(prob.params, prob.batch, binding, grads, opt);

  io.out << "gradcheck task=" << to_string(kind) << " attention=" << to_string(gate)
         << " K=" << f.trees << " d=" << f.depth << " M=" << f.features << " B=" << f.batch
         << " eps=" << f.eps << " seed=" << f.seed << '\n';
  io.out << report.table();
  const auto failing = report.failing(f.tolerance);
  if (failing.empty()) {
    io.out << "PASS (tolerance " << f.tolerance << ")\n";
    return kSuccess;
  }
  io.err << "FAIL: gradient mismatch in group";
  for (auto g : failing) io.err << ' ' << to_string(g);
  io.err << " (worst at " << report.worst << ")\n";
  return kFailure;
}

}  // namespace detail

// Entry point shared by the dforest binary and the tests. args excludes the
// program name.
inline int run(const std::vector<std::string>& args, Streams io = {},
               const GradientHook& gradcheck_hook = {}) {
  CLI::App app{"Differentiable forest with tree attention: train, evaluate, predict, gradcheck"};
  app.require_subcommand(1);

  detail::TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model from CSV data");
  train_cmd->add_option("--data", tf.data, "CSV with features and target (split internally)");
  train_cmd->add_option("--train", tf.train, "Pre-split training CSV");
  train_cmd->add_option("--val", tf.val, "Pre-split validation CSV");
  train_cmd->add_option("--test", tf.test, "Pre-split test CSV");
  train_cmd->add_option("--task", tf.task, "regression | binary | multiclass");
  train_cmd->add_option("--classes", tf.classes, "Number of classes for multiclass");
  train_cmd->add_option("--target", tf.target, "Target column name or index (default: last)");
  train_cmd->add_option("--split", tf.split, "train,val,test fractions");
  train_cmd->add_option("--trees", tf.trees, "Number of trees K");
  train_cmd->add_option("--depth", tf.depth, "Tree depth");
  train_cmd->add_option("--batch", tf.batch, "Batch size");
  train_cmd->add_option("--lr", tf.lr, "Learning rate");
  train_cmd->add_option("--optimizer", tf.optimizer, "sgd | adam | qhadam");
  train_cmd->add_option("--attention", tf.attention, "off | sigmoid | softmax");
  train_cmd->add_option("--reduction", tf.reduction, "Attention reduction ratio r");
  train_cmd->add_option("--epochs", tf.epochs, "Maximum epochs");
  train_cmd->add_option("--patience", tf.patience, "Early-stopping patience (epochs)");
  train_cmd->add_option("--seed", tf.seed, "Random seed");
  train_cmd->add_option("--threads", tf.threads, "Intra-batch threads (1 = deterministic)");
  train_cmd->add_option("--out", tf.out, "Model output path");
  train_cmd->add_option("--metrics", tf.metrics, "Metrics JSON path (default: OUT.metrics.json)");

  detail::EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a model on a CSV with targets");
  eval_cmd->add_option("--model", ef.model, "Model file")->required();
  eval_cmd->add_option("--data", ef.data, "CSV with features and target")->required();
  eval_cmd->add_option("--batch", ef.batch, "Evaluation batch size");
  eval_cmd->add_option("--threads", ef.threads, "Threads");

  detail::EvalFlags pf;
  auto* predict_cmd = app.add_subcommand("predict", "Write predictions for a feature CSV");
  predict_cmd->add_option("--model", pf.model, "Model file")->required();
  predict_cmd->add_option("--data", pf.data, "Feature CSV (target column optional)")->required();
  predict_cmd->add_option("--out", pf.out, "Output CSV")->required();
  predict_cmd->add_option("--batch", pf.batch, "Batch size");
  predict_cmd->add_option("--threads", pf.threads, "Threads");

  detail::GradcheckFlags gf;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Check gradients against finite differences");
  grad_cmd->add_option("--seed", gf.seed, "Random seed");
  grad_cmd->add_option("--eps", gf.eps, "Finite-difference step");
  grad_cmd->add_option("--tolerance", gf.tolerance, "Max relative error");
  grad_cmd->add_option("--attention", gf.attention, "off | sigmoid | softmax");
  grad_cmd->add_option("--task", gf.task, "regression | binary | multiclass");
  grad_cmd->add_option("--classes", gf.classes, "Classes for multiclass");
  grad_cmd->add_option("--trees", gf.trees, "Trees K");
  grad_cmd->add_option("--depth", gf.depth, "Depth");
  grad_cmd->add_option("--features", gf.features, "Features M");
  grad_cmd->add_option("--batch", gf.batch, "Batch size B");
  grad_cmd->add_option("--reduction", gf.reduction, "Reduction ratio r");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << '\n' << "run with --help for usage\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return detail::cmd_train(tf, io);
    if (*eval_cmd) return detail::cmd_evaluate(ef, io);
    if (*predict_cmd) return detail::cmd_predict(pf, io);
    if (*grad_cmd) return detail::cmd_gradcheck(gf, io, gradcheck_hook);
  } catch (const UsageError& e) {
    io.err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace dforest::cli
