#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "trainer.hpp"

namespace dforest {

inline constexpr int kModelFormatVersion = 1;

// Everything predict/evaluate needs: the schema, the training-split
// standardizer and the parameters.
struct ModelFile {
  int format_version = kModelFormatVersion;
  DatasetSchema schema;
  Standardizer standardizer;
  Parameters params;
};

namespace detail {

// 17 significant digits round-trips every finite double exactly.
inline void write_array(std::ostream& os, std::span<const double> values) {
  os << '[';
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    if (i) os << ',';
    os << buf;
  }
  os << ']';
}

inline std::vector<double> read_array(const nlohmann::json& j, std::size_t expected,
                                      const std::string& what) {
  if (!j.is_array() || j.size() != expected)
    throw Error("model file: '" + what + "' should hold " + std::to_string(expected) +
                " numbers");
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : j) {
    if (!v.is_number()) throw Error("model file: non-numeric entry in '" + what + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

inline void copy_into(std::span<double> dst, const std::vector<double>& src) {
  std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace detail

inline void write_model(std::ostream& os, const ModelFile& model) {
  using nlohmann::json;
  const auto& p = model.params;
  const auto shape = p.shape();
  json schema = {{"feature_count", model.schema.feature_count},
                 {"target_kind", to_string(model.schema.target_kind)},
                 {"classes", model.schema.classes},
                 {"target_column", model.schema.target_column},
                 {"feature_names", model.schema.feature_names}};
  json config = {{"trees", shape.trees},          {"depth", shape.depth},
                 {"outputs", shape.outputs},      {"reduction", shape.reduction},
                 {"hidden", p.attention.hidden()}, {"gate", to_string(shape.gate)}};

  os << "{\n\"format_version\": " << model.format_version << ",\n";
  os << "\"schema\": " << schema.dump() << ",\n";
  os << "\"config\": " << config.dump() << ",\n";
  os << "\"standardizer\": {\"means\": ";
  detail::write_array(os, model.standardizer.means);
  os << ", \"stds\": ";
  detail::write_array(os, model.standardizer.stds);
  os << "},\n\"parameters\": {\"trees\": [\n";
  for (std::size_t h = 0; h < p.forest.size(); ++h) {
    const auto& t = p.forest.trees[h];
    os << "{\"A\": ";
    detail::write_array(os, t.A.flat());
    os << ", \"b\": ";
    detail::write_array(os, t.b);
    os << ", \"Q\": ";
    detail::write_array(os, t.Q.flat());
    os << (h + 1 < p.forest.size() ? "},\n" : "}\n");
  }
  os << "],\n\"W1\": ";
  detail::write_array(os, p.attention.W1.flat());
  os << ",\n\"W2\": ";
  detail::write_array(os, p.attention.W2.flat());
  os << "}\n}\n";
}

inline ModelFile read_model(std::istream& is) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    ModelFile m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version > kModelFormatVersion)
      throw Error("model file format_version " + std::to_string(m.format_version) +
                  " is newer than this reader supports (" +
                  std::to_string(kModelFormatVersion) + ")");
    if (m.format_version < 1) throw Error("model file has invalid format_version");

    const auto& s = j.at("schema");
    m.schema.feature_count = s.at("feature_count").get<std::size_t>();
    m.schema.target_kind = parse_target_kind(s.at("target_kind").get<std::string>());
    m.schema.classes = s.at("classes").get<int>();
    m.schema.target_column = s.at("target_column").get<std::string>();
    m.schema.feature_names = s.at("feature_names").get<std::vector<std::string>>();
    m.schema.validate();

    const auto& c = j.at("config");
    ModelShape shape;
    shape.trees = c.at("trees").get<std::size_t>();
    shape.depth = c.at("depth").get<std::size_t>();
    shape.outputs = c.at("outputs").get<std::size_t>();
    shape.reduction = c.at("reduction").get<std::size_t>();
    shape.gate = parse_gate_kind(c.at("gate").get<std::string>());
    shape.features = m.schema.feature_count;
    if (shape.depth < 1 || shape.depth > 20) throw Error("model file: bad depth");
    if (shape.outputs != m.schema.output_width())
      throw Error("model file: output width does not match the schema");
    m.params = Parameters::zeros(shape);
    if (m.params.attention.hidden() != c.at("hidden").get<std::size_t>() &&
        shape.gate != GateKind::off)
      throw Error("model file: attention hidden width does not match trees/reduction");

    const auto& st = j.at("standardizer");
    m.standardizer.means = detail::read_array(st.at("means"), shape.features, "means");
    m.standardizer.stds = detail::read_array(st.at("stds"), shape.features, "stds");

    const auto& par = j.at("parameters");
    const auto& trees = par.at("trees");
    if (!trees.is_array() || trees.size() != shape.trees)
      throw Error("model file: expected " + std::to_string(shape.trees) + " trees");
    for (std::size_t h = 0; h < shape.trees; ++h) {
      auto& t = m.params.forest.trees[h];
      const std::string tag = "tree " + std::to_string(h);
      detail::copy_into(t.A.flat(), detail::read_array(trees[h].at("A"), t.A.size(), tag + " A"));
      detail::copy_into(t.b, detail::read_array(trees[h].at("b"), t.b.size(), tag + " b"));
      detail::copy_into(t.Q.flat(), detail::read_array(trees[h].at("Q"), t.Q.size(), tag + " Q"));
    }
    auto& att = m.params.attention;
    detail::copy_into(att.W1.flat(), detail::read_array(par.at("W1"), att.W1.size(), "W1"));
    detail::copy_into(att.W2.flat(), detail::read_array(par.at("W2"), att.W2.size(), "W2"));
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("model file is malformed: ") + e.what());
  }
}

inline void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write model file '" + path + "'");
  write_model(os, model);
  if (!os) throw Error("failed writing model file '" + path + "'");
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open model file '" + path + "'");
  return read_model(is);
}

// One JSON object: config echo, per-epoch history, best epoch, test metric,
// parameter count and wall time.
inline nlohmann::json metrics_json(const TrainConfig& config, const TaskBinding& binding,
                                   const TrainReport& report) {
  using nlohmann::json;
  json history = json::array();
  for (const auto& e : report.history)
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_metric", e.val_metric},
                       {"seconds", e.seconds}});
  return {
      {"config",
       {{"trees", config.trees},
        {"depth", config.depth},
        {"batch_size", config.batch_size},
        {"learning_rate", config.optimizer.learning_rate},
        {"optimizer", to_string(config.optimizer.kind)},
        {"attention", to_string(config.gate)},
        {"reduction", config.reduction},
        {"epochs", config.max_epochs},
        {"patience", config.patience},
        {"seed", config.seed},
        {"threads", config.threads},
        {"task", to_string(binding.kind)},
        {"classes", binding.classes},
        {"loss", to_string(binding.loss)},
        {"metric", to_string(binding.metric)}}},
      {"history", history},
      {"best_epoch", report.best_epoch ? json(*report.best_epoch) : json(nullptr)},
      {"best_val_metric", report.best_epoch ? json(report.best_val_metric) : json(nullptr)},
      {"test_metric", report.test_metric},
      {"parameter_count", report.parameter_count},
      {"peak_buffer_bytes", report.peak_buffer_bytes},
      {"wall_seconds", report.wall_seconds}};
}

}  // namespace dforest
