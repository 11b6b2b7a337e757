#include "relureduce/config.hpp"

#include <initializer_list>

#include "json.hpp"
#include "relureduce/errors.hpp"

namespace relureduce {

namespace {

using nlohmann::json;

void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const std::string& where) {
  if (!j.is_object())
    throw config_error("config: section '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw config_error("config: unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void read_pairs(const json& j, const char* key, const std::string& where,
                std::vector<std::pair<double, double>>& into) {
  if (!j.contains(key)) return;
  const json& arr = j.at(key);
  if (!arr.is_array())
    throw config_error("config: " + where + "." + key + " must be an array of pairs");
  into.clear();
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 2)
      throw config_error("config: " + where + "." + key + " entries are two-number pairs");
    into.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
  }
}

json pairs_json(const std::vector<std::pair<double, double>>& pairs) {
  json arr = json::array();
  for (const auto& [a, b] : pairs) arr.push_back(json::array({a, b}));
  return arr;
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  try {
    expect_keys(j, {"arch", "train", "kd", "pipeline", "io", "threads"}, "config");
    if (j.contains("arch")) {
      const json& a = j.at("arch");
      expect_keys(a, {"family", "input", "channels", "classes", "strip_residuals",
                      "alpha", "rho"},
                  "arch");
      read(a, "family", cfg.arch.family);
      read(a, "input", cfg.arch.input);
      read(a, "channels", cfg.arch.channels);
      read(a, "classes", cfg.arch.classes);
      read(a, "strip_residuals", cfg.arch.strip_residuals);
      read(a, "alpha", cfg.arch.alpha);
      read(a, "rho", cfg.arch.rho);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      expect_keys(t, {"lr0", "batch_size", "momentum", "weight_decay", "epochs",
                      "schedule", "step_every", "step_divide", "seed", "augment"},
                  "train");
      read(t, "lr0", cfg.train.lr0);
      read(t, "batch_size", cfg.train.batch_size);
      read(t, "momentum", cfg.train.momentum);
      read(t, "weight_decay", cfg.train.weight_decay);
      read(t, "epochs", cfg.train.epochs);
      read(t, "schedule", cfg.train.schedule);
      read(t, "step_every", cfg.train.step_every);
      read(t, "step_divide", cfg.train.step_divide);
      read(t, "seed", cfg.train.seed);
      read(t, "augment", cfg.train.augment);
    }
    if (j.contains("kd")) {
      const json& k = j.at("kd");
      expect_keys(k, {"enabled", "temperature", "hard_weight"}, "kd");
      read(k, "enabled", cfg.kd.enabled);
      read(k, "temperature", cfg.kd.temperature);
      read(k, "hard_weight", cfg.kd.hard_weight);
    }
    if (j.contains("pipeline")) {
      const json& p = j.at("pipeline");
      expect_keys(p, {"w", "parity", "ladder", "latency_points", "cull_override",
                      "dataset"},
                  "pipeline");
      read(p, "w", cfg.w);
      read(p, "parity", cfg.parity);
      read_pairs(p, "ladder", "pipeline", cfg.ladder);
      read_pairs(p, "latency_points", "pipeline", cfg.latency_points);
      read(p, "cull_override", cfg.cull_override);
      if (p.contains("dataset")) {
        const json& d = p.at("dataset");
        expect_keys(d, {"source", "data_dir", "classes", "resolution", "channels",
                        "train_samples", "test_samples", "seed", "normalize"},
                    "pipeline.dataset");
        read(d, "source", cfg.data.source);
        read(d, "data_dir", cfg.data.data_dir);
        read(d, "classes", cfg.data.classes);
        read(d, "resolution", cfg.data.resolution);
        read(d, "channels", cfg.data.channels);
        read(d, "train_samples", cfg.data.train_samples);
        read(d, "test_samples", cfg.data.test_samples);
        read(d, "seed", cfg.data.seed);
        read(d, "normalize", cfg.data.normalize);
      }
    }
    if (j.contains("io")) {
      const json& io = j.at("io");
      expect_keys(io, {"out_dir", "checkpoint_in", "checkpoint_out", "measurements_csv",
                       "accuracy_csv", "candidates_csv", "latency_csv"},
                  "io");
      read(io, "out_dir", cfg.io.out_dir);
      read(io, "checkpoint_in", cfg.io.checkpoint_in);
      read(io, "checkpoint_out", cfg.io.checkpoint_out);
      read(io, "measurements_csv", cfg.io.measurements_csv);
      read(io, "accuracy_csv", cfg.io.accuracy_csv);
      read(io, "candidates_csv", cfg.io.candidates_csv);
      read(io, "latency_csv", cfg.io.latency_csv);
    }
    read(j, "threads", cfg.threads);
  } catch (const json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  if (cfg.threads < 1) throw config_error("config: threads must be positive");
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["arch"] = {{"family", cfg.arch.family},
               {"input", cfg.arch.input},
               {"channels", cfg.arch.channels},
               {"classes", cfg.arch.classes},
               {"strip_residuals", cfg.arch.strip_residuals},
               {"alpha", cfg.arch.alpha},
               {"rho", cfg.arch.rho}};
  j["train"] = {{"lr0", cfg.train.lr0},
                {"batch_size", cfg.train.batch_size},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"schedule", cfg.train.schedule},
                {"step_every", cfg.train.step_every},
                {"step_divide", cfg.train.step_divide},
                {"seed", cfg.train.seed},
                {"augment", cfg.train.augment}};
  j["kd"] = {{"enabled", cfg.kd.enabled},
             {"temperature", cfg.kd.temperature},
             {"hard_weight", cfg.kd.hard_weight}};
  j["pipeline"] = {{"w", cfg.w},
                   {"parity", cfg.parity},
                   {"ladder", pairs_json(cfg.ladder)},
                   {"latency_points", pairs_json(cfg.latency_points)},
                   {"cull_override", cfg.cull_override},
                   {"dataset",
                    {{"source", cfg.data.source},
                     {"data_dir", cfg.data.data_dir},
                     {"classes", cfg.data.classes},
                     {"resolution", cfg.data.resolution},
                     {"channels", cfg.data.channels},
                     {"train_samples", cfg.data.train_samples},
                     {"test_samples", cfg.data.test_samples},
                     {"seed", cfg.data.seed},
                     {"normalize", cfg.data.normalize}}}};
  j["io"] = {{"out_dir", cfg.io.out_dir},
             {"checkpoint_in", cfg.io.checkpoint_in},
             {"checkpoint_out", cfg.io.checkpoint_out},
             {"measurements_csv", cfg.io.measurements_csv},
             {"accuracy_csv", cfg.io.accuracy_csv},
             {"candidates_csv", cfg.io.candidates_csv},
             {"latency_csv", cfg.io.latency_csv}};
  j["threads"] = cfg.threads;
  return j.dump(2) + "\n";
}

PipelineConfig pipeline_config(const RunConfig& cfg) {
  PipelineConfig p;
  p.arch = cfg.arch;
  p.train = cfg.train;
  p.kd = cfg.kd;
  p.w = cfg.w;
  p.ladder = cfg.ladder;
  p.parity = cfg.parity;
  p.latency_points = cfg.latency_points;
  p.cull_override = cfg.cull_override;
  return p;
}

}  // namespace relureduce
