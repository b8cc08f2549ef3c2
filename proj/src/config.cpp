#include "capsnet/config.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace capsnet {

using nlohmann::json;

const char* task_name(Task t) { return t == Task::qa ? "qa" : "classification"; }
const char* method_name(RoutingMethod m) { return m == RoutingMethod::dynamic ? "dynamic" : "kde"; }

namespace {

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
  return v.get<double>();
}

long long as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("config: '" + key + "' must be an integer");
  return v.get<long long>();
}

std::size_t as_count(const json& v, const std::string& key) {
  const long long x = as_int(v, key);
  if (x < 0) throw ConfigError("config: '" + key + "' must be >= 0");
  return static_cast<std::size_t>(x);
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
  return v.get<std::string>();
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"task",
       [](RunConfig& c, const json& v, const std::string& k) {
         const auto s = as_string(v, k);
         if (s == "classification") c.task = Task::classification;
         else if (s == "qa") c.task = Task::qa;
         else throw ConfigError("config: task must be 'classification' or 'qa'");
       }},
      {"train", [](RunConfig& c, const json& v, const std::string& k) { c.train_path = as_string(v, k); }},
      {"test", [](RunConfig& c, const json& v, const std::string& k) { c.test_path = as_string(v, k); }},
      {"embeddings", [](RunConfig& c, const json& v, const std::string& k) { c.embeddings_path = as_string(v, k); }},
      {"checkpoint", [](RunConfig& c, const json& v, const std::string& k) { c.checkpoint_path = as_string(v, k); }},
      {"embed_dim", [](RunConfig& c, const json& v, const std::string& k) { c.model.embed_dim = as_count(v, k); }},
      {"max_len", [](RunConfig& c, const json& v, const std::string& k) { c.model.max_len = as_count(v, k); }},
      {"window_sizes",
       [](RunConfig& c, const json& v, const std::string& k) {
         if (!v.is_array()) throw ConfigError("config: '" + k + "' must be an array of integers");
         c.model.window_sizes.clear();
         for (const auto& e : v) c.model.window_sizes.push_back(as_count(e, k));
       }},
      {"n_filters", [](RunConfig& c, const json& v, const std::string& k) { c.model.n_filters = as_count(v, k); }},
      {"capsule_dim", [](RunConfig& c, const json& v, const std::string& k) { c.model.capsule_dim = as_count(v, k); }},
      {"n_condensed", [](RunConfig& c, const json& v, const std::string& k) { c.model.n_condensed = as_count(v, k); }},
      {"num_labels", [](RunConfig& c, const json& v, const std::string& k) { c.model.num_labels = as_count(v, k); }},
      {"learning_rate", [](RunConfig& c, const json& v, const std::string& k) { c.train.learning_rate = as_real(v, k); }},
      {"batch_size", [](RunConfig& c, const json& v, const std::string& k) { c.train.batch_size = as_count(v, k); }},
      {"epochs", [](RunConfig& c, const json& v, const std::string& k) { c.train.epochs = as_count(v, k); }},
      {"seed",
       [](RunConfig& c, const json& v, const std::string& k) {
         if (!v.is_number_unsigned()) throw ConfigError("config: '" + k + "' must be a non-negative integer");
         c.train.seed = v.get<std::uint64_t>();
       }},
      {"m_plus", [](RunConfig& c, const json& v, const std::string& k) { c.train.m_plus = as_real(v, k); }},
      {"m_minus", [](RunConfig& c, const json& v, const std::string& k) { c.train.m_minus = as_real(v, k); }},
      {"down_weight", [](RunConfig& c, const json& v, const std::string& k) { c.train.down_weight = as_real(v, k); }},
      {"routing",
       [](RunConfig& c, const json& v, const std::string& k) {
         const auto s = as_string(v, k);
         if (s == "kde") c.train.method = RoutingMethod::kde;
         else if (s == "dynamic") c.train.method = RoutingMethod::dynamic;
         else throw ConfigError("config: routing must be 'kde' or 'dynamic'");
       }},
      {"dynamic_iterations",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.train.dynamic_iterations = static_cast<int>(as_int(v, k));
       }},
      {"candidates", [](RunConfig& c, const json& v, const std::string& k) { c.train.candidates = as_count(v, k); }},
      {"aux_weight", [](RunConfig& c, const json& v, const std::string& k) { c.train.aux_weight = as_real(v, k); }},
      {"scorer_lr_scale",
       [](RunConfig& c, const json& v, const std::string& k) { c.train.scorer_lr_scale = as_real(v, k); }},
      {"optimizer",
       [](RunConfig& c, const json& v, const std::string& k) {
         const auto s = as_string(v, k);
         if (s == "adam") c.train.use_adam = true;
         else if (s == "sgd") c.train.use_adam = false;
         else throw ConfigError("config: optimizer must be 'adam' or 'sgd'");
       }},
      {"qa_margin", [](RunConfig& c, const json& v, const std::string& k) { c.train.qa_margin = as_real(v, k); }},
      {"alpha", [](RunConfig& c, const json& v, const std::string& k) { c.train.routing.alpha = as_real(v, k); }},
      {"epsilon", [](RunConfig& c, const json& v, const std::string& k) { c.train.routing.epsilon = as_real(v, k); }},
      {"max_iterations",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.train.routing.max_iterations = static_cast<int>(as_int(v, k));
       }},
      {"bandwidth", [](RunConfig& c, const json& v, const std::string& k) { c.train.routing.bandwidth = as_real(v, k); }},
      {"lambda", [](RunConfig& c, const json& v, const std::string& k) { c.train.routing.lambda = as_real(v, k); }},
      {"neg_samples",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.train.routing.neg_samples = static_cast<int>(as_int(v, k));
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, value, key);
  }
  cfg.train_path = resolve(base_dir, cfg.train_path);
  cfg.test_path = resolve(base_dir, cfg.test_path);
  cfg.embeddings_path = resolve(base_dir, cfg.embeddings_path);
  cfg.checkpoint_path = resolve(base_dir, cfg.checkpoint_path);
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), std::filesystem::path(path).parent_path().string());
}

RunConfig toy_run_config(Task task, std::size_t n_labels) {
  RunConfig c;
  c.task = task;
  c.train.learning_rate = 3e-3;
  c.train.batch_size = 16;
  c.train.epochs = 50;
  c.train.scorer_lr_scale = 5.0;
  if (task == Task::qa) {
    c.model.embed_dim = 16;
    c.model.max_len = 8;
    c.model.window_sizes = {1, 2};
    c.model.n_filters = 8;
    c.model.capsule_dim = 8;
    c.model.n_condensed = 8;
    c.model.num_labels = 1;
  } else {
    c.model.embed_dim = 32;
    c.model.max_len = 16;
    c.model.window_sizes = {2, 4, 8};
    c.model.n_filters = 8;
    c.model.capsule_dim = 8;
    c.model.n_condensed = 16;
    c.model.num_labels = n_labels;
  }
  return c;
}

std::string run_config_json(const RunConfig& c) {
  json j;
  j["task"] = task_name(c.task);
  j["train"] = c.train_path;
  j["test"] = c.test_path;
  j["embeddings"] = c.embeddings_path;
  j["checkpoint"] = c.checkpoint_path;
  j["embed_dim"] = c.model.embed_dim;
  j["max_len"] = c.model.max_len;
  j["window_sizes"] = c.model.window_sizes;
  j["n_filters"] = c.model.n_filters;
  j["capsule_dim"] = c.model.capsule_dim;
  j["n_condensed"] = c.model.n_condensed;
  j["num_labels"] = c.model.num_labels;
  j["learning_rate"] = c.train.learning_rate;
  j["batch_size"] = c.train.batch_size;
  j["epochs"] = c.train.epochs;
  j["seed"] = c.train.seed;
  j["m_plus"] = c.train.m_plus;
  j["m_minus"] = c.train.m_minus;
  j["down_weight"] = c.train.down_weight;
  j["routing"] = method_name(c.train.method);
  j["dynamic_iterations"] = c.train.dynamic_iterations;
  j["candidates"] = c.train.candidates;
  j["aux_weight"] = c.train.aux_weight;
  j["scorer_lr_scale"] = c.train.scorer_lr_scale;
  j["optimizer"] = c.train.use_adam ? "adam" : "sgd";
  j["qa_margin"] = c.train.qa_margin;
  j["alpha"] = c.train.routing.alpha;
  j["epsilon"] = c.train.routing.epsilon;
  j["max_iterations"] = c.train.routing.max_iterations;
  j["bandwidth"] = c.train.routing.bandwidth;
  j["lambda"] = c.train.routing.lambda;
  j["neg_samples"] = c.train.routing.neg_samples;
  return j.dump(2);
}

}  // namespace capsnet
