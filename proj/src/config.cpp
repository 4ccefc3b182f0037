// Copyright 2026 The fedp3-sim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedp3/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "fedp3/common.hpp"
#include "fedp3/fedcore.hpp"

namespace fedp3 {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Field {
  enum class Type { kInt, kU64, kDouble, kString, kBool };
  Type type;
  void* ptr;
};

/// Schema: section -> key -> typed member. Built per-config so parsing and
/// serialization share one table.
std::vector<std::pair<std::string, std::map<std::string, Field>>> schema(
    ExperimentConfig& c) {
  using T = Field::Type;
  return {
      {"model",
       {{"kind", {T::kString, &c.model_kind}},
        {"input_dim", {T::kInt, &c.input_dim}},
        {"hidden_width", {T::kInt, &c.hidden_width}},
        {"hidden_layers", {T::kInt, &c.hidden_layers}},
        {"classes", {T::kInt, &c.classes}},
        {"quad_dim", {T::kInt, &c.quad_dim}},
        {"quad_clients", {T::kInt, &c.quad_clients}},
        {"quad_ridge", {T::kDouble, &c.quad_ridge}},
        {"quad_linear_scale", {T::kDouble, &c.quad_linear_scale}}}},
      {"data",
       {{"samples", {T::kInt, &c.samples}},
        {"features", {T::kInt, &c.features}},
        {"classes", {T::kInt, &c.data_classes}},
        {"separation", {T::kDouble, &c.separation}},
        {"clients", {T::kInt, &c.clients}},
        {"split", {T::kString, &c.split}},
        {"classes_per_client", {T::kInt, &c.classes_per_client}},
        {"alpha", {T::kDouble, &c.dirichlet_alpha}},
        {"train_fraction", {T::kDouble, &c.train_fraction}}}},
      {"plans",
       {{"scheme", {T::kString, &c.scheme}},
        {"keep_ratio", {T::kDouble, &c.keep_ratio}},
        {"local_strategy", {T::kString, &c.local_strategy}},
        {"q_lo", {T::kDouble, &c.q_lo}},
        {"aggregation", {T::kString, &c.aggregation}},
        {"attention_tau", {T::kDouble, &c.attention_tau}},
        {"global_pruning", {T::kBool, &c.global_pruning}},
        {"arch", {T::kString, &c.arch}}}},
      {"train",
       {{"rounds", {T::kInt, &c.rounds}},
        {"local_steps", {T::kInt, &c.local_steps}},
        {"batch", {T::kInt, &c.batch}},
        {"lr", {T::kDouble, &c.learning_rate}},
        {"participation", {T::kDouble, &c.participation}},
        {"seeds", {T::kInt, &c.seeds}},
        {"iterations", {T::kInt, &c.iterations}},
        {"step_size", {T::kDouble, &c.step_size}},
        {"metrics_every", {T::kInt, &c.metrics_every}},
        {"comparison_eps", {T::kDouble, &c.comparison_eps}},
        {"seed", {T::kU64, &c.seed}},
        {"out", {T::kString, &c.out_dir}},
        {"threads", {T::kInt, &c.threads}},
        {"fail_on_violation", {T::kBool, &c.fail_on_violation}},
        {"fixtures_dir", {T::kString, &c.fixtures_dir}}}},
      {"privacy",
       {{"epsilon", {T::kDouble, &c.epsilon}},
        {"delta", {T::kDouble, &c.delta}},
        {"m", {T::kInt, &c.privacy_m}},
        {"b", {T::kInt, &c.privacy_b}},
        {"clip", {T::kDouble, &c.clip}},
        {"c", {T::kDouble, &c.calibration_c}},
        {"c_prime", {T::kDouble, &c.gate_c_prime}},
        {"smoothness", {T::kDouble, &c.smoothness}},
        {"sample_spread", {T::kDouble, &c.sample_spread}}}},
  };
}

void assign(const Field& field, const std::string& value,
            const std::string& where) {
  try {
    switch (field.type) {
      case Field::Type::kInt:
        *static_cast<int*>(field.ptr) = std::stoi(value);
        break;
      case Field::Type::kU64:
        *static_cast<std::uint64_t*>(field.ptr) = std::stoull(value);
        break;
      case Field::Type::kDouble:
        *static_cast<double*>(field.ptr) = std::stod(value);
        break;
      case Field::Type::kString:
        *static_cast<std::string*>(field.ptr) = value;
        break;
      case Field::Type::kBool:
        if (value == "true" || value == "on" || value == "1") {
          *static_cast<bool*>(field.ptr) = true;
        } else if (value == "false" || value == "off" || value == "0") {
          *static_cast<bool*>(field.ptr) = false;
        } else {
          throw ConfigError(where + ": expected a boolean, got '" + value +
                            "'");
        }
        break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse value '" + value + "'");
  }
}

std::string format_value(const Field& field) {
  char buf[64];
  switch (field.type) {
    case Field::Type::kInt:
      std::snprintf(buf, sizeof buf, "%d", *static_cast<int*>(field.ptr));
      return buf;
    case Field::Type::kU64:
      std::snprintf(buf, sizeof buf, "%" PRIu64,
                    *static_cast<std::uint64_t*>(field.ptr));
      return buf;
    case Field::Type::kDouble:
      std::snprintf(buf, sizeof buf, "%.17g",
                    *static_cast<double*>(field.ptr));
      return buf;
    case Field::Type::kString:
      return *static_cast<std::string*>(field.ptr);
    case Field::Type::kBool:
      return *static_cast<bool*>(field.ptr) ? "true" : "false";
  }
  return "";
}

}  // namespace

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigError(msg); };
  if (model_kind != "mlp" && model_kind != "quadratic")
    bad("[model] kind must be mlp or quadratic");
  if (input_dim < 1 || hidden_width < 1 || hidden_layers < 0 || classes < 2)
    bad("[model] mlp dimensions out of range");
  if (quad_dim < 1 || quad_clients < 1) bad("[model] quadratic sizes");
  if (samples < 1 || features < 1 || data_classes < 1 || clients < 1)
    bad("[data] sizes must be positive");
  if (split != "classwise" && split != "dirichlet")
    bad("[data] split must be classwise or dirichlet");
  if (classes_per_client < 1) bad("[data] classes_per_client");
  if (dirichlet_alpha <= 0.0) bad("[data] alpha must be positive");
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    bad("[data] train_fraction must lie in (0, 1]");
  PlanScheme::parse(scheme);              // throws on bad scheme
  parse_local_strategy(local_strategy);   // throws on bad strategy
  parse_aggregation_mode(aggregation);    // throws on bad mode
  if (keep_ratio <= 0.0 || keep_ratio > 1.0)
    bad("[plans] keep_ratio must lie in (0, 1]");
  if (q_lo <= 0.0 || q_lo > 1.0) bad("[plans] q_lo must lie in (0, 1]");
  if (rounds < 0 || local_steps < 1 || batch < 1 || iterations < 1 ||
      seeds < 1 || metrics_every < 1 || threads < 1)
    bad("[train] counts must be positive");
  if (learning_rate <= 0.0) bad("[train] lr must be positive");
  if (participation <= 0.0 || participation > 1.0)
    bad("[train] participation must lie in (0, 1]");
  if (step_size < 0.0) bad("[train] step_size must be nonnegative");
  if (comparison_eps <= 0.0) bad("[train] comparison_eps must be positive");
  if (epsilon <= 0.0 || delta <= 0.0 || delta >= 1.0)
    bad("[privacy] epsilon/delta out of range");
  if (privacy_m < 1 || privacy_b < 1 || privacy_b > privacy_m)
    bad("[privacy] minibatch must lie in [1, m]");
  if (clip < 0.0 || calibration_c <= 0.0 || gate_c_prime <= 0.0 ||
      smoothness < 0.0 || sample_spread < 0.0)
    bad("[privacy] constants out of range");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  auto table = schema(config);
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(stripped.substr(1, stripped.size() - 2));
      bool known = false;
      for (const auto& [name, keys] : table) known |= name == section;
      if (!known) {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                        "' appears before any section header");
    }
    const Field* field = nullptr;
    for (auto& [name, keys] : table) {
      if (name != section) continue;
      const auto it = keys.find(key);
      if (it != keys.end()) field = &it->second;
    }
    if (field == nullptr) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        key + "' in section [" + section + "]");
    }
    assign(*field, value,
           "line " + std::to_string(line_no) + " [" + section + "] " + key);
  }
  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig config;
    config.validate();
    return config;
  }
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  auto table = schema(copy);
  std::ostringstream out;
  for (const auto& [name, keys] : table) {
    out << "[" << name << "]\n";
    for (const auto& [key, field] : keys) {
      out << key << " = " << format_value(field) << "\n";
    }
    out << "\n";
  }
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string canonical = serialize_config(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace fedp3
