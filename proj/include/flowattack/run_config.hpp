// Copyright 2026 The flowattack Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration: flat "key = value" text with [section] headers, checked
// against a fixed schema. Command-line flags override file values.

#ifndef FLOWATTACK_RUN_CONFIG_HPP_
#define FLOWATTACK_RUN_CONFIG_HPP_

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowattack/core.hpp"

namespace flowattack {

enum class KeyType { kString, kDouble, kInt, kBool, kList };

struct KeySpec {
  const char* name;  // "section.key"
  KeyType type;
  const char* fallback;  // "" means unset
};

// Every accepted key. An empty fallback means "derived at run time" (for
// example mu from the default pairing).
inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"run.seed", KeyType::kInt, "0"},
      {"run.jobs", KeyType::kInt, "1"},
      {"run.deterministic", KeyType::kBool, "false"},

      {"estimator.name", KeyType::kString, "hs"},
      {"estimator.alpha", KeyType::kDouble, ""},
      {"estimator.iterations", KeyType::kInt, ""},
      {"estimator.levels", KeyType::kInt, ""},
      {"estimator.warp", KeyType::kBool, ""},

      {"attack.method", KeyType::kString, "pcfa"},
      {"attack.eps2", KeyType::kDouble, "0.005"},
      {"attack.mu", KeyType::kDouble, ""},
      {"attack.steps", KeyType::kInt, "20"},
      {"attack.loss", KeyType::kString, "aee"},
      {"attack.target", KeyType::kString, "zero"},
      {"attack.target_flow", KeyType::kString, ""},
      {"attack.box", KeyType::kString, "cov"},
      {"attack.mode", KeyType::kString, "disjoint"},
      {"attack.eps_inf", KeyType::kDouble, "0.005"},
      {"attack.ifgsm_steps", KeyType::kInt, "10"},

      {"data.first", KeyType::kString, ""},
      {"data.second", KeyType::kString, ""},
      {"data.ground_truth", KeyType::kString, ""},
      {"data.manifest", KeyType::kString, ""},
      {"data.synthetic", KeyType::kInt, "0"},
      {"data.synthetic_size", KeyType::kInt, "64"},

      {"universal.epochs", KeyType::kInt, "25"},
      {"universal.batch_size", KeyType::kInt, "4"},
      {"universal.steps_per_batch", KeyType::kInt, "1"},

      {"transfer.estimators", KeyType::kList, "hs,hs-pyramid"},
      {"transfer.perturbations", KeyType::kList, ""},
      {"transfer.sources", KeyType::kList, ""},

      {"viz.flow", KeyType::kString, ""},
      {"viz.perturbation", KeyType::kString, ""},
      {"viz.max", KeyType::kDouble, ""},

      {"checkgrad.h", KeyType::kDouble, "0.0005"},
      {"checkgrad.pairs", KeyType::kInt, "5"},
      {"checkgrad.size", KeyType::kInt, "16"},
      {"checkgrad.samples", KeyType::kInt, "64"},
      {"checkgrad.tolerance", KeyType::kDouble, "0.0001"},
      {"checkgrad.estimators", KeyType::kList, "hs,hs-pyramid"},
      {"checkgrad.losses", KeyType::kList, "aee,mse,cs"},
      {"checkgrad.boxes", KeyType::kList, "clip,cov"},

      {"output.dir", KeyType::kString, "."},
      {"output.stem", KeyType::kString, "run"},
  };
  return schema;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<long long> to_int(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

inline std::optional<bool> to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  return std::nullopt;
}

}  // namespace detail

class RunConfig {
 public:
  static const KeySpec* find_key(const std::string& name) {
    for (const auto& k : config_schema()) {
      if (name == k.name) return &k;
    }
    return nullptr;
  }

  // Type-checked assignment. Unknown keys and malformed values are errors.
  void set(const std::string& name, const std::string& raw) {
    const KeySpec* spec = find_key(name);
    if (!spec) throw ConfigError("unknown configuration key '" + name + "'");
    const std::string value = detail::trim(raw);
    bool ok = true;
    switch (spec->type) {
      case KeyType::kDouble: ok = value.empty() || detail::to_double(value); break;
      case KeyType::kInt: ok = value.empty() || detail::to_int(value); break;
      case KeyType::kBool: ok = value.empty() || detail::to_bool(value); break;
      default: break;
    }
    if (!ok) throw ConfigError("bad value '" + value + "' for key '" + name + "'");
    values_[name] = value;
  }

  void parse(const std::string& text, const std::string& origin = "<config>") {
    std::istringstream in(text);
    std::string line, section;
    std::map<std::string, int> seen;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      const std::string where = origin + ":" + std::to_string(lineno);
      if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": malformed section header");
        section = detail::trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      if (section.empty()) throw ConfigError(where + ": key outside of a [section]");
      const std::string name = section + "." + detail::trim(line.substr(0, eq));
      if (seen.count(name)) {
        throw ConfigError(where + ": duplicate key '" + name + "' (first on line " +
                          std::to_string(seen[name]) + ")");
      }
      seen[name] = lineno;
      try {
        set(name, line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    parse(ss.str(), path);
  }

  // Explicit value, else the schema fallback; empty means unset.
  std::string raw(const std::string& name) const {
    const KeySpec* spec = find_key(name);
    if (!spec) throw ConfigError("unknown configuration key '" + name + "'");
    const auto it = values_.find(name);
    return it != values_.end() ? it->second : spec->fallback;
  }
  bool has(const std::string& name) const { return !raw(name).empty(); }
  bool is_set(const std::string& name) const { return values_.count(name) > 0; }

  std::string str(const std::string& name) const { return raw(name); }
  std::optional<double> opt_double(const std::string& name) const {
    const std::string r = raw(name);
    if (r.empty()) return std::nullopt;
    return *detail::to_double(r);
  }
  double num(const std::string& name) const {
    const auto v = opt_double(name);
    if (!v) throw ConfigError("missing value for '" + name + "'");
    return *v;
  }
  std::optional<long long> opt_int(const std::string& name) const {
    const std::string r = raw(name);
    if (r.empty()) return std::nullopt;
    return *detail::to_int(r);
  }
  long long integer(const std::string& name) const {
    const auto v = opt_int(name);
    if (!v) throw ConfigError("missing value for '" + name + "'");
    return *v;
  }
  std::optional<bool> opt_bool(const std::string& name) const {
    const std::string r = raw(name);
    if (r.empty()) return std::nullopt;
    return *detail::to_bool(r);
  }
  bool flag(const std::string& name) const { return opt_bool(name).value_or(false); }
  std::vector<std::string> list(const std::string& name) const {
    std::vector<std::string> out;
    std::istringstream in(raw(name));
    for (std::string item; std::getline(in, item, ',');) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Every key with its effective value, grouped by section in schema order.
  std::string to_ini() const {
    std::string out, section;
    for (const auto& k : config_schema()) {
      const std::string name = k.name;
      const auto dot = name.find('.');
      const std::string sec = name.substr(0, dot);
      if (sec != section) {
        out += (section.empty() ? "[" : "\n[") + sec + "]\n";
        section = sec;
      }
      out += name.substr(dot + 1) + " = " + raw(name) + "\n";
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace flowattack

#endif  // FLOWATTACK_RUN_CONFIG_HPP_
