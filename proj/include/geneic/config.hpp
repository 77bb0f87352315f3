#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "geneic/toy_backend.hpp"
#include "geneic/trainer.hpp"

namespace geneic {

// Bad configuration file or override; reported as a usage error.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Flat "section.key" -> raw value map read from a TOML-style file with
/// [train], [data], [backend] and [metrics] sections.
using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace detail

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
    out[section + "." + detail::trim(line.substr(0, eq))] =
        detail::unquote(detail::trim(line.substr(eq + 1)));
  }
  return out;
}

struct RunConfig {
  TrainConfig train;
  bool seed_set = false;

  // [data]
  std::filesystem::path corpus;      // JSON-lines manifest {"id","path"}
  std::filesystem::path references;  // JSON-lines {"image_id","captions"}
  std::filesystem::path train_refs;  // plain-text or JSON-lines sentences for %Novel
  std::filesystem::path out_dir = ".";
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log;

  // [backend]
  std::string backend = "toy";
  std::uint64_t backend_seed = 0;
  std::filesystem::path backend_file;  // GICB blob; overrides seed and dims
  DimSpec dims;

  // [metrics]
  double clip_s_weight = 1.0;

  std::filesystem::path checkpoint_dir_or_default() const {
    return checkpoint_dir.empty() ? out_dir / "checkpoints" : checkpoint_dir;
  }
  std::filesystem::path log_or_default() const {
    return log.empty() ? out_dir / "train_log.jsonl" : log;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, double>)
      out = std::stod(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      out = std::stoull(v, &used);
    else
      out = static_cast<T>(std::stoll(v, &used));
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

}  // namespace detail

/// Applies one "section.key = value" setting. Paths are resolved against
/// `base` when relative.
inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& value,
                          const std::filesystem::path& base = {}) {
  using detail::parse_number;
  auto path = [&](std::filesystem::path& dst) {
    std::filesystem::path p(value);
    dst = p.is_relative() && !base.empty() ? base / p : p;
  };
  static const std::map<std::string, int*(*)(RunConfig&)> kIntKeys = {
      {"train.M", [](RunConfig& r) { return &r.train.prompt_count; }},
      {"train.N", [](RunConfig& r) { return &r.train.max_images; }},
      {"train.epochs", [](RunConfig& r) { return &r.train.epochs; }},
      {"train.batch_size", [](RunConfig& r) { return &r.train.batch_size; }},
      {"train.max_len", [](RunConfig& r) { return &r.train.max_len; }},
      {"train.clusters", [](RunConfig& r) { return &r.train.clusters; }},
      {"train.kmeans_max_iter", [](RunConfig& r) { return &r.train.kmeans_max_iter; }},
      {"backend.vocab", [](RunConfig& r) { return &r.dims.vocab; }},
      {"backend.d_dec", [](RunConfig& r) { return &r.dims.d_dec; }},
      {"backend.d_joint", [](RunConfig& r) { return &r.dims.d_joint; }},
      {"backend.slots", [](RunConfig& r) { return &r.dims.slots; }},
      {"backend.grid_rows", [](RunConfig& r) { return &r.dims.grid_rows; }},
      {"backend.grid_cols", [](RunConfig& r) { return &r.dims.grid_cols; }},
      {"backend.grid_channels", [](RunConfig& r) { return &r.dims.grid_channels; }},
      {"backend.max_len", [](RunConfig& r) { return &r.dims.max_len; }},
      {"backend.image_height", [](RunConfig& r) { return &r.dims.image_height; }},
      {"backend.image_width", [](RunConfig& r) { return &r.dims.image_width; }},
      {"backend.image_channels", [](RunConfig& r) { return &r.dims.image_channels; }},
  };
  static const std::map<std::string, double*(*)(RunConfig&)> kRealKeys = {
      {"train.beta", [](RunConfig& r) { return &r.train.beta; }},
      {"train.lr0", [](RunConfig& r) { return &r.train.lr0; }},
      {"train.lr_min", [](RunConfig& r) { return &r.train.lr_min; }},
      {"train.weight_decay", [](RunConfig& r) { return &r.train.weight_decay; }},
      {"train.adam_beta1", [](RunConfig& r) { return &r.train.adam_beta1; }},
      {"train.adam_beta2", [](RunConfig& r) { return &r.train.adam_beta2; }},
      {"train.adam_eps", [](RunConfig& r) { return &r.train.adam_eps; }},
      {"train.init_std", [](RunConfig& r) { return &r.train.init_std; }},
      {"train.temperature", [](RunConfig& r) { return &r.train.temperature; }},
      {"train.fraction", [](RunConfig& r) { return &r.train.fraction; }},
      {"metrics.clip_s_weight", [](RunConfig& r) { return &r.clip_s_weight; }},
  };

  if (auto it = kIntKeys.find(key); it != kIntKeys.end()) {
    *it->second(rc) = parse_number<int>(key, value);
  } else if (auto jt = kRealKeys.find(key); jt != kRealKeys.end()) {
    *jt->second(rc) = parse_number<double>(key, value);
  } else if (key == "train.seed") {
    rc.train.seed = parse_number<std::uint64_t>(key, value);
    rc.seed_set = true;
  } else if (key == "train.grad_scope") {
    try {
      rc.train.grad_scope = parse_grad_scope(value);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "data.corpus") {
    path(rc.corpus);
  } else if (key == "data.references") {
    path(rc.references);
  } else if (key == "data.train_refs") {
    path(rc.train_refs);
  } else if (key == "data.out_dir") {
    path(rc.out_dir);
  } else if (key == "data.checkpoint_dir") {
    path(rc.checkpoint_dir);
  } else if (key == "data.log") {
    path(rc.log);
  } else if (key == "backend.kind") {
    if (value != "toy")
      throw ConfigError("backend '" + value + "' is not available in this build (only 'toy')");
    rc.backend = value;
  } else if (key == "backend.seed") {
    rc.backend_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "backend.file") {
    path(rc.backend_file);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Seed falls back to $GENEIC_SEED when neither the file nor a flag set it.
inline void apply_env_seed(RunConfig& rc) {
  if (rc.seed_set) return;
  if (const char* env = std::getenv("GENEIC_SEED"); env && *env) {
    rc.train.seed = detail::parse_number<std::uint64_t>("GENEIC_SEED", env);
    rc.seed_set = true;
  }
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file) {
  RunConfig rc;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto base = file->parent_path();
    for (const auto& [k, v] : parse_config_text(ss.str())) apply_setting(rc, k, v, base);
  }
  return rc;
}

inline BackendBundle make_backend(const RunConfig& rc) {
  if (!rc.backend_file.empty()) return load_toy_backend(read_file_bytes(rc.backend_file));
  return build_toy_backend(rc.backend_seed, rc.dims);
}

}  // namespace geneic
