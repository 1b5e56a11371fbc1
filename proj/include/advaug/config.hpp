#pragma once

// Line-based `key = value` run configuration with '#' comments. Unknown keys
// and malformed values are rejected with the offending line number.

#include <fstream>
#include <map>
#include <sstream>

#include "advaug/trainer.hpp"

namespace advaug {

struct RunConfig {
  // dataset
  std::size_t image_size = 32;
  std::size_t n_train = 120;
  std::size_t n_val = 240;
  double ambiguity = 0.3;
  std::uint64_t data_seed = 424242;
  // training
  std::size_t batch_size = 32;
  std::size_t iterations = 1000;      // desk-scale default; paper scale 10000
  std::size_t eval_interval = 20;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double z_pos = 0.8;
  double z_neg = 0.2;
  bool literal_adv_sign = false;
  bool d_reals_from_train = false;
  bool use_batchnorm = true;
  // channel widths; desk-scale defaults, see README for the full-width values
  std::size_t gen_base = 8;
  std::size_t disc_base = 16;
  std::size_t cls_base = 16;
  // experiment grid
  std::size_t repeats = 10;           // desk-scale default; paper scale 50
  std::uint64_t seed = 1;
  std::vector<std::size_t> grid_sizes = {32};
  std::vector<std::size_t> grid_train_samples = {120};
  std::vector<std::string> arms = {"baseline", "augmented", "augmented_no_assistant"};
  bool resplit_train_per_repeat = true;
  bool fixed_validation = true;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class Fn>
void parse_num(const std::string& value, std::size_t line_no, Fn assign) {
  try {
    assign(value);
  } catch (const std::exception&) {
    throw Error("config line " + std::to_string(line_no) +
                ": cannot parse value '" + value + "'");
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoul(trim(tok)));
  if (out.empty()) throw Error("empty list");
  return out;
}

inline std::vector<std::string> parse_str_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  return out;
}

}  // namespace detail

inline void validate_config(const RunConfig& cfg) {
  auto check_size = [](std::size_t s) {
    if (s != 32 && s != 64 && s != 128)
      throw Error("image_size " + std::to_string(s) +
                  " not supported; allowed sizes are {32,64,128}");
  };
  check_size(cfg.image_size);
  for (std::size_t s : cfg.grid_sizes) check_size(s);
  if (cfg.batch_size % 2 != 0) throw Error("batch_size must be even");
  if (cfg.eval_interval < 1) throw Error("eval_interval must be >= 1");
  if (cfg.repeats < 1) throw Error("repeats must be >= 1");
  if (cfg.arms.empty()) throw Error("arms must be non-empty");
  for (const std::string& a : cfg.arms)
    if (a != "baseline" && a != "augmented" && a != "augmented_no_assistant")
      throw Error("unknown arm '" + a +
                  "'; allowed: baseline, augmented, augmented_no_assistant");
  if (cfg.ambiguity < 0.0 || cfg.ambiguity > 1.0)
    throw Error("ambiguity must be in [0,1]");
  if (!(cfg.z_neg > 0.0 && cfg.z_neg < 0.5 && cfg.z_pos > 0.5 && cfg.z_pos < 1.0))
    throw Error("targets must satisfy 0 < z_neg < 0.5 < z_pos < 1");
}

inline RunConfig parse_config_stream(std::istream& is) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(line_no) +
                  ": expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    auto num = [&](auto& field) {
      detail::parse_num(value, line_no, [&](const std::string& v) {
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(field)>>)
          field = std::stod(v);
        else
          field = static_cast<std::decay_t<decltype(field)>>(std::stoull(v));
      });
    };
    auto flag = [&](bool& field) {
      if (value == "1" || value == "true") field = true;
      else if (value == "0" || value == "false") field = false;
      else throw Error("config line " + std::to_string(line_no) +
                       ": expected boolean 0/1/true/false, got '" + value + "'");
    };

    if (key == "image_size") num(cfg.image_size);
    else if (key == "n_train") num(cfg.n_train);
    else if (key == "n_val") num(cfg.n_val);
    else if (key == "ambiguity") num(cfg.ambiguity);
    else if (key == "data_seed") num(cfg.data_seed);
    else if (key == "batch_size") num(cfg.batch_size);
    else if (key == "iterations") num(cfg.iterations);
    else if (key == "eval_interval") num(cfg.eval_interval);
    else if (key == "lr") num(cfg.lr);
    else if (key == "beta1") num(cfg.beta1);
    else if (key == "beta2") num(cfg.beta2);
    else if (key == "z_pos") num(cfg.z_pos);
    else if (key == "z_neg") num(cfg.z_neg);
    else if (key == "literal_adv_sign") flag(cfg.literal_adv_sign);
    else if (key == "d_reals_from_train") flag(cfg.d_reals_from_train);
    else if (key == "use_batchnorm") flag(cfg.use_batchnorm);
    else if (key == "gen_base") num(cfg.gen_base);
    else if (key == "disc_base") num(cfg.disc_base);
    else if (key == "cls_base") num(cfg.cls_base);
    else if (key == "repeats") num(cfg.repeats);
    else if (key == "seed") num(cfg.seed);
    else if (key == "grid_sizes")
      detail::parse_num(value, line_no,
                        [&](const std::string& v) { cfg.grid_sizes = detail::parse_size_list(v); });
    else if (key == "grid_train_samples")
      detail::parse_num(value, line_no, [&](const std::string& v) {
        cfg.grid_train_samples = detail::parse_size_list(v);
      });
    else if (key == "arms") cfg.arms = detail::parse_str_list(value);
    else if (key == "resplit_train_per_repeat") flag(cfg.resplit_train_per_repeat);
    else if (key == "fixed_validation") flag(cfg.fixed_validation);
    else
      throw Error("config line " + std::to_string(line_no) + ": unknown key '" +
                  key + "'");
  }
  validate_config(cfg);
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config file: " + path);
  return parse_config_stream(is);
}

// Full provenance echo, itself parseable as a config file.
inline std::string config_echo(const RunConfig& c) {
  std::ostringstream os;
  auto join_sz = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  };
  std::string arms;
  for (const auto& a : c.arms) arms += (arms.empty() ? "" : ",") + a;
  os << "image_size = " << c.image_size << "\n"
     << "n_train = " << c.n_train << "\n"
     << "n_val = " << c.n_val << "\n"
     << "ambiguity = " << c.ambiguity << "\n"
     << "data_seed = " << c.data_seed << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "iterations = " << c.iterations << "\n"
     << "eval_interval = " << c.eval_interval << "\n"
     << "lr = " << c.lr << "\n"
     << "beta1 = " << c.beta1 << "\n"
     << "beta2 = " << c.beta2 << "\n"
     << "z_pos = " << c.z_pos << "\n"
     << "z_neg = " << c.z_neg << "\n"
     << "literal_adv_sign = " << (c.literal_adv_sign ? 1 : 0) << "\n"
     << "d_reals_from_train = " << (c.d_reals_from_train ? 1 : 0) << "\n"
     << "use_batchnorm = " << (c.use_batchnorm ? 1 : 0) << "\n"
     << "gen_base = " << c.gen_base << "\n"
     << "disc_base = " << c.disc_base << "\n"
     << "cls_base = " << c.cls_base << "\n"
     << "repeats = " << c.repeats << "\n"
     << "seed = " << c.seed << "\n"
     << "grid_sizes = " << join_sz(c.grid_sizes) << "\n"
     << "grid_train_samples = " << join_sz(c.grid_train_samples) << "\n"
     << "arms = " << arms << "\n"
     << "resplit_train_per_repeat = " << (c.resplit_train_per_repeat ? 1 : 0) << "\n"
     << "fixed_validation = " << (c.fixed_validation ? 1 : 0) << "\n";
  return os.str();
}

// The per-network TrainConfig implied by a RunConfig and an arm name.
template <class T>
TrainConfig<T> to_train_config(const RunConfig& c, const std::string& arm,
                               std::uint64_t seed) {
  TrainConfig<T> t;
  t.image_size = c.image_size;
  t.batch_size = c.batch_size;
  t.iterations = c.iterations;
  t.eval_interval = c.eval_interval;
  t.seed = seed;
  t.augmentation_enabled = arm != "baseline";
  t.assistant_enabled = arm == "augmented";
  t.literal_adv_sign = c.literal_adv_sign;
  t.d_reals_from_train = c.d_reals_from_train;
  t.gen_base = c.gen_base;
  t.disc_base = c.disc_base;
  t.cls_base = c.cls_base;
  t.use_batchnorm = c.use_batchnorm;
  t.targets.z_pos = T(c.z_pos);
  t.targets.z_neg = T(c.z_neg);
  t.adam_g.lr = T(c.lr);
  t.adam_g.beta1 = T(c.beta1);
  t.adam_g.beta2 = T(c.beta2);
  t.adam_d = t.adam_g;
  t.adam_c = t.adam_g;
  return t;
}

}  // namespace advaug
