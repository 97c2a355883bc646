#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"
#include "vscreen/trainer.hpp"

namespace vscreen {

// Flat `key = value` run configuration. Keys mirror the training-parameter
// names one-to-one; anything unrecognized is an error so typos cannot
// silently fall back to defaults.
//
//   processing_dims = 21x21x350
//   learning_rate   = 1e-6
//   beta1           = 0.9
//   beta2           = 0.999
//   epsilon         = 1e-8
//   batch_size      = 32
//   keep_rate       = 0.5
//   lambda_l2       = 1e-3
//   max_epochs      = 1000
//   patience        = 20
//   train_acc_stop  = 0.995
//   folds           = 5
//   seed            = 20
//   fc_hidden       = 256
//   balance_target  = 0

inline std::array<std::uint32_t, 3> parse_dims(const std::string& s) {
  std::array<std::uint32_t, 3> dims{};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s.substr(pos), &used);
    } catch (const std::exception&) {
      throw ConfigError("bad dims '" + s + "', expected WxHxL");
    }
    dims[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(v);
    pos += used;
    if (i < 2) {
      if (pos >= s.size() || s[pos] != 'x')
        throw ConfigError("bad dims '" + s + "', expected WxHxL");
      ++pos;
    }
  }
  if (pos != s.size()) throw ConfigError("bad dims '" + s + "', expected WxHxL");
  return dims;
}

inline std::string dims_to_string(std::array<std::uint32_t, 3> d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + v + "'");
  }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  }
}

}  // namespace detail

inline TrainConfig parse_train_config(const std::string& text,
                                      TrainConfig cfg = TrainConfig{}) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "processing_dims")
      cfg.dims = parse_dims(val);
    else if (key == "learning_rate")
      cfg.lr = detail::to_real(key, val);
    else if (key == "beta1")
      cfg.beta1 = detail::to_real(key, val);
    else if (key == "beta2")
      cfg.beta2 = detail::to_real(key, val);
    else if (key == "epsilon")
      cfg.eps = detail::to_real(key, val);
    else if (key == "batch_size")
      cfg.batch_size = detail::to_uint(key, val);
    else if (key == "keep_rate")
      cfg.keep_rate = detail::to_real(key, val);
    else if (key == "lambda_l2")
      cfg.lambda_l2 = detail::to_real(key, val);
    else if (key == "max_epochs")
      cfg.max_epochs = detail::to_uint(key, val);
    else if (key == "patience")
      cfg.patience = detail::to_uint(key, val);
    else if (key == "train_acc_stop")
      cfg.train_acc_stop = detail::to_real(key, val);
    else if (key == "folds")
      cfg.folds = detail::to_uint(key, val);
    else if (key == "seed")
      cfg.seed = detail::to_uint(key, val);
    else if (key == "fc_hidden")
      cfg.fc_hidden = static_cast<std::uint32_t>(detail::to_uint(key, val));
    else if (key == "balance_target")
      cfg.balance_target = detail::to_uint(key, val);
    else
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                        "'");
  }
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path,
                                     TrainConfig base = TrainConfig{}) {
  const auto bytes = read_file_bytes(path);
  return parse_train_config(std::string(bytes.begin(), bytes.end()), base);
}

// Resolved-configuration echo written next to the run outputs.
inline std::string format_train_config(const TrainConfig& cfg) {
  std::string out;
  out += "processing_dims = " + dims_to_string(cfg.dims) + "\n";
  out += "learning_rate = " + fmt_g17(cfg.lr) + "\n";
  out += "beta1 = " + fmt_g17(cfg.beta1) + "\n";
  out += "beta2 = " + fmt_g17(cfg.beta2) + "\n";
  out += "epsilon = " + fmt_g17(cfg.eps) + "\n";
  out += "batch_size = " + std::to_string(cfg.batch_size) + "\n";
  out += "keep_rate = " + fmt_g17(cfg.keep_rate) + "\n";
  out += "lambda_l2 = " + fmt_g17(cfg.lambda_l2) + "\n";
  out += "max_epochs = " + std::to_string(cfg.max_epochs) + "\n";
  out += "patience = " + std::to_string(cfg.patience) + "\n";
  out += "train_acc_stop = " + fmt_g17(cfg.train_acc_stop) + "\n";
  out += "folds = " + std::to_string(cfg.folds) + "\n";
  out += "seed = " + std::to_string(cfg.seed) + "\n";
  out += "fc_hidden = " + std::to_string(cfg.fc_hidden) + "\n";
  out += "balance_target = " + std::to_string(cfg.balance_target) + "\n";
  return out;
}

}  // namespace vscreen
