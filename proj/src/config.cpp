#include "peac/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "peac/errors.hpp"

namespace peac {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* what) {
  throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " + what);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <typename Int>
Int to_int(std::string_view key, std::string_view v) {
  Int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "lr",          "momentum",      "warmup_epochs",  "epochs",         "batch_size",   "ema_alpha",
      "variant",     "od",            "ad",             "order_loss",     "restore_loss", "global_loss",
      "local_loss",  "order_weight",  "restore_weight", "global_weight",  "local_weight", "p_od",
      "p_ad",        "seed",          "grid",           "grid_n",         "grid_m",       "grid_k",
      "depth",       "dim",           "heads",          "mlp_ratio",      "max_grad_norm", "max_steps",
      "checkpoint_every"};
  return k;
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "lr") lr = to_double(key, value);
  else if (key == "momentum") momentum = to_double(key, value);
  else if (key == "warmup_epochs") warmup_epochs = to_int<int>(key, value);
  else if (key == "epochs") epochs = to_int<int>(key, value);
  else if (key == "batch_size") batch_size = to_int<int>(key, value);
  else if (key == "ema_alpha") ema_alpha = to_double(key, value);
  else if (key == "variant") toggles = LossToggles::from_variant(std::string(value));
  else if (key == "od") toggles.od = to_bool(key, value);
  else if (key == "ad") toggles.ad = to_bool(key, value);
  else if (key == "order_loss") toggles.order = to_bool(key, value);
  else if (key == "restore_loss") toggles.restore = to_bool(key, value);
  else if (key == "global_loss") toggles.global = to_bool(key, value);
  else if (key == "local_loss") toggles.local = to_bool(key, value);
  else if (key == "order_weight") weights.order = to_double(key, value);
  else if (key == "restore_weight") weights.restore = to_double(key, value);
  else if (key == "global_weight") weights.global = to_double(key, value);
  else if (key == "local_weight") weights.local = to_double(key, value);
  else if (key == "p_od") p_od = to_double(key, value);
  else if (key == "p_ad") p_ad = to_double(key, value);
  else if (key == "seed") seed = to_int<std::uint64_t>(key, value);
  else if (key == "grid") {
    if (value == "desk") { grid_n = 11; grid_m = 8; grid_k = 8; }
    else if (value == "paper") { grid_n = 19; grid_m = 32; grid_k = 14; }
    else bad_value(key, value, "'desk' or 'paper'");
  }
  else if (key == "grid_n") grid_n = to_int<int>(key, value);
  else if (key == "grid_m") grid_m = to_int<int>(key, value);
  else if (key == "grid_k") grid_k = to_int<int>(key, value);
  else if (key == "depth") depth = to_int<int>(key, value);
  else if (key == "dim") dim = to_int<int>(key, value);
  else if (key == "heads") heads = to_int<int>(key, value);
  else if (key == "mlp_ratio") mlp_ratio = to_int<int>(key, value);
  else if (key == "max_grad_norm") max_grad_norm = to_double(key, value);
  else if (key == "max_steps") max_steps = to_int<std::int64_t>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = to_int<int>(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void TrainConfig::validate() const {
  (void)grid();  // GridSpec rules first: they carry the most specific message
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("warmup_epochs must lie in [0, epochs]");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0, 1)");
  if (p_od < 0.0 || p_od > 1.0 || p_ad < 0.0 || p_ad > 1.0) throw ConfigError("p_od / p_ad must lie in [0, 1]");
  if (max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be >= 0");
  if (max_steps < 0 || checkpoint_every < 0) throw ConfigError("max_steps / checkpoint_every must be >= 0");
  (void)toggles.variant();
  encoder().validate();
}

EncoderConfig TrainConfig::encoder() const {
  EncoderConfig e;
  e.depth = depth;
  e.dim = dim;
  e.heads = heads;
  e.mlp_ratio = mlp_ratio;
  e.patch = grid_m;
  e.grid = grid_k;
  return e;
}

DistortionConfig TrainConfig::distortion() const {
  return DistortionConfig{toggles.od ? p_od : 0.0, toggles.ad ? p_ad : 0.0};
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "lr = " << format_double(c.lr) << "\n"
      << "momentum = " << format_double(c.momentum) << "\n"
      << "warmup_epochs = " << c.warmup_epochs << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "ema_alpha = " << format_double(c.ema_alpha) << "\n"
      << "od = " << b(c.toggles.od) << "\n"
      << "ad = " << b(c.toggles.ad) << "\n"
      << "order_loss = " << b(c.toggles.order) << "\n"
      << "restore_loss = " << b(c.toggles.restore) << "\n"
      << "global_loss = " << b(c.toggles.global) << "\n"
      << "local_loss = " << b(c.toggles.local) << "\n"
      << "order_weight = " << format_double(c.weights.order) << "\n"
      << "restore_weight = " << format_double(c.weights.restore) << "\n"
      << "global_weight = " << format_double(c.weights.global) << "\n"
      << "local_weight = " << format_double(c.weights.local) << "\n"
      << "p_od = " << format_double(c.p_od) << "\n"
      << "p_ad = " << format_double(c.p_ad) << "\n"
      << "seed = " << c.seed << "\n"
      << "grid_n = " << c.grid_n << "\n"
      << "grid_m = " << c.grid_m << "\n"
      << "grid_k = " << c.grid_k << "\n"
      << "depth = " << c.depth << "\n"
      << "dim = " << c.dim << "\n"
      << "heads = " << c.heads << "\n"
      << "mlp_ratio = " << c.mlp_ratio << "\n"
      << "max_grad_norm = " << format_double(c.max_grad_norm) << "\n"
      << "max_steps = " << c.max_steps << "\n"
      << "checkpoint_every = " << c.checkpoint_every << "\n";
  return out.str();
}

}  // namespace peac
