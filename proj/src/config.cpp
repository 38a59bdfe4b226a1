#include "bd3mg/config.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>

namespace bd3mg {

namespace {

constexpr std::array kKnownKeys = {
    // paths
    "truth", "observed", "psf", "output", "log", "trace",
    // phantom and degradation model
    "dims", "seed", "kernel", "sigma1", "sigma2", "sigma3", "phi", "theta", "psf_seed", "noise_sigma", "noise_seed",
    // regularization
    "lambda", "eta", "kappa", "delta", "x_min", "x_max",
    // run
    "method", "engine", "workers", "block_height", "tol", "max_updates", "max_sweeps", "init_seed", "run_seed",
    "cg_tol", "cg_maxit", "service_base", "service_jitter", "log_every_sweep",
    // ablate / speedup
    "sweeps", "reference_factor", "workers_list", "allow_oversubscribe"};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  if (text.empty()) throw ConfigError(key, "empty value, expected a number");
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end != begin + text.size() || errno == ERANGE) throw ConfigError(key, "'" + text + "' is not a valid number");
  return v;
}

std::int64_t to_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError(key, "'" + text + "' is not a valid integer");
  return v;
}

std::array<int, 3> to_triple(const std::string& key, const std::string& text) {
  const auto parts = split(text, 'x');
  if (parts.size() != 3) throw ConfigError(key, "'" + text + "' must have the form AxBxC");
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const auto v = to_int(key, parts[std::size_t(i)]);
    if (v < 1 || v > (1 << 20)) throw ConfigError(key, "component " + std::to_string(v) + " out of range");
    out[std::size_t(i)] = int(v);
  }
  return out;
}

}  // namespace

bool Config::is_known_key(const std::string& key) {
  return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) != kKnownKeys.end();
}

void Config::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) throw ConfigError(key, "unknown key");
  values_[key] = value;
}

Config Config::parse(std::istream& is, const std::string& source) {
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("", source + ":" + std::to_string(lineno) + ": missing key");
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot open config file " + path);
  return parse(is, path);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("", "override '" + assignment + "' must be key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::require(std::initializer_list<const char*> keys) const {
  for (const char* k : keys)
    if (!has(k)) throw ConfigError(k, "missing required key");
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "missing required key");
  if (it->second.empty()) throw ConfigError(key, "empty value");
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

double Config::get_double(const std::string& key) const { return to_double(key, get_string(key)); }
double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t Config::get_int(const std::string& key) const { return to_int(key, get_string(key)); }
std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "'" + v + "' is not a boolean");
}

Dims3 Config::get_dims(const std::string& key) const {
  const auto t = to_triple(key, get_string(key));
  return {t[0], t[1], t[2]};
}

KernelDims Config::get_kernel_dims(const std::string& key, KernelDims fallback) const {
  if (!has(key)) return fallback;
  const auto t = to_triple(key, get_string(key));
  KernelDims k{t[0], t[1], t[2]};
  for (int v : t)
    if (v % 2 == 0) throw ConfigError(key, "kernel extents must be odd");
  return k;
}

Interval Config::get_interval(const std::string& key, Interval fallback) const {
  if (!has(key)) return fallback;
  const auto parts = split(get_string(key), ',');
  if (parts.size() != 2) throw ConfigError(key, "expected 'lo,hi'");
  Interval r{to_double(key, parts[0]), to_double(key, parts[1])};
  if (!(r.lo <= r.hi)) throw ConfigError(key, "lo must not exceed hi");
  return r;
}

std::vector<std::int64_t> Config::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& p : split(get_string(key), ',')) out.push_back(to_int(key, p));
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

}  // namespace bd3mg
