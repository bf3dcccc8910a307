#include "tacvit/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace tacvit {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = val;
  }
  return cfg;
}

KvConfig KvConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str());
}

void KvConfig::set(const std::string& key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  kv_[key] = buf;
}

void KvConfig::set(const std::string& key, int64_t v) { kv_[key] = std::to_string(v); }

std::optional<std::string> KvConfig::get(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return std::nullopt;
  return it->second;
}

std::string KvConfig::get_str(const std::string& key, const std::string& dflt) const {
  auto v = get(key);
  return v ? *v : dflt;
}

double KvConfig::get_real(const std::string& key, double dflt) const {
  auto v = get(key);
  if (!v) return dflt;
  try {
    size_t pos = 0;
    double r = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + *v + "'");
  }
}

int64_t KvConfig::get_int(const std::string& key, int64_t dflt) const {
  auto v = get(key);
  if (!v) return dflt;
  try {
    size_t pos = 0;
    int64_t r = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + *v + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool dflt) const {
  auto v = get(key);
  if (!v) return dflt;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + *v + "'");
}

std::string KvConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
  return os.str();
}

void KvConfig::save_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write config file: " + path);
  f << serialize();
}

}  // namespace tacvit
