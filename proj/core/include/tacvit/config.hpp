#pragma once

#include <map>
#include <optional>
#include <string>

#include "tacvit/tensor.hpp"

namespace tacvit {

// Plain-text key=value configuration; '#' starts a comment.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse_text(const std::string& text);
  static KvConfig load_file(const std::string& path);

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set(const std::string& key, double v);
  void set(const std::string& key, int64_t v);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_real(const std::string& key, double dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  // Entries of `other` win on conflict.
  void merge(const KvConfig& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
  }

  std::string serialize() const;
  void save_file(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace tacvit
