#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "eside/error.hpp"
#include "eside/kv_file.hpp"

namespace cli {

// One subcommand's settings. Every setting is both a long flag and a config
// key of the same name; flags win over --config, which wins over defaults.
// The resolved set is what goes into the run manifest, so replaying a
// manifest passes exactly the settings the original run used.
class Params {
 public:
  struct Spec {
    std::string name;
    std::string value;
    std::string help;
    bool required = false;
    CLI::Option* option = nullptr;
  };

  explicit Params(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "key = value file with settings for this command");
  }

  void add(const std::string& name, const std::string& default_value, const std::string& help, bool required = false) {
    auto spec = std::make_unique<Spec>(Spec{name, default_value, help, required, nullptr});
    spec->option = app_->add_option("--" + name, spec->value, help);
    if (!default_value.empty()) spec->option->default_str(default_value);
    specs_.push_back(std::move(spec));
  }

  // Applies --config (and any replay overrides) and checks required keys.
  void resolve(const eside::KvFile* overrides = nullptr) {
    if (!config_path_.empty()) merge(eside::KvFile::load(config_path_), false);
    if (overrides) merge(*overrides, true);
    for (const auto& s : specs_) {
      if (s->required && s->value.empty()) throw eside::InvalidArgument("missing required setting '" + s->name + "'");
    }
  }

  // A malformed setting is the caller's mistake, not a file format problem.
  template <typename T>
  static T parse(const std::string& text, const std::string& name) {
    try {
      return eside::KvFile::parse_value<T>(text, name);
    } catch (const eside::FormatError&) {
      throw eside::InvalidArgument("setting '" + name + "': cannot parse '" + text + "'");
    }
  }

  const std::string& str(const std::string& name) const { return find(name).value; }

  template <typename T>
  T get(const std::string& name) const {
    return parse<T>(str(name), name);
  }

  bool flag(const std::string& name) const {
    const auto& v = str(name);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw eside::InvalidArgument("setting '" + name + "' must be true or false");
  }

  template <typename T>
  std::vector<T> list(const std::string& name) const {
    std::vector<T> out;
    std::string cur;
    const auto& v = str(name);
    for (std::size_t i = 0; i <= v.size(); ++i) {
      if (i == v.size() || v[i] == ',') {
        const auto item = eside::KvFile::trim(cur);
        if (!item.empty()) out.push_back(parse<T>(item, name));
        cur.clear();
      } else {
        cur += v[i];
      }
    }
    return out;
  }

  eside::KvFile manifest(const std::string& command) const {
    eside::KvFile kv;
    kv.set("command", command);
    for (const auto& s : specs_) kv.set(s->name, s->value);
    return kv;
  }

 private:
  const Spec& find(const std::string& name) const {
    for (const auto& s : specs_)
      if (s->name == name) return *s;
    throw eside::InvalidArgument("unknown setting '" + name + "'");
  }

  void merge(const eside::KvFile& kv, bool force) {
    for (const auto& [key, value] : kv.entries()) {
      if (key == "command") continue;
      Spec* spec = nullptr;
      for (auto& s : specs_)
        if (s->name == key) spec = s.get();
      if (!spec) throw eside::InvalidArgument("unknown config key '" + key + "'");
      if (force || spec->option->count() == 0) spec->value = value;
    }
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<std::unique_ptr<Spec>> specs_;
};

}  // namespace cli
