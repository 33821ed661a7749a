#pragma once

// Run configuration: INI-style file with [run], [dsp], [model], [train] and
// [paths] sections. Later assignments win, so command-line overrides are
// applied after the file.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtbca/audio/pipeline.hpp"
#include "mtbca/model.hpp"
#include "mtbca/parse.hpp"
#include "mtbca/train.hpp"

namespace mtbca {

struct RunConfig {
  std::uint64_t seed = 42;
  double split_ratio = 0.8;
  audio::DspConfig dsp;
  ModelConfig model;
  TrainConfig train;
  std::map<std::string, std::string> paths;

  void set(const std::string& section, const std::string& key, const std::string& value) {
    if (section == "run") {
      if (key == "seed") seed = parse_size(key, value);
      else if (key == "split_ratio") split_ratio = parse_double(key, value);
      else throw ConfigError("run: unknown key '" + key + "'");
    } else if (section == "dsp") {
      dsp.set(key, value);
    } else if (section == "model") {
      model.set(key, value);
    } else if (section == "train") {
      train.set(key, value);
    } else if (section == "paths") {
      paths[key] = value;
    } else {
      throw ConfigError("unknown config section [" + section + "]");
    }
    train.seed = seed;
  }

  /// Parses `key = value` lines; '#' and ';' start comment lines. Keys before
  /// any section header belong to [run].
  void load_ini(const std::string& text, const std::string& source = "<config>") {
    std::istringstream is(text);
    std::string line, section = "run";
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      try {
        if (line.front() == '[') {
          if (line.back() != ']') throw ConfigError("malformed section header");
          section = trim(line.substr(1, line.size() - 2));
          if (section != "run" && section != "dsp" && section != "model" && section != "train" && section != "paths") {
            throw ConfigError("unknown section [" + section + "]");
          }
          continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value");
        set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  /// Applies a `section.key=value` override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + assignment + "' must look like section.key=value");
    }
    set(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
  }

  /// Fully resolved configuration; loading it back reproduces this object.
  std::string to_ini() const {
    std::ostringstream os;
    os << "[run]\nseed = " << seed << "\nsplit_ratio = " << format_double(split_ratio) << "\n\n[dsp]\n";
    std::istringstream ds(dsp.canonical());
    std::string item;
    while (std::getline(ds, item, ';')) {
      const auto eq = item.find('=');
      const std::string k = item.substr(0, eq);
      if (k == "window" || k == "center") continue;
      os << k << " = " << item.substr(eq + 1) << '\n';
    }
    os << "\n[model]\n";
    for (const auto& [k, v] : model.to_kv()) os << k << " = " << v << '\n';
    os << "\n[train]\n";
    for (const auto& [k, v] : train.to_kv()) os << k << " = " << v << '\n';
    os << "\n[paths]\n";
    for (const auto& [k, v] : paths) os << k << " = " << v << '\n';
    return os.str();
  }
};

}  // namespace mtbca
