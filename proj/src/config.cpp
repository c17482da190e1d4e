#include "imusic/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "imusic/error.hpp"

namespace imusic::cfg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parses_int(const std::string& v) {
  std::int64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  return r.ec == std::errc() && r.ptr == v.data() + v.size();
}

bool parses_real(const std::string& v) {
  if (v.empty()) return false;
  std::size_t used = 0;
  try {
    (void)std::stod(v, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == v.size();
}

}  // namespace

RunConfig::RunConfig() {
  entries_ = {
      {"model.preset", Kind::kString, "desk-0.5"},
      {"paths.corpus", Kind::kString, "data/corpus"},
      {"paths.run", Kind::kString, "runs/desk"},
      {"seed.seed", Kind::kInt, "0"},
      // "auto" picks the per-module default learning rate.
      {"train.lr", Kind::kString, "auto"},
      {"train.warmup", Kind::kInt, "0"},
      {"train.clip", Kind::kReal, "1.0"},
      {"train.batch", Kind::kInt, "4"},
      {"train.steps", Kind::kInt, "200"},
      {"train.checkpoint_every", Kind::kInt, "50"},
      {"train.stage", Kind::kInt, "1"},
      {"train.cfg_dropout", Kind::kReal, "0.7"},
      {"train.crop_seconds", Kind::kReal, "1.0"},
      {"generate.cfg_scale", Kind::kReal, "3.0"},
      {"generate.top_k", Kind::kInt, "350"},
      {"generate.temperature", Kind::kReal, "1.0"},
      {"generate.flow_steps", Kind::kInt, "10"},
      {"generate.solver", Kind::kString, "euler"},
      {"generate.flow_cfg_scale", Kind::kReal, "1.0"},
  };
}

RunConfig::Entry& RunConfig::find(const std::string& key) {
  for (auto& e : entries_) {
    if (e.key == key) return e;
  }
  throw UsageError("unknown config key '" + key + "'");
}

const RunConfig::Entry& RunConfig::find(const std::string& key) const {
  return const_cast<RunConfig*>(this)->find(key);
}

bool RunConfig::has(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return true;
  }
  return false;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.key);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  Entry& e = find(key);
  const std::string v = trim(value);
  if (e.kind == Kind::kInt && !parses_int(v)) throw UsageError("config " + key + ": expected an integer, got '" + v + "'");
  if (e.kind == Kind::kReal && !parses_real(v)) throw UsageError("config " + key + ": expected a number, got '" + v + "'");
  if (key == "train.lr" && v != "auto" && !parses_real(v)) {
    throw UsageError("config train.lr: expected a number or 'auto', got '" + v + "'");
  }
  e.value = v;
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    if (section.empty()) throw UsageError(where + ": key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(where + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const { return find(key).value; }

double RunConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  if (!parses_real(v)) throw UsageError("config " + key + " is not numeric: '" + v + "'");
  return std::stod(v);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  if (!parses_int(v)) throw UsageError("config " + key + " is not an integer: '" + v + "'");
  return std::stoll(v);
}

std::string RunConfig::dump() const {
  std::string out;
  std::string section;
  for (const auto& e : entries_) {
    const auto dot = e.key.find('.');
    const std::string s = e.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += e.key.substr(dot + 1) + " = " + e.value + "\n";
  }
  return out;
}

}  // namespace imusic::cfg
