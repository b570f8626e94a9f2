#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/core/io.hpp"

namespace fridu::pipeline {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct PairEntry {
  std::string id;
  std::string source;  // M1
  std::string target;  // M2
  fs::path gt;         // line i: vertex of M1 matched to vertex i of M2
  std::optional<fs::path> landmarks;
  std::optional<fs::path> init_map;  // assignment text or matrix-container stem
  Split split = Split::train;
};

/// Dataset description. Paths are stored absolute after loading.
struct DatasetManifest {
  std::string name;
  std::map<std::string, fs::path> meshes;
  std::vector<PairEntry> pairs;

  const PairEntry& pair(const std::string& id) const {
    for (const auto& p : pairs)
      if (p.id == id) return p;
    std::string valid;
    for (const auto& p : pairs) valid += (valid.empty() ? "" : ", ") + p.id;
    throw LookupError("unknown pair id '" + id + "'; valid ids: " + valid);
  }

  std::vector<const PairEntry*> split(Split s) const {
    std::vector<const PairEntry*> out;
    for (const auto& p : pairs)
      if (p.split == s) out.push_back(&p);
    return out;
  }
};

/// Rejects dangling references and duplicate ids; checks that files exist.
inline void validate(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (const auto& [id, path] : m.meshes)
    if (!fs::exists(path)) throw ValidationError("manifest: mesh file for '" + id + "' not found: " + path.string());
  for (const auto& p : m.pairs) {
    if (p.id.empty()) throw ValidationError("manifest: pair with empty id");
    if (!ids.insert(p.id).second) throw ValidationError("manifest: duplicate pair id '" + p.id + "'");
    for (const auto* mesh_id : {&p.source, &p.target})
      if (!m.meshes.count(*mesh_id))
        throw ValidationError("manifest: pair '" + p.id + "' references undeclared mesh '" + *mesh_id + "'");
    if (!fs::exists(p.gt)) throw ValidationError("manifest: pair '" + p.id + "' gt file not found: " + p.gt.string());
    if (p.landmarks && !fs::exists(*p.landmarks))
      throw ValidationError("manifest: pair '" + p.id + "' landmark file not found: " + p.landmarks->string());
    if (p.init_map && !fs::exists(*p.init_map) && !fs::exists(p.init_map->string() + ".bin"))
      throw ValidationError("manifest: pair '" + p.id + "' initial map not found: " + p.init_map->string());
  }
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m, const fs::path& base = {}) {
  auto rel = [&](const fs::path& p) { return base.empty() ? p.generic_string() : p.lexically_relative(base).generic_string(); };
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["meshes"] = nlohmann::ordered_json::object();
  for (const auto& [id, path] : m.meshes) j["meshes"][id] = rel(path);
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : m.pairs) {
    nlohmann::ordered_json e = {{"id", p.id}, {"source", p.source}, {"target", p.target}, {"gt", rel(p.gt)},
                                {"split", to_string(p.split)}};
    if (p.landmarks) e["landmarks"] = rel(*p.landmarks);
    if (p.init_map) e["init_map"] = rel(*p.init_map);
    j["pairs"].push_back(e);
  }
  return j;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  write_file_atomic(path, manifest_to_json(m, fs::absolute(path).parent_path()).dump(2) + "\n");
}

/// Relative paths resolve against the manifest's directory.
inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("manifest not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& s) { return (base / s).lexically_normal(); };
  DatasetManifest m;
  try {
    m.name = j.value("name", path.stem().string());
    for (const auto& [id, p] : j.at("meshes").items()) m.meshes[id] = resolve(p.get<std::string>());
    for (const auto& e : j.at("pairs")) {
      PairEntry p;
      p.id = e.at("id").get<std::string>();
      p.source = e.at("source").get<std::string>();
      p.target = e.at("target").get<std::string>();
      p.gt = resolve(e.at("gt").get<std::string>());
      if (e.contains("landmarks")) p.landmarks = resolve(e["landmarks"].get<std::string>());
      if (e.contains("init_map")) p.init_map = resolve(e["init_map"].get<std::string>());
      const std::string split = e.value("split", "train");
      if (split != "train" && split != "test")
        throw ValidationError("manifest: pair '" + p.id + "' has split '" + split + "'");
      p.split = split == "train" ? Split::train : Split::test;
      m.pairs.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  validate(m);
  return m;
}

}  // namespace fridu::pipeline
