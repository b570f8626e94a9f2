#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/core/io.hpp"
#include "fridu/mesh/mesh.hpp"

namespace fridu::mesh {

enum class MeshFormat { off, obj, ply };

inline MeshFormat format_from_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".off") return MeshFormat::off;
  if (ext == ".obj") return MeshFormat::obj;
  if (ext == ".ply") return MeshFormat::ply;
  throw ParseError("unrecognized mesh extension '" + ext + "'");
}

namespace detail {

struct RawMesh {
  std::vector<double> v;  // xyz triples
  std::vector<int> f;     // index triples
};

// Polygons are split into fans around their first vertex.
inline void push_polygon(RawMesh& raw, const std::vector<int>& poly, const std::string& where) {
  if (poly.size() < 3) throw ParseError(where + ": face with fewer than 3 vertices");
  for (size_t i = 1; i + 1 < poly.size(); ++i) {
    raw.f.push_back(poly[0]);
    raw.f.push_back(poly[i]);
    raw.f.push_back(poly[i + 1]);
  }
}

inline double to_double(const std::string& tok, const std::string& where) {
  try {
    size_t used = 0;
    const double x = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return x;
  } catch (const std::exception&) {
    throw ParseError(where + ": bad number '" + tok + "'");
  }
}

inline long to_long(const std::string& tok, const std::string& where) {
  long x = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
  if (ec != std::errc() || p != tok.data() + tok.size()) throw ParseError(where + ": bad integer '" + tok + "'");
  return x;
}

// Tokens of the next non-empty, non-comment line.
inline bool next_tokens(std::istream& in, std::vector<std::string>& toks, int& line_no) {
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    toks.clear();
    for (std::string t; ss >> t;) toks.push_back(t);
    if (!toks.empty()) return true;
  }
  return false;
}

inline RawMesh parse_off(std::istream& in, const std::string& name) {
  RawMesh raw;
  std::vector<std::string> t;
  int line = 0;
  auto where = [&] { return name + ":" + std::to_string(line); };
  if (!next_tokens(in, t, line)) throw ParseError(name + ": empty file");
  if (t[0] != "OFF") throw ParseError(where() + ": missing OFF header");
  t.erase(t.begin());
  if (t.empty() && !next_tokens(in, t, line)) throw ParseError(where() + ": missing counts");
  if (t.size() < 2) throw ParseError(where() + ": expected vertex and face counts");
  const long nv = to_long(t[0], where()), nf = to_long(t[1], where());
  if (nv < 0 || nf < 0) throw ParseError(where() + ": negative counts");
  for (long i = 0; i < nv; ++i) {
    if (!next_tokens(in, t, line) || t.size() < 3) throw ParseError(where() + ": truncated vertex list");
    for (int c = 0; c < 3; ++c) raw.v.push_back(to_double(t[c], where()));
  }
  for (long i = 0; i < nf; ++i) {
    if (!next_tokens(in, t, line)) throw ParseError(where() + ": truncated face list");
    const long k = to_long(t[0], where());
    if (k < 0 || static_cast<long>(t.size()) < k + 1) throw ParseError(where() + ": face record too short");
    std::vector<int> poly;
    for (long j = 1; j <= k; ++j) poly.push_back(static_cast<int>(to_long(t[j], where())));
    push_polygon(raw, poly, where());
  }
  return raw;
}

inline RawMesh parse_obj(std::istream& in, const std::string& name) {
  RawMesh raw;
  std::vector<std::string> t;
  int line = 0;
  auto where = [&] { return name + ":" + std::to_string(line); };
  while (next_tokens(in, t, line)) {
    if (t[0] == "v") {
      if (t.size() < 4) throw ParseError(where() + ": vertex needs 3 coordinates");
      for (int c = 1; c <= 3; ++c) raw.v.push_back(to_double(t[c], where()));
    } else if (t[0] == "f") {
      std::vector<int> poly;
      const long nv = static_cast<long>(raw.v.size() / 3);
      for (size_t j = 1; j < t.size(); ++j) {
        const std::string head = t[j].substr(0, t[j].find('/'));
        long idx = to_long(head, where());
        if (idx == 0) throw ParseError(where() + ": OBJ indices are 1-based");
        idx = idx > 0 ? idx - 1 : nv + idx;
        poly.push_back(static_cast<int>(idx));
      }
      push_polygon(raw, poly, where());
    }
    // vt, vn, g, o, s, usemtl, ... are ignored.
  }
  return raw;
}

inline RawMesh parse_ply(std::istream& in, const std::string& name) {
  RawMesh raw;
  std::string line;
  int line_no = 0;
  auto where = [&] { return name + ":" + std::to_string(line_no); };
  struct Element {
    std::string name;
    long count = 0;
    std::vector<std::string> props;
    bool list_face = false;
  };
  std::vector<Element> elements;
  bool header_done = false, saw_magic = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<std::string> t;
    for (std::string s; ss >> s;) t.push_back(s);
    if (t.empty()) continue;
    if (!saw_magic) {
      if (t[0] != "ply") throw ParseError(where() + ": missing ply magic");
      saw_magic = true;
      continue;
    }
    if (t[0] == "format") {
      if (t.size() < 2 || t[1] != "ascii") throw ParseError(where() + ": only ascii PLY is supported");
    } else if (t[0] == "element") {
      if (t.size() < 3) throw ParseError(where() + ": bad element line");
      elements.push_back({t[1], to_long(t[2], where()), {}, false});
    } else if (t[0] == "property") {
      if (elements.empty()) throw ParseError(where() + ": property before element");
      if (t.size() >= 2 && t[1] == "list") elements.back().list_face = true;
      elements.back().props.push_back(t.back());
    } else if (t[0] == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw ParseError(name + ": missing end_header");
  std::vector<std::string> t;
  for (const auto& el : elements) {
    int ix = -1, iy = -1, iz = -1;
    for (int p = 0; p < static_cast<int>(el.props.size()); ++p) {
      if (el.props[p] == "x") ix = p;
      if (el.props[p] == "y") iy = p;
      if (el.props[p] == "z") iz = p;
    }
    for (long i = 0; i < el.count; ++i) {
      if (!next_tokens(in, t, line_no)) throw ParseError(where() + ": truncated " + el.name + " data");
      if (el.name == "vertex") {
        if (ix < 0 || iy < 0 || iz < 0) throw ParseError(name + ": vertex element lacks x/y/z");
        const int need = std::max({ix, iy, iz}) + 1;
        if (static_cast<int>(t.size()) < need) throw ParseError(where() + ": vertex record too short");
        raw.v.push_back(to_double(t[ix], where()));
        raw.v.push_back(to_double(t[iy], where()));
        raw.v.push_back(to_double(t[iz], where()));
      } else if (el.name == "face" && el.list_face) {
        const long k = to_long(t[0], where());
        if (k < 0 || static_cast<long>(t.size()) < k + 1) throw ParseError(where() + ": face record too short");
        std::vector<int> poly;
        for (long j = 1; j <= k; ++j) poly.push_back(static_cast<int>(to_long(t[j], where())));
        push_polygon(raw, poly, where());
      }
    }
  }
  return raw;
}

}  // namespace detail

inline TriangleMesh load_mesh(const fs::path& path, MeshFormat format, std::string id = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open mesh file " + path.string());
  const std::string name = path.filename().string();
  detail::RawMesh raw;
  switch (format) {
    case MeshFormat::off: raw = detail::parse_off(in, name); break;
    case MeshFormat::obj: raw = detail::parse_obj(in, name); break;
    case MeshFormat::ply: raw = detail::parse_ply(in, name); break;
  }
  Vertices v(raw.v.size() / 3, 3);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (int c = 0; c < 3; ++c) v(i, c) = raw.v[3 * i + c];
  Faces f(raw.f.size() / 3, 3);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int c = 0; c < 3; ++c) f(i, c) = raw.f[3 * i + c];
  if (id.empty()) id = path.stem().string();
  return make_mesh(std::move(id), std::move(v), std::move(f));
}

inline TriangleMesh load_mesh(const fs::path& path, std::string id = {}) {
  return load_mesh(path, format_from_extension(path), std::move(id));
}

/// OFF text with round-trip precision (max_digits10).
inline std::string to_off(const TriangleMesh& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "OFF\n" << m.num_vertices() << ' ' << m.num_faces() << " 0\n";
  for (int i = 0; i < m.num_vertices(); ++i)
    out << m.vertices(i, 0) << ' ' << m.vertices(i, 1) << ' ' << m.vertices(i, 2) << '\n';
  for (int f = 0; f < m.num_faces(); ++f) out << "3 " << m.faces(f, 0) << ' ' << m.faces(f, 1) << ' ' << m.faces(f, 2) << '\n';
  return out.str();
}

inline std::string to_obj(const TriangleMesh& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (int i = 0; i < m.num_vertices(); ++i)
    out << "v " << m.vertices(i, 0) << ' ' << m.vertices(i, 1) << ' ' << m.vertices(i, 2) << '\n';
  for (int f = 0; f < m.num_faces(); ++f)
    out << "f " << m.faces(f, 0) + 1 << ' ' << m.faces(f, 1) + 1 << ' ' << m.faces(f, 2) + 1 << '\n';
  return out.str();
}

}  // namespace fridu::mesh
