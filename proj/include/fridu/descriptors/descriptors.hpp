#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/core/io.hpp"
#include "fridu/mesh/mesh.hpp"
#include "fridu/mesh/spectral.hpp"

namespace fridu::desc {

enum class DescriptorKind { wks, external, landmark, mixed };

inline std::string to_string(DescriptorKind k) {
  switch (k) {
    case DescriptorKind::wks: return "wks";
    case DescriptorKind::external: return "external";
    case DescriptorKind::landmark: return "landmark";
    case DescriptorKind::mixed: return "mixed";
  }
  return "?";
}

/// Per-vertex descriptor functions, one per column (n x d). The trailing
/// `landmark_columns` columns, if any, are landmark functions.
struct DescriptorSet {
  std::string mesh_id;
  DescriptorKind kind = DescriptorKind::wks;
  Eigen::MatrixXd values;
  nlohmann::json meta = nlohmann::json::object();
  int landmark_columns = 0;

  int d() const { return static_cast<int>(values.cols()); }
  int num_vertices() const { return static_cast<int>(values.rows()); }
};

inline void check_no_zero_column(const DescriptorSet& s) {
  for (Eigen::Index c = 0; c < s.values.cols(); ++c)
    if ((s.values.col(c).array() == 0.0).all())
      throw ValidationError("descriptor column " + std::to_string(c) + " of '" + s.mesh_id + "' is identically zero");
}

struct WksParams {
  int n_descr = 100;
  int subsample_step = 5;
  int n_eigs = 150;
  /// Gaussian width in units of the log-energy spacing.
  double variance = 7.0;
};

/// Wave kernel signature. Eigenpairs 1..n_eigs-1 are used (the zero eigenvalue
/// is skipped); n_descr log-energies span [log lambda_1, log lambda_{n_eigs-1}],
///   f_E(x) = sum_l phi_l(x)^2 exp(-(E - log lambda_l)^2 / (2 sigma^2)),
/// each column is divided by its integral over the surface and every
/// subsample_step-th energy is kept.
inline DescriptorSet wks(const mesh::SpectralBasis& basis, const WksParams& p = {}) {
  if (p.n_eigs < 3 || basis.k() < p.n_eigs)
    throw DimensionError("wks: basis has " + std::to_string(basis.k()) + " eigenpairs, need n_eigs=" +
                         std::to_string(p.n_eigs));
  if (p.subsample_step < 1 || p.n_descr < p.subsample_step)
    throw DimensionError("wks: need n_descr >= subsample_step >= 1");
  const int L = p.n_eigs - 1;
  Eigen::VectorXd log_ev(L);
  for (int l = 0; l < L; ++l) {
    const double ev = basis.lambda[l + 1];
    if (!(ev > 0)) throw DimensionError("wks: non-positive eigenvalue beyond the first; is the mesh connected?");
    log_ev[l] = std::log(ev);
  }
  const double e_min = log_ev[0], e_max = log_ev[L - 1];
  const double sigma = p.variance * (e_max - e_min) / p.n_descr;
  const Eigen::MatrixXd sq = basis.phi.middleCols(1, L).array().square().matrix();

  std::vector<int> kept;
  for (int e = 0; e < p.n_descr; e += p.subsample_step) kept.push_back(e);
  DescriptorSet out;
  out.mesh_id = basis.mesh_id;
  out.kind = DescriptorKind::wks;
  out.values.resize(basis.num_vertices(), static_cast<Eigen::Index>(kept.size()));
  for (size_t c = 0; c < kept.size(); ++c) {
    const double energy = p.n_descr == 1 ? e_min : e_min + (e_max - e_min) * kept[c] / (p.n_descr - 1);
    Eigen::VectorXd coef(L);
    for (int l = 0; l < L; ++l) coef[l] = std::exp(-(energy - log_ev[l]) * (energy - log_ev[l]) / (2 * sigma * sigma));
    Eigen::VectorXd col = sq * coef;
    const double integral = col.dot(basis.mass);
    out.values.col(static_cast<Eigen::Index>(c)) = col / integral;
  }
  out.meta = {{"n_descr", p.n_descr}, {"subsample_step", p.subsample_step}, {"n_eigs", p.n_eigs},
              {"variance", p.variance}};
  return out;
}

/// Smoothed landmark indicators: column j is phi (phi^T A delta_{v_j}) using the
/// first `radius_steps` eigenfunctions (0 means the whole basis). Fewer
/// eigenfunctions give a wider bump.
inline DescriptorSet landmark_functions(const mesh::SpectralBasis& basis, const std::vector<int>& indices,
                                        int radius_steps = 0) {
  const int k_use = radius_steps <= 0 ? basis.k() : std::min(radius_steps, basis.k());
  DescriptorSet out;
  out.mesh_id = basis.mesh_id;
  out.kind = DescriptorKind::landmark;
  out.values.resize(basis.num_vertices(), static_cast<Eigen::Index>(indices.size()));
  out.landmark_columns = static_cast<int>(indices.size());
  const auto phi = basis.phi.leftCols(k_use);
  for (size_t j = 0; j < indices.size(); ++j) {
    const int v = indices[j];
    if (v < 0 || v >= basis.num_vertices())
      throw IndexError("landmark vertex " + std::to_string(v) + " out of range for '" + basis.mesh_id + "'");
    const Eigen::VectorXd coeffs = basis.mass[v] * phi.row(v).transpose();
    out.values.col(static_cast<Eigen::Index>(j)) = phi * coeffs;
  }
  out.meta = {{"landmarks", indices}, {"radius_steps", radius_steps}};
  if (indices.empty()) out.meta["empty"] = true;
  return out;
}

/// Columns of `b` appended to those of `a` (same mesh). Landmark columns stay last.
inline DescriptorSet concat(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.num_vertices() != b.num_vertices()) throw DimensionError("concat: descriptor row counts differ");
  if (a.landmark_columns > 0 && b.d() > b.landmark_columns)
    throw DimensionError("concat: landmark columns must stay trailing");
  DescriptorSet out;
  out.mesh_id = a.mesh_id;
  out.kind = a.kind == b.kind ? a.kind : DescriptorKind::mixed;
  out.values.resize(a.num_vertices(), a.d() + b.d());
  out.values << a.values, b.values;
  out.landmark_columns = a.landmark_columns + b.landmark_columns;
  out.meta = {{"parts", {a.meta, b.meta}}};
  return out;
}

/// Scales every column to unit mass-weighted L2 norm.
inline DescriptorSet normalize_columns(DescriptorSet s, const Eigen::VectorXd& mass) {
  if (mass.size() != s.num_vertices()) throw DimensionError("normalize_columns: mass length mismatch");
  for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
    const double norm = std::sqrt(s.values.col(c).array().square().matrix().dot(mass));
    if (norm > 0) s.values.col(c) /= norm;
  }
  return s;
}

/// Reads an n x d descriptor table (comma and/or whitespace separated, no header).
inline DescriptorSet load_external_descriptors(const fs::path& path, const mesh::TriangleMesh& m) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open descriptor file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (auto& ch : line)
      if (ch == ',' || ch == ';') ch = ' ';
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != m.num_vertices())
    throw DimensionError(path.string() + ": " + std::to_string(rows.size()) + " rows but mesh '" + m.id + "' has " +
                         std::to_string(m.num_vertices()) + " vertices");
  DescriptorSet out;
  out.mesh_id = m.id;
  out.kind = DescriptorKind::external;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  out.meta = {{"path", path.string()}};
  check_no_zero_column(out);
  return out;
}

/// Corresponding vertex pairs (index on M1, index on M2).
struct LandmarkSet {
  std::vector<std::pair<int, int>> pairs;

  std::vector<int> source() const {
    std::vector<int> s;
    for (auto [a, b] : pairs) s.push_back(a);
    return s;
  }
  std::vector<int> target() const {
    std::vector<int> t;
    for (auto [a, b] : pairs) t.push_back(b);
    return t;
  }
};

inline void validate(const LandmarkSet& l, int n1, int n2) {
  std::set<int> seen;
  for (auto [a, b] : l.pairs) {
    if (a < 0 || a >= n1 || b < 0 || b >= n2)
      throw IndexError("landmark pair (" + std::to_string(a) + ", " + std::to_string(b) + ") out of range");
    if (!seen.insert(a).second) throw ValidationError("duplicate landmark source index " + std::to_string(a));
  }
}

/// Text file with one "i1 i2" pair per line.
inline LandmarkSet load_landmarks(const fs::path& path, int n1, int n2) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open landmark file " + path.string());
  LandmarkSet l;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    long a, b;
    if (!(ss >> a)) continue;
    if (!(ss >> b)) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected two indices");
    l.pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  validate(l, n1, n2);
  return l;
}

}  // namespace fridu::desc
