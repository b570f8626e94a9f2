#pragma once

// Matrix container: `<stem>.bin` holds rows*cols little-endian IEEE-754 doubles in
// row-major order; `<stem>.json` is the sidecar
//   {"rows": R, "cols": C, "dtype": "f64", "semantic": "...",
//    "source": "...", "target": "...", "k": K}
// `semantic` is one of fmap, phi, eigenvalues, mass, assignment, descriptors.

#include <Eigen/Core>
#include <json.hpp>

#include <string>

#include "fridu/core/error.hpp"
#include "fridu/core/io.hpp"

namespace fridu {

struct MatrixHeader {
  std::string semantic;
  std::string source;
  std::string target;
  int k = 0;
};

inline fs::path matrix_bin_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }
inline fs::path matrix_json_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

inline bool matrix_exists(const fs::path& stem) {
  return fs::exists(matrix_bin_path(stem)) && fs::exists(matrix_json_path(stem));
}

inline void write_matrix(const fs::path& stem, const Eigen::MatrixXd& m, const MatrixHeader& header) {
  std::string payload;
  payload.reserve(static_cast<size_t>(m.size()) * 8);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) append_le_f64(payload, m(r, c));
  nlohmann::ordered_json side;
  side["rows"] = m.rows();
  side["cols"] = m.cols();
  side["dtype"] = "f64";
  side["semantic"] = header.semantic;
  side["source"] = header.source;
  side["target"] = header.target;
  side["k"] = header.k;
  write_file_atomic(matrix_bin_path(stem), payload);
  write_file_atomic(matrix_json_path(stem), side.dump(2) + "\n");
}

inline Eigen::MatrixXd read_matrix(const fs::path& stem, MatrixHeader* header = nullptr) {
  if (!matrix_exists(stem)) throw MissingArtifactError("no matrix container at " + stem.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file_bytes(matrix_json_path(stem)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(matrix_json_path(stem).string() + ": " + e.what());
  }
  if (side.value("dtype", "") != "f64") throw ParseError(stem.string() + ": dtype must be f64");
  const auto rows = side.at("rows").get<Eigen::Index>();
  const auto cols = side.at("cols").get<Eigen::Index>();
  const std::string payload = read_file_bytes(matrix_bin_path(stem));
  if (static_cast<Eigen::Index>(payload.size()) != rows * cols * 8)
    throw ParseError(stem.string() + ": payload size does not match rows*cols*8");
  Eigen::MatrixXd m(rows, cols);
  const char* p = payload.data();
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c, p += 8) m(r, c) = read_le_f64(p);
  if (header) {
    header->semantic = side.value("semantic", "");
    header->source = side.value("source", "");
    header->target = side.value("target", "");
    header->k = side.value("k", 0);
  }
  return m;
}

}  // namespace fridu
