#pragma once

#include <atomic>
#include <functional>
#include <string>

#include "fridu/core/io.hpp"
#include "fridu/core/matrix_file.hpp"
#include "fridu/mesh/spectral.hpp"

namespace fridu::pipeline {

/// SHA-256 over length-prefixed fields.
inline std::string content_key(std::initializer_list<std::string_view> fields) {
  Sha256 h;
  for (auto f : fields) h.field(f);
  return h.hex();
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Content-addressed store of matrix containers under <root>/<kind>/<key>.
/// Thread-safe as long as concurrent callers use distinct keys.
class ArtifactCache {
 public:
  explicit ArtifactCache(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path stem(const std::string& kind, const std::string& key) const { return root_ / kind / key; }

  Eigen::MatrixXd matrix(const std::string& kind, const std::string& key, const MatrixHeader& header,
                         const std::function<Eigen::MatrixXd()>& compute) {
    const fs::path s = stem(kind, key);
    if (matrix_exists(s)) {
      ++hits_;
      return read_matrix(s);
    }
    ++misses_;
    Eigen::MatrixXd m = compute();
    write_matrix(s, m, header);
    return m;
  }

  /// A basis is three containers: phi, lambda and mass. Counts as one artifact.
  mesh::SpectralBasis basis(const std::string& key, const std::string& mesh_id,
                            const std::function<mesh::SpectralBasis()>& compute) {
    const fs::path s = stem("basis", key);
    const fs::path sp = s.string() + ".phi", sl = s.string() + ".lambda", sm = s.string() + ".mass";
    if (matrix_exists(sp) && matrix_exists(sl) && matrix_exists(sm)) {
      ++hits_;
      return {mesh_id, read_matrix(sp), read_matrix(sl).col(0), read_matrix(sm).col(0)};
    }
    ++misses_;
    mesh::SpectralBasis b = compute();
    b.mesh_id = mesh_id;
    write_matrix(sl, b.lambda, {"lambda", mesh_id, mesh_id, b.k()});
    write_matrix(sm, b.mass, {"mass", mesh_id, mesh_id, b.k()});
    write_matrix(sp, b.phi, {"phi", mesh_id, mesh_id, b.k()});
    return b;
  }

  long hits() const { return hits_; }
  long misses() const { return misses_; }
  void reset_counters() {
    hits_ = 0;
    misses_ = 0;
  }

 private:
  fs::path root_;
  std::atomic<long> hits_{0}, misses_{0};
};

}  // namespace fridu::pipeline
