#pragma once

#include <Eigen/SparseCore>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "tmr/types.hpp"

namespace tmr {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// OD-pair vectorization is column-stacking: pair (i, j) of an S x S matrix
// sits at position (j - 1) * S + i. This matches Eigen's column-major storage,
// so Eigen::Map over an S x S matrix is exactly vec(X).

/// 1-based (i, j) -> 1-based OD index. Throws std::out_of_range.
int vec_index(int i, int j, int S);
/// Inverse of vec_index. Throws std::out_of_range.
std::pair<int, int> unvec_index(int n, int S);

/// Binary M x N routing matrix, N = S^2. Column block j (0-based) holds the
/// OD pairs whose destination is node j.
class RoutingMatrix {
public:
  RoutingMatrix() = default;
  /// Validates binary entries, N = S^2 columns, and that no row is empty.
  RoutingMatrix(int nodes, SparseMatrix entries);

  static RoutingMatrix from_dense(int nodes, const Matrix& dense);
  /// M = N, one link per OD pair (the fully determined case).
  static RoutingMatrix identity(int nodes);

  int nodes() const { return nodes_; }
  int links() const { return static_cast<int>(entries_.rows()); }
  int od_pairs() const { return nodes_ * nodes_; }

  const SparseMatrix& entries() const { return entries_; }
  Matrix dense() const { return Matrix(entries_); }
  /// M x S column block R_j (0-based j).
  Matrix block(int j) const;
  /// Keeps only the listed rows (0-based), in the given order.
  RoutingMatrix select_rows(std::span<const int> rows) const;

private:
  int nodes_ = 0;
  SparseMatrix entries_;
};

/// Known zero-traffic OD entries. Indices are 0-based internally.
struct SparsityMask {
  std::set<std::pair<int, int>> zero_pairs;
  std::set<std::tuple<int, int, int>> per_interval;

  bool contains(int i, int j, int k) const;
  /// S x S indicator of Omega^(k): 1.0 on masked entries, 0.0 elsewhere.
  Matrix interval(int k, int nodes) const;
  bool empty() const { return zero_pairs.empty() && per_interval.empty(); }
};

/// T slices, each S x S, of nonnegative traffic volumes.
struct TrafficTensor {
  std::vector<Matrix> slices;

  int nodes() const { return slices.empty() ? 0 : static_cast<int>(slices.front().rows()); }
  int intervals() const { return static_cast<int>(slices.size()); }
  /// N x T matrix whose row n is OD pair n (0-based) over time.
  Matrix as_od_matrix() const;
  static TrafficTensor from_od_matrix(const Matrix& od, int nodes);
};

struct TomographyInstance {
  int S = 0;
  int M = 0;
  int T = 0;
  RoutingMatrix routing;
  Matrix link_loads; // M x T
  SparsityMask mask;
  std::optional<TrafficTensor> truth;

  int N() const { return S * S; }
  /// Throws ValidationError when any structural invariant is broken.
  void validate() const;
};

TomographyInstance load_instance(const std::filesystem::path& dir);
void save_instance(const TomographyInstance& instance, const std::filesystem::path& dir);

struct SynthConfig {
  int nodes = 4;
  double avg_degree = 3.0;
  int intervals = 5;
  int rank = 1;
  double zero_fraction = 0.0;
  double noise_level = 0.0;
  std::uint64_t seed = 1;
  /// Length of the daily profile cycle, in intervals.
  int profile_period = 24;
};

/// Random connected topology, shortest-path routing, low-rank periodic truth.
TomographyInstance synthesize_instance(const SynthConfig& config);

/// Hop-count shortest-path routing over an undirected edge list. Each edge
/// yields two directed links (u->v then v->u, in edge order). Ties go to the
/// lowest-index predecessor.
RoutingMatrix shortest_path_routing(int nodes, std::span<const std::pair<int, int>> edges);

/// Masks the floor(p * N / 100) OD pairs of smallest aggregate volume.
SparsityMask apply_sparsity_protocol(const TrafficTensor& truth, double percent);

/// Intervals whose column norm exceeds threshold_factor x median norm.
std::vector<bool> flag_anomalies(const Matrix& link_loads, double threshold_factor);
/// Replaces flagged intervals by linear interpolation between the nearest
/// unflagged neighbours (or a copy of the nearest one at the boundaries).
Matrix repair_anomalies(const Matrix& link_loads, double threshold_factor);

} // namespace tmr
