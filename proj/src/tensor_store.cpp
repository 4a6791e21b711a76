#include "tmr/tensor_store.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "tmr/csv.hpp"

namespace tmr {

namespace fs = std::filesystem;

int vec_index(int i, int j, int S) {
  if (S < 1 || i < 1 || i > S || j < 1 || j > S)
    throw std::out_of_range("vec_index: (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside 1.." + std::to_string(S));
  return (j - 1) * S + i;
}

std::pair<int, int> unvec_index(int n, int S) {
  if (S < 1 || n < 1 || n > S * S)
    throw std::out_of_range("unvec_index: " + std::to_string(n) + " outside 1.." +
                            std::to_string(S * S));
  return {(n - 1) % S + 1, (n - 1) / S + 1};
}

// --- RoutingMatrix ---------------------------------------------------------

RoutingMatrix::RoutingMatrix(int nodes, SparseMatrix entries)
    : nodes_(nodes), entries_(std::move(entries)) {
  if (nodes_ < 1)
    throw ValidationError("routing: node count must be positive");
  if (entries_.cols() != static_cast<Eigen::Index>(nodes_) * nodes_)
    throw ValidationError("routing: expected " + std::to_string(nodes_ * nodes_) +
                          " OD columns, got " + std::to_string(entries_.cols()));
  entries_.makeCompressed();
  for (Eigen::Index r = 0; r < entries_.outerSize(); ++r) {
    bool any = false;
    for (SparseMatrix::InnerIterator it(entries_, r); it; ++it) {
      if (it.value() != 0.0 && it.value() != 1.0)
        throw ValidationError("routing: entry (" + std::to_string(r + 1) + ", " +
                              std::to_string(it.col() + 1) + ") is not binary");
      any = any || it.value() == 1.0;
    }
    if (!any)
      throw ValidationError("routing: link " + std::to_string(r + 1) + " carries no OD pair");
  }
  entries_.prune(0.0);
}

RoutingMatrix RoutingMatrix::from_dense(int nodes, const Matrix& dense) {
  return RoutingMatrix(nodes, dense.sparseView());
}

RoutingMatrix RoutingMatrix::identity(int nodes) {
  SparseMatrix eye(nodes * nodes, nodes * nodes);
  eye.setIdentity();
  return RoutingMatrix(nodes, std::move(eye));
}

Matrix RoutingMatrix::block(int j) const {
  return Matrix(entries_.middleCols(static_cast<Eigen::Index>(j) * nodes_, nodes_));
}

RoutingMatrix RoutingMatrix::select_rows(std::span<const int> rows) const {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (SparseMatrix::InnerIterator it(entries_, rows[r]); it; ++it)
      trips.emplace_back(static_cast<int>(r), static_cast<int>(it.col()), it.value());
  SparseMatrix sub(static_cast<Eigen::Index>(rows.size()), entries_.cols());
  sub.setFromTriplets(trips.begin(), trips.end());
  return RoutingMatrix(nodes_, std::move(sub));
}

// --- SparsityMask / TrafficTensor -------------------------------------------

bool SparsityMask::contains(int i, int j, int k) const {
  return zero_pairs.count({i, j}) > 0 || per_interval.count({i, j, k}) > 0;
}

Matrix SparsityMask::interval(int k, int nodes) const {
  Matrix omega = Matrix::Zero(nodes, nodes);
  for (auto [i, j] : zero_pairs)
    omega(i, j) = 1.0;
  for (auto [i, j, kk] : per_interval)
    if (kk == k)
      omega(i, j) = 1.0;
  return omega;
}

Matrix TrafficTensor::as_od_matrix() const {
  const int s = nodes();
  Matrix od(s * s, intervals());
  for (int k = 0; k < intervals(); ++k)
    od.col(k) = Eigen::Map<const Vector>(slices[k].data(), s * s);
  return od;
}

TrafficTensor TrafficTensor::from_od_matrix(const Matrix& od, int nodes) {
  TrafficTensor t;
  for (Eigen::Index k = 0; k < od.cols(); ++k) {
    Vector column = od.col(k);
    t.slices.emplace_back(Eigen::Map<const Matrix>(column.data(), nodes, nodes));
  }
  return t;
}

// --- TomographyInstance -----------------------------------------------------

void TomographyInstance::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("instance: " + what); };
  if (S < 1 || M < 1 || T < 1)
    fail("S, M, T must be positive");
  if (routing.nodes() != S || routing.links() != M)
    fail("routing matrix is " + std::to_string(routing.links()) + "x" +
         std::to_string(routing.od_pairs()) + ", expected " + std::to_string(M) + "x" +
         std::to_string(N()));
  // M + 1 >= N is accepted: it is the (over)determined case used by the
  // identity-routing checks. Too few links is not.
  if (S > M + 1)
    fail("scale relation S <= M + 1 violated (S=" + std::to_string(S) +
         ", M=" + std::to_string(M) + ")");
  if (link_loads.rows() != M || link_loads.cols() != T)
    fail("link loads are " + std::to_string(link_loads.rows()) + "x" +
         std::to_string(link_loads.cols()) + ", expected " + std::to_string(M) + "x" +
         std::to_string(T));
  if (!link_loads.allFinite() || (link_loads.array() < 0.0).any())
    fail("link loads must be finite and nonnegative");
  for (auto [i, j] : mask.zero_pairs)
    if (i < 0 || i >= S || j < 0 || j >= S)
      fail("mask pair out of range");
  for (auto [i, j, k] : mask.per_interval)
    if (i < 0 || i >= S || j < 0 || j >= S || k < 0 || k >= T)
      fail("mask triple out of range");
  if (truth) {
    if (truth->intervals() != T)
      fail("truth has " + std::to_string(truth->intervals()) + " intervals, expected " +
           std::to_string(T));
    for (int k = 0; k < T; ++k) {
      const Matrix& x = truth->slices[k];
      if (x.rows() != S || x.cols() != S)
        fail("truth slice has wrong shape");
      if (!x.allFinite() || (x.array() < 0.0).any())
        fail("truth must be finite and nonnegative");
      if ((x.array() * mask.interval(k, S).array()).abs().maxCoeff() > 0.0)
        fail("truth is nonzero on a masked entry in interval " + std::to_string(k + 1));
    }
  }
}

// --- file I/O -----------------------------------------------------------------

TomographyInstance load_instance(const fs::path& dir) {
  TomographyInstance inst;

  csv::File meta(dir / "meta.csv");
  if (meta.rows().size() != 1 || meta.rows()[0].fields.size() != 3)
    throw ValidationError("meta.csv: expected a single line S,M,T");
  const auto& m = meta.rows()[0];
  inst.S = meta.integer(m, 0);
  inst.M = meta.integer(m, 1);
  inst.T = meta.integer(m, 2);
  if (inst.S < 1 || inst.M < 1 || inst.T < 1)
    meta.fail(m, "S, M, T must be positive");
  const int n_od = inst.N();

  csv::File routing(dir / "routing.csv");
  std::vector<Eigen::Triplet<double>> trips;
  for (const auto& row : routing.rows()) {
    if (row.fields.size() != 2 && row.fields.size() != 3)
      routing.fail(row, "expected link_index,od_index");
    int link = routing.integer(row, 0);
    int od = routing.integer(row, 1);
    if (link < 1 || link > inst.M)
      routing.fail(row, "link index " + std::to_string(link) + " outside 1.." +
                            std::to_string(inst.M));
    if (od < 1 || od > n_od)
      routing.fail(row, "OD index " + std::to_string(od) + " outside 1.." + std::to_string(n_od));
    double value = row.fields.size() == 3 ? routing.number(row, 2) : 1.0;
    if (value != 0.0 && value != 1.0)
      routing.fail(row, "routing entry must be 0 or 1, got " + std::string(row.fields[2]));
    if (value == 1.0)
      trips.emplace_back(link - 1, od - 1, 1.0);
  }
  SparseMatrix r(inst.M, n_od);
  // Duplicate triplets would sum to 2; keep the first.
  r.setFromTriplets(trips.begin(), trips.end(), [](double a, double) { return a; });
  inst.routing = RoutingMatrix(inst.S, std::move(r));

  inst.link_loads = csv::read_nonneg_matrix(dir / "linkloads.csv", inst.M, inst.T);

  if (fs::exists(dir / "mask.csv")) {
    csv::File mask(dir / "mask.csv");
    for (const auto& row : mask.rows()) {
      if (row.fields.size() != 2 && row.fields.size() != 3)
        mask.fail(row, "expected i,j or i,j,k");
      int i = mask.integer(row, 0);
      int j = mask.integer(row, 1);
      if (i < 1 || i > inst.S || j < 1 || j > inst.S)
        mask.fail(row, "OD index outside 1.." + std::to_string(inst.S));
      if (row.fields.size() == 2) {
        inst.mask.zero_pairs.insert({i - 1, j - 1});
      } else {
        int k = mask.integer(row, 2);
        if (k < 1 || k > inst.T)
          mask.fail(row, "interval outside 1.." + std::to_string(inst.T));
        inst.mask.per_interval.insert({i - 1, j - 1, k - 1});
      }
    }
  }

  if (fs::exists(dir / "truth.csv"))
    inst.truth = TrafficTensor::from_od_matrix(
        csv::read_nonneg_matrix(dir / "truth.csv", n_od, inst.T), inst.S);

  inst.validate();
  return inst;
}


void save_instance(const TomographyInstance& inst, const fs::path& dir) {
  inst.validate();
  fs::create_directories(dir);
  csv::write_file(dir / "meta.csv", std::to_string(inst.S) + "," + std::to_string(inst.M) + "," +
                                        std::to_string(inst.T) + "\n");

  std::string routing;
  const auto& r = inst.routing.entries();
  for (Eigen::Index i = 0; i < r.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(r, i); it; ++it)
      routing += std::to_string(i + 1) + "," + std::to_string(it.col() + 1) + "\n";
  csv::write_file(dir / "routing.csv", routing);

  csv::write_file(dir / "linkloads.csv", csv::matrix_text(inst.link_loads));

  std::error_code ec;
  if (!inst.mask.empty()) {
    std::string mask;
    for (auto [i, j] : inst.mask.zero_pairs)
      mask += std::to_string(i + 1) + "," + std::to_string(j + 1) + "\n";
    for (auto [i, j, k] : inst.mask.per_interval)
      mask += std::to_string(i + 1) + "," + std::to_string(j + 1) + "," + std::to_string(k + 1) +
              "\n";
    csv::write_file(dir / "mask.csv", mask);
  } else {
    fs::remove(dir / "mask.csv", ec);
  }

  if (inst.truth)
    csv::write_file(dir / "truth.csv", csv::matrix_text(inst.truth->as_od_matrix()));
  else
    fs::remove(dir / "truth.csv", ec);
}

// --- synthesis ------------------------------------------------------------------

RoutingMatrix shortest_path_routing(int nodes, std::span<const std::pair<int, int>> edges) {
  std::vector<std::vector<std::pair<int, int>>> adj(nodes); // (neighbour, link)
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [u, v] = edges[e];
    adj[u].emplace_back(v, static_cast<int>(2 * e));
    adj[v].emplace_back(u, static_cast<int>(2 * e + 1));
  }
  for (auto& a : adj)
    std::sort(a.begin(), a.end());

  std::vector<Eigen::Triplet<double>> trips;
  for (int src = 0; src < nodes; ++src) {
    // BFS; first discovery through the lowest-index frontier node wins.
    std::vector<int> parent_link(nodes, -1), parent(nodes, -1);
    std::vector<bool> seen(nodes, false);
    std::deque<int> queue{src};
    seen[src] = true;
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (auto [v, link] : adj[u]) {
        if (seen[v])
          continue;
        seen[v] = true;
        parent[v] = u;
        parent_link[v] = link;
        queue.push_back(v);
      }
    }
    for (int dst = 0; dst < nodes; ++dst) {
      if (dst == src)
        continue;
      if (!seen[dst])
        throw ValidationError("topology is disconnected");
      const int od = dst * nodes + src; // 0-based vec index of (src, dst)
      for (int v = dst; v != src; v = parent[v])
        trips.emplace_back(parent_link[v], od, 1.0);
    }
  }
  SparseMatrix r(static_cast<Eigen::Index>(2 * edges.size()), nodes * nodes);
  r.setFromTriplets(trips.begin(), trips.end());
  return RoutingMatrix(nodes, std::move(r));
}

namespace {

std::vector<std::pair<int, int>> random_topology(int nodes, int target_edges, std::mt19937_64& rng) {
  std::vector<int> order(nodes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::set<std::pair<int, int>> edges;
  for (int k = 1; k < nodes; ++k) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    int a = order[k], b = order[pick(rng)];
    edges.insert({std::min(a, b), std::max(a, b)});
  }
  const int max_edges = nodes * (nodes - 1) / 2;
  target_edges = std::clamp(target_edges, nodes - 1, max_edges);
  std::uniform_int_distribution<int> node(0, nodes - 1);
  while (static_cast<int>(edges.size()) < target_edges) {
    int a = node(rng), b = node(rng);
    if (a != b)
      edges.insert({std::min(a, b), std::max(a, b)});
  }
  return {edges.begin(), edges.end()};
}

} // namespace

TomographyInstance synthesize_instance(const SynthConfig& cfg) {
  if (cfg.nodes < 2)
    throw std::invalid_argument("synthesize_instance: need at least 2 nodes");
  if (cfg.intervals < 1)
    throw std::invalid_argument("synthesize_instance: need at least 1 interval");
  if (cfg.rank < 1 || cfg.rank > cfg.nodes)
    throw std::invalid_argument("synthesize_instance: rank must be in 1..S");
  if (!(cfg.zero_fraction >= 0.0 && cfg.zero_fraction < 1.0))
    throw std::invalid_argument("synthesize_instance: zero_fraction must be in [0, 1)");
  if (!(cfg.noise_level >= 0.0))
    throw std::invalid_argument("synthesize_instance: noise_level must be nonnegative");

  std::mt19937_64 rng(cfg.seed);
  const int s = cfg.nodes;

  TomographyInstance inst;
  inst.S = s;
  inst.T = cfg.intervals;

  int target = static_cast<int>(std::lround(cfg.avg_degree * s / 2.0));
  bool ok = false;
  for (int attempt = 0; attempt < 16 && !ok; ++attempt, target += s) {
    auto edges = random_topology(s, target, rng);
    inst.routing = shortest_path_routing(s, edges);
    inst.M = inst.routing.links();
    ok = s <= inst.M + 1 && inst.M + 1 < inst.N();
  }
  if (!ok)
    throw ValidationError("synthesize_instance: cannot satisfy S <= M + 1 < N");

  // Nonnegative rank-r factors, each component modulated by its own smooth
  // periodic profile, so every slice has rank <= r.
  std::lognormal_distribution<double> heavy(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix out(s, cfg.rank), in(s, cfg.rank);
  for (int c = 0; c < cfg.rank; ++c)
    for (int i = 0; i < s; ++i) {
      out(i, c) = heavy(rng);
      in(i, c) = heavy(rng);
    }
  std::vector<double> amp(cfg.rank), phase(cfg.rank);
  for (int c = 0; c < cfg.rank; ++c) {
    amp[c] = 0.2 + 0.5 * unit(rng);
    phase[c] = 2.0 * std::numbers::pi * unit(rng);
  }
  const double scale = 1.0 / std::max(1e-12, (out * in.transpose()).mean());

  TrafficTensor truth;
  for (int k = 0; k < cfg.intervals; ++k) {
    Vector weight(cfg.rank);
    for (int c = 0; c < cfg.rank; ++c)
      weight(c) = 1.0 + amp[c] * std::sin(2.0 * std::numbers::pi * k / cfg.profile_period + phase[c]);
    truth.slices.push_back(scale * out * weight.asDiagonal() * in.transpose());
  }

  inst.mask = apply_sparsity_protocol(truth, 100.0 * cfg.zero_fraction);
  for (auto& x : truth.slices)
    for (auto [i, j] : inst.mask.zero_pairs)
      x(i, j) = 0.0;

  std::normal_distribution<double> gauss(0.0, 1.0);
  inst.link_loads.resize(inst.M, inst.T);
  for (int k = 0; k < inst.T; ++k) {
    const Matrix& x = truth.slices[k];
    Vector clean = inst.routing.entries() * Eigen::Map<const Vector>(x.data(), inst.N());
    for (int m = 0; m < inst.M; ++m) {
      double factor = cfg.noise_level > 0.0 ? 1.0 + cfg.noise_level * gauss(rng) : 1.0;
      inst.link_loads(m, k) = std::max(0.0, clean(m) * factor);
    }
  }
  inst.truth = std::move(truth);
  inst.validate();
  return inst;
}

// --- preprocessing ------------------------------------------------------------------

SparsityMask apply_sparsity_protocol(const TrafficTensor& truth, double percent) {
  if (!(percent >= 0.0 && percent < 100.0))
    throw std::invalid_argument("apply_sparsity_protocol: percent must be in [0, 100)");
  const int s = truth.nodes();
  const int n = s * s;
  Vector total = Vector::Zero(n);
  for (const auto& x : truth.slices)
    total += Eigen::Map<const Vector>(x.data(), n);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return total(a) < total(b); });

  const int count = static_cast<int>(std::floor(percent * n / 100.0 + 1e-9));
  SparsityMask mask;
  for (int r = 0; r < count; ++r)
    mask.zero_pairs.insert({order[r] % s, order[r] / s});
  return mask;
}

std::vector<bool> flag_anomalies(const Matrix& loads, double threshold_factor) {
  if (loads.cols() < 3)
    throw std::invalid_argument("repair_anomalies: need at least 3 intervals");
  if (!(threshold_factor > 1.0))
    throw std::invalid_argument("repair_anomalies: threshold_factor must exceed 1");
  const Eigen::Index t = loads.cols();
  std::vector<double> norms(t);
  for (Eigen::Index k = 0; k < t; ++k)
    norms[k] = loads.col(k).norm();
  std::vector<double> sorted = norms;
  std::sort(sorted.begin(), sorted.end());
  const double median = t % 2 ? sorted[t / 2] : 0.5 * (sorted[t / 2 - 1] + sorted[t / 2]);

  std::vector<bool> flagged(t);
  for (Eigen::Index k = 0; k < t; ++k)
    flagged[k] = norms[k] > threshold_factor * median;
  return flagged;
}

Matrix repair_anomalies(const Matrix& loads, double threshold_factor) {
  const auto flagged = flag_anomalies(loads, threshold_factor);
  const int t = static_cast<int>(loads.cols());
  if (std::all_of(flagged.begin(), flagged.end(), [](bool f) { return f; }))
    throw ValidationError("repair_anomalies: every interval is flagged, nothing to interpolate from");

  Matrix repaired = loads;
  int k = 0;
  while (k < t) {
    if (!flagged[k]) {
      ++k;
      continue;
    }
    int end = k;
    while (end < t && flagged[end])
      ++end;
    const int left = k - 1, right = end; // nearest unflagged neighbours, may be out of range
    for (int c = k; c < end; ++c) {
      if (left >= 0 && right < t) {
        double w = static_cast<double>(c - left) / (right - left);
        repaired.col(c) = (1.0 - w) * loads.col(left) + w * loads.col(right);
      } else if (left >= 0) {
        repaired.col(c) = loads.col(left);
      } else {
        repaired.col(c) = loads.col(right);
      }
    }
    k = end;
  }
  return repaired;
}

} // namespace tmr
