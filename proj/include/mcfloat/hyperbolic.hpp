#pragma once

/// Half-space-model hyperbolic embedding: distance kernel, reconstruction
/// loss with negative sampling, Riemannian SGD with grow_expn accumulation,
/// and MAP/MR reconstruction metrics.
///
/// Points live in the upper half space (last coordinate strictly positive,
/// clamped at eps_n = 256 * min_pos of the precision after every update);
/// the metric is the Euclidean one scaled by 1/x_n^2, so the Riemannian
/// gradient is x_n^2 times the Euclidean gradient.
///
/// d(x,y) = arcosh(1 + |x-y|^2 / (2 x_n y_n)); the argument pipeline runs in
/// MC arithmetic, the arcosh itself on the evaluated sum. The argument is
/// clamped to the largest finite value of the precision so distances (and
/// their gradients) stay finite even where low-precision intermediates
/// overflow.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcfloat/autodiff.hpp"
#include "mcfloat/nn.hpp"
#include "mcfloat/rng.hpp"

namespace mcf {

template <class P>
inline double halfspace_eps() {
  return P::min_pos * 256.0;
}

// ---------------------------------------------------------------------------
// Edge data
// ---------------------------------------------------------------------------

struct EdgeDataset {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // positive pairs
  std::vector<std::set<std::size_t>> neighbors;
  std::vector<std::string> ids;  // index -> original id
  int neg_k = 50;

  static EdgeDataset from_edges(std::size_t n,
                                std::vector<std::pair<std::size_t, std::size_t>> e,
                                int neg_k = 50) {
    EdgeDataset d;
    d.num_nodes = n;
    d.edges = std::move(e);
    d.neg_k = neg_k;
    d.neighbors.assign(n, {});
    for (const auto& [a, b] : d.edges) {
      if (a >= n || b >= n) throw std::invalid_argument("edge references unknown node");
      d.neighbors[a].insert(b);
      d.neighbors[b].insert(a);
    }
    d.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.ids[i] = std::to_string(i);
    return d;
  }

  /// TSV lines `parent<TAB>child` over string ids, interned in first-seen
  /// order.
  static EdgeDataset from_tsv(const std::string& path, int neg_k = 50) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open edge list: " + path);
    std::map<std::string, std::size_t> intern;
    EdgeDataset d;
    d.neg_k = neg_k;
    std::string line;
    auto intern_id = [&](const std::string& s) {
      const auto [it, fresh] = intern.emplace(s, d.ids.size());
      if (fresh) d.ids.push_back(s);
      return it->second;
    };
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected parent<TAB>child");
      }
      const std::size_t a = intern_id(line.substr(0, tab));
      const std::size_t b = intern_id(line.substr(tab + 1));
      if (a != b) d.edges.emplace_back(a, b);
    }
    d.num_nodes = d.ids.size();
    d.neighbors.assign(d.num_nodes, {});
    for (const auto& [a, b] : d.edges) {
      d.neighbors[a].insert(b);
      d.neighbors[b].insert(a);
    }
    return d;
  }

  /// Uniform non-neighbor of u (excluding u itself).
  std::size_t sample_negative(std::size_t u, Rng& rng) const {
    const auto& nb = neighbors[u];
    if (nb.size() + 1 >= num_nodes) {
      throw std::invalid_argument("node has no non-neighbors to sample");
    }
    for (;;) {
      const std::size_t w = rng.below(num_nodes);
      if (w != u && nb.find(w) == nb.end()) return w;
    }
  }
};

/// Balanced tree and its transitive closure (ancestor-descendant pairs);
/// desk-scale stand-ins for taxonomy datasets.
inline std::vector<std::pair<std::size_t, std::size_t>>
make_balanced_tree(int branching, int depth) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::size_t> frontier{0};
  std::size_t next = 1;
  for (int d = 0; d < depth; ++d) {
    std::vector<std::size_t> fresh;
    for (const std::size_t p : frontier) {
      for (int b = 0; b < branching; ++b) {
        edges.emplace_back(p, next);
        fresh.push_back(next++);
      }
    }
    frontier = std::move(fresh);
  }
  return edges;
}

inline std::vector<std::pair<std::size_t, std::size_t>>
transitive_closure(const std::vector<std::pair<std::size_t, std::size_t>>& tree) {
  std::size_t n = 0;
  for (const auto& [a, b] : tree) n = std::max(n, std::max(a, b) + 1);
  std::vector<std::size_t> parent(n, static_cast<std::size_t>(-1));
  for (const auto& [a, b] : tree) parent[b] = a;
  std::vector<std::pair<std::size_t, std::size_t>> closure;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t a = parent[v]; a != static_cast<std::size_t>(-1); a = parent[a]) {
      closure.emplace_back(a, v);
    }
  }
  return closure;
}

// ---------------------------------------------------------------------------
// Distance
// ---------------------------------------------------------------------------

namespace detail {

/// arcosh on the evaluated sum, one rounding into P. Arguments within 1e-12
/// of 1 take the sqrt(2(a-1)) expansion (cancellation guard); the log form
/// is evaluated as log(a) + log1p(...) so it stays finite right up to the
/// clamp at the largest finite value of P.
template <class P>
inline double arcosh_guarded(double a) {
  if (a < 1.0) a = 1.0;
  if (a > P::max_finite) a = P::max_finite;
  if (a <= 1.0 + 1e-12) {
    return P::round(std::sqrt(2.0 * (a - 1.0)));
  }
  const double inv = 1.0 / a;
  return P::round(std::log(a) + std::log1p(std::sqrt((1.0 - inv) * (1.0 + inv))));
}

/// True when a's components order lexicographically before b's; any total
/// order works, it only has to be symmetric-stable.
inline bool comps_less(const double* a, const double* b, int nc) {
  for (int i = 0; i < nc; ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace detail

/// arcosh argument 1 + |x-y|^2/(2 x_n y_n) in MC arithmetic; x and y are
/// nc-component rows of length dim laid out in `rowx`/`rowy` element slices.
template <class P>
inline double halfspace_arg(const MCTensor<P>& table, std::size_t u, std::size_t v,
                            std::size_t dim) {
  const int nc = table.nc();
  double diff[kMaxNc], sq[kMaxNc], s[kMaxNc] = {};
  double neg[kMaxNc];
  for (std::size_t c = 0; c < dim; ++c) {
    const double* xu = table.comps(u * dim + c);
    const double* xv = table.comps(v * dim + c);
    for (int i = 0; i < nc; ++i) neg[i] = -xv[i];
    detail::add_kernel<P>(xu, nc, neg, nc, diff, nc);
    detail::square_kernel<P>(diff, nc, sq);
    detail::add_kernel<P>(s, nc, sq, nc, s, nc);
  }
  const double* hu = table.comps(u * dim + (dim - 1));
  const double* hv = table.comps(v * dim + (dim - 1));
  // canonical operand order keeps d(x,y) == d(y,x) bitwise
  const bool swap = detail::comps_less(hv, hu, nc);
  double hprod[kMaxNc];
  detail::mul_fast_kernel<P>(swap ? hv : hu, swap ? hu : hv, nc, hprod);
  double denom[kMaxNc];
  detail::scale_kernel<P>(hprod, nc, 2.0, denom, nc);
  double t[kMaxNc];
  detail::div_kernel<P>(s, denom, nc, t);
  double arg[kMaxNc];
  detail::grow_kernel<P>(t, nc, 1.0, arg);
  return detail::approx_kernel<P>(arg, nc);
}

/// Distance between rows u and v of an MC embedding table (n x dim).
template <class P>
inline double halfspace_distance(const MCTensor<P>& table, std::size_t u,
                                 std::size_t v) {
  if (table.rank() != 2) throw std::invalid_argument("halfspace_distance: table rank");
  const std::size_t dim = table.dim(1);
  const double hu = detail::approx_kernel<P>(table.comps(u * dim + dim - 1), table.nc());
  const double hv = detail::approx_kernel<P>(table.comps(v * dim + dim - 1), table.nc());
  if (!(hu > 0.0) || !(hv > 0.0)) {
    throw std::domain_error("halfspace_distance: nonpositive height");
  }
  return detail::arcosh_guarded<P>(halfspace_arg(table, u, v, dim));
}

/// Working-precision distance between explicit coordinate rows.
template <class P>
inline double halfspace_distance_std(const double* x, const double* y, std::size_t dim) {
  const double hx = x[dim - 1], hy = y[dim - 1];
  if (!(hx > 0.0) || !(hy > 0.0)) {
    throw std::domain_error("halfspace_distance: nonpositive height");
  }
  double s = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    const double d = fl_sub<P>(x[c], y[c]);
    s = fl_add<P>(s, fl_mul<P>(d, d));
  }
  const double denom = fl_mul<P>(2.0, fl_mul<P>(hx, hy));
  const double t = fl_add<P>(1.0, fl_div<P>(s, denom));
  return detail::arcosh_guarded<P>(t);
}

// ---------------------------------------------------------------------------
// Reconstruction loss (negative-sampling NLL) as one tape op
// ---------------------------------------------------------------------------

struct PositiveSample {
  std::size_t u, v;
  std::vector<std::size_t> negatives;
};

namespace detail {

/// Euclidean gradient of d(u,w) scattered into `dst` for both endpoints,
/// scaled by `coeff` = dL/dd. Multiplications are ordered so that the large
/// 1/height factors only ever touch already-damped quantities.
template <class P>
inline void scatter_distance_grad(const MCTensor<P>& table, std::size_t u,
                                  std::size_t w, std::size_t dim, double t,
                                  double coeff, NdArray& dst) {
  if (coeff == 0.0) return;  // also shields Inf upstream from 0 * Inf
  const int nc = table.nc();
  const double hu = approx_kernel<P>(table.comps(u * dim + dim - 1), nc);
  const double hw = approx_kernel<P>(table.comps(w * dim + dim - 1), nc);
  double dd_dt;
  if (t <= 1.0 + 1e-12) {
    const double d = std::sqrt(std::max(2.0 * (t - 1.0), 0.0));
    dd_dt = P::round(1.0 / std::max(d, 1e-7));
  } else {
    dd_dt = fl_div<P>(1.0, fl_sqrt<P>(fl_sub<P>(fl_mul<P>(t, t), 1.0)));
  }
  const double base = fl_mul<P>(coeff, dd_dt);
  const double inv_hh = fl_div<P>(base, fl_mul<P>(hu, hw));
  for (std::size_t c = 0; c < dim; ++c) {
    const double xu = approx_kernel<P>(table.comps(u * dim + c), nc);
    const double xw = approx_kernel<P>(table.comps(w * dim + c), nc);
    const double g = fl_mul<P>(inv_hh, fl_sub<P>(xu, xw));
    dst[u * dim + c] = fl_add<P>(dst[u * dim + c], g);
    dst[w * dim + c] = fl_sub<P>(dst[w * dim + c], g);
  }
  // extra height terms: -(t-1)/h per endpoint
  const double tm1 = fl_mul<P>(base, fl_sub<P>(t, 1.0));
  const double gu = fl_div<P>(tm1, hu);
  const double gw = fl_div<P>(tm1, hw);
  dst[u * dim + dim - 1] = fl_sub<P>(dst[u * dim + dim - 1], gu);
  dst[w * dim + dim - 1] = fl_sub<P>(dst[w * dim + dim - 1], gw);
}

}  // namespace detail

/// Sum over the batch of -log( exp(-d(u,v)) / sum_{w in {v} + negatives}
/// exp(-d(u,w)) ), differentiable toward the embedding table. Distances run
/// through the MC pipeline; the softmax runs stabilized on evaluated sums.
template <class P>
Var reconstruction_loss(Tape<P>& tape, MCTensor<P>& table,
                        const std::vector<PositiveSample>& batch) {
  if (table.rank() != 2) throw std::invalid_argument("reconstruction_loss: table rank");
  const std::size_t dim = table.dim(1);

  struct Term {
    std::size_t u;
    std::vector<std::size_t> cand;  // v first, then negatives
    std::vector<double> t;          // arcosh arguments
    std::vector<double> w;          // softmax weights
  };
  std::vector<Term> terms;
  terms.reserve(batch.size());
  double loss = 0.0;
  for (const auto& pos : batch) {
    Term term;
    term.u = pos.u;
    term.cand.push_back(pos.v);
    for (const auto n : pos.negatives) term.cand.push_back(n);
    std::vector<double> logits(term.cand.size());
    for (std::size_t i = 0; i < term.cand.size(); ++i) {
      const double t = halfspace_arg(table, pos.u, term.cand[i], dim);
      term.t.push_back(t);
      logits[i] = -detail::arcosh_guarded<P>(t);
    }
    double m = logits[0];
    for (const double l : logits) m = std::max(m, l);
    double z = 0.0;
    for (const double l : logits) z = fl_add<P>(z, P::round(std::exp(fl_sub<P>(l, m))));
    const double lse = fl_add<P>(m, fl_log<P>(z));
    loss = fl_add<P>(loss, fl_sub<P>(lse, logits[0]));
    term.w.resize(term.cand.size());
    for (std::size_t i = 0; i < term.cand.size(); ++i) {
      term.w[i] = P::round(std::exp(fl_sub<P>(logits[i], lse)));
    }
    terms.push_back(std::move(term));
  }

  MCTensor<P>* tbl = &table;
  return tape.custom(
      NdArray::scalar(loss), std::nullopt,
      [tbl, terms = std::move(terms), dim](Tape<P>& t, int self) {
        const double g = t.grad_ref(self)[0];
        NdArray& dst = tbl->ensure_grad();
        for (const auto& term : terms) {
          for (std::size_t i = 0; i < term.cand.size(); ++i) {
            // logits are -d, so dL/dd_i = [i == positive] - softmax_i
            double c = -term.w[i];
            if (i == 0) c = fl_add<P>(c, 1.0);
            c = fl_mul<P>(g, c);
            detail::scatter_distance_grad<P>(*tbl, term.u, term.cand[i], dim,
                                             term.t[i], c, dst);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Riemannian SGD step
// ---------------------------------------------------------------------------

/// Euclidean step scaled by x_n^2 (the inverse metric), applied through
/// grow_expn, then the height clamp. Returns the number of clamped heights.
template <class P>
inline std::size_t rsgd_step(MCTensor<P>& table, double lr) {
  if (!table.has_grad()) throw std::runtime_error("rsgd_step: no gradient on table");
  const NdArray& g = table.grad();
  const std::size_t dim = table.dim(1);
  const std::size_t n = table.dim(0);
  const double lr_p = P::round(lr);
  const double eps = halfspace_eps<P>();
  NdArray update(table.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double h = detail::approx_kernel<P>(table.comps(r * dim + dim - 1), table.nc());
    const double h2 = fl_mul<P>(h, h);
    for (std::size_t c = 0; c < dim; ++c) {
      const double riem = fl_mul<P>(h2, g[r * dim + c]);
      update[r * dim + c] = -fl_mul<P>(lr_p, riem);
    }
  }
  detail::apply_update(table, update);
  std::size_t clamped = 0;
  for (std::size_t r = 0; r < n; ++r) {
    double* comps = table.comps(r * dim + dim - 1);
    const double h = detail::approx_kernel<P>(comps, table.nc());
    if (!(h >= eps)) {
      comps[0] = eps;
      for (int i = 1; i < table.nc(); ++i) comps[i] = 0.0;
      ++clamped;
    }
  }
  return clamped;
}

// ---------------------------------------------------------------------------
// Reconstruction metrics
// ---------------------------------------------------------------------------

struct RankMetrics {
  double map = 0.0;
  double mean_rank = 0.0;
};

/// Ranks every true neighbor of each node against all non-neighbors by
/// distance (strictly-closer competitors count), then MAP / mean rank.
/// Distances are evaluated in binary64 on the evaluated sums, so the metric
/// is deterministic for a given embedding.
inline RankMetrics evaluate_map_mr(const NdArray& coords, const EdgeDataset& data) {
  const std::size_t n = data.num_nodes, dim = coords.dim(1);
  double ap_sum = 0.0;
  std::size_t ap_nodes = 0;
  double rank_sum = 0.0;
  std::size_t rank_count = 0;
  std::vector<double> dist(n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& nb = data.neighbors[u];
    if (nb.empty()) continue;
    for (std::size_t w = 0; w < n; ++w) {
      dist[w] = w == u ? 0.0
                       : halfspace_distance_std<B64>(coords.data() + u * dim,
                                                     coords.data() + w * dim, dim);
    }
    // ranks of neighbors among non-neighbors
    std::vector<double> ranks;
    for (const std::size_t v : nb) {
      std::size_t closer = 0;
      for (std::size_t w = 0; w < n; ++w) {
        if (w == u || w == v || nb.count(w)) continue;
        if (dist[w] < dist[v]) ++closer;
      }
      ranks.push_back(static_cast<double>(closer + 1));
    }
    std::sort(ranks.begin(), ranks.end());
    double ap = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      // i ranked neighbors precede this one in the full ordering
      ap += static_cast<double>(i + 1) / (ranks[i] + static_cast<double>(i));
      rank_sum += ranks[i];
      ++rank_count;
    }
    ap_sum += ap / static_cast<double>(ranks.size());
    ++ap_nodes;
  }
  return {ap_sum / static_cast<double>(ap_nodes),
          rank_sum / static_cast<double>(rank_count)};
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct HalfspaceConfig {
  std::size_t dim = 5;
  int nc = 2;
  double lr = 0.3;
  int epochs = 200;
  std::uint64_t seed = 0;
  int neg_k = 50;
};

template <class P>
struct HalfspaceResult {
  std::vector<double> losses;
  RankMetrics metrics;
  std::size_t clamped = 0;
  bool nan_free = true;
  MCTensor<P> table;
};

/// Initial embedding: small Gaussian spread, heights near 1.
template <class P>
MCTensor<P> init_halfspace_embedding(std::size_t n, std::size_t dim, int nc, Rng& rng) {
  NdArray coords(Shape{n, dim});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c + 1 < dim; ++c) {
      coords[r * dim + c] = rng.normal(0.0, 0.1);
    }
    coords[r * dim + dim - 1] = 1.0 + rng.normal(0.0, 0.01);
  }
  return MCTensor<P>::from_float(round_to<P>(coords), nc);
}

template <class P>
HalfspaceResult<P> train_halfspace(const EdgeDataset& data, const HalfspaceConfig& cfg) {
  Rng rng(cfg.seed);
  MCTensor<P> table = init_halfspace_embedding<P>(data.num_nodes, cfg.dim, cfg.nc, rng);
  HalfspaceResult<P> result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<PositiveSample> batch;
    batch.reserve(data.edges.size());
    for (const auto& [u, v] : data.edges) {
      PositiveSample s{u, v, {}};
      for (int k = 0; k < cfg.neg_k; ++k) s.negatives.push_back(data.sample_negative(u, rng));
      batch.push_back(std::move(s));
    }
    Tape<P> tape;
    table.zero_grad();
    const Var loss = reconstruction_loss(tape, table, batch);
    tape.backward(loss);
    result.clamped += rsgd_step(table, cfg.lr);
    const double l = tape.value(loss)[0];
    result.losses.push_back(l);
    if (!std::isfinite(l)) result.nan_free = false;
  }
  const NdArray coords = table.approx();
  for (std::size_t i = 0; i < coords.numel(); ++i) {
    if (!std::isfinite(coords[i])) result.nan_free = false;
  }
  // every pairwise working-precision distance must be finite as well
  for (std::size_t u = 0; u < data.num_nodes && result.nan_free; ++u) {
    for (std::size_t v = u + 1; v < data.num_nodes; ++v) {
      if (!std::isfinite(halfspace_distance(table, u, v))) {
        result.nan_free = false;
        break;
      }
    }
  }
  result.metrics = evaluate_map_mr(coords, data);
  result.table = std::move(table);
  return result;
}

}  // namespace mcf
