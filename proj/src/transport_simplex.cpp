#include "w2w/transport_simplex.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace w2w {

namespace {

struct Arc {
  int i, j;     // indices into the support-restricted problem
  double flow;
};

constexpr double kOptTol = 1e-11;

}  // namespace

TransportSimplexResult transport_simplex(const Eigen::VectorXd& a,
                                         const Eigen::VectorXd& b,
                                         const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (cost.rows() != n || cost.cols() != m)
    throw std::invalid_argument("transport_simplex: cost shape mismatch");
  if (n == 0 || m == 0)
    throw std::invalid_argument("transport_simplex: empty marginals");
  if (a.minCoeff() < 0.0 || b.minCoeff() < 0.0)
    throw std::invalid_argument("transport_simplex: negative mass");
  if (!cost.allFinite())
    throw std::invalid_argument("transport_simplex: non-finite cost");
  const double total_a = a.sum(), total_b = b.sum();
  if (!(total_a > 0.0))
    throw std::invalid_argument("transport_simplex: zero total mass");
  if (std::abs(total_a - total_b) > 1e-9 * std::max(1.0, total_a))
    throw std::invalid_argument("transport_simplex: marginal mass mismatch");

  // Restrict to the support; zero-mass rows/columns carry no flow and their
  // duals are filled in afterwards.
  std::vector<int> sa, sb;
  for (int i = 0; i < n; ++i)
    if (a(i) > 0.0) sa.push_back(i);
  for (int j = 0; j < m; ++j)
    if (b(j) > 0.0) sb.push_back(j);
  const int ns = static_cast<int>(sa.size());
  const int nt = static_cast<int>(sb.size());

  Eigen::MatrixXd C(ns, nt);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j) C(i, j) = cost(sa[i], sb[j]);

  // Northwest-corner initial basis: a spanning tree with ns + nt - 1 arcs,
  // possibly carrying degenerate zero flows.
  std::vector<Arc> arcs;
  arcs.reserve(ns + nt - 1);
  {
    Eigen::VectorXd ra(ns), rb(nt);
    for (int i = 0; i < ns; ++i) ra(i) = a(sa[i]);
    for (int j = 0; j < nt; ++j) rb(j) = b(sb[j]);
    int i = 0, j = 0;
    while (true) {
      double f = std::min(ra(i), rb(j));
      arcs.push_back({i, j, f});
      ra(i) -= f;
      rb(j) -= f;
      if (i == ns - 1 && j == nt - 1) break;
      if (i == ns - 1) {
        ++j;
      } else if (j == nt - 1) {
        ++i;
      } else if (ra(i) <= rb(j)) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const int num_nodes = ns + nt;
  Eigen::VectorXd u(ns), v(nt);
  std::vector<std::vector<int>> adj(num_nodes);
  std::vector<int> order(num_nodes), par_arc(num_nodes), par_node(num_nodes);
  std::vector<char> seen(num_nodes);

  auto rebuild_adjacency = [&]() {
    for (auto& lst : adj) lst.clear();
    for (int k = 0; k < static_cast<int>(arcs.size()); ++k) {
      adj[arcs[k].i].push_back(k);
      adj[ns + arcs[k].j].push_back(k);
    }
  };

  auto compute_duals = [&]() {
    std::fill(seen.begin(), seen.end(), 0);
    int head = 0, tail = 0;
    order[tail++] = 0;
    seen[0] = 1;
    u(0) = 0.0;
    while (head < tail) {
      int node = order[head++];
      for (int k : adj[node]) {
        const Arc& arc = arcs[k];
        int other = (node == arc.i) ? ns + arc.j : arc.i;
        if (seen[other]) continue;
        seen[other] = 1;
        if (other >= ns)
          v(other - ns) = C(arc.i, arc.j) - u(arc.i);
        else
          u(other) = C(arc.i, arc.j) - v(arc.j);
        order[tail++] = other;
      }
    }
  };

  // Path from source node `from` to target node `to` through the basis tree.
  auto tree_path = [&](int from, int to) {
    std::fill(seen.begin(), seen.end(), 0);
    int head = 0, tail = 0;
    order[tail++] = from;
    seen[from] = 1;
    par_arc[from] = -1;
    while (head < tail) {
      int node = order[head++];
      if (node == to) break;
      for (int k : adj[node]) {
        const Arc& arc = arcs[k];
        int other = (node == arc.i) ? ns + arc.j : arc.i;
        if (seen[other]) continue;
        seen[other] = 1;
        par_arc[other] = k;
        par_node[other] = node;
        order[tail++] = other;
      }
    }
    std::vector<int> path;  // arc ids from `to` back to `from`
    for (int node = to; node != from; node = par_node[node])
      path.push_back(par_arc[node]);
    return path;
  };

  const int bland_threshold = 10 * num_nodes + 2000;
  const int max_iterations = 400000;
  int iterations = 0;

  while (true) {
    rebuild_adjacency();
    compute_duals();

    int pi = -1, pj = -1;
    if (iterations < bland_threshold) {
      double best = -kOptTol;
      for (int i = 0; i < ns; ++i) {
        for (int j = 0; j < nt; ++j) {
          double r = C(i, j) - u(i) - v(j);
          if (r < best) {
            best = r;
            pi = i;
            pj = j;
          }
        }
      }
    } else {
      for (int i = 0; i < ns && pi < 0; ++i)
        for (int j = 0; j < nt; ++j)
          if (C(i, j) - u(i) - v(j) < -kOptTol) {
            pi = i;
            pj = j;
            break;
          }
    }
    if (pi < 0) break;  // optimal
    if (++iterations > max_iterations)
      throw std::runtime_error("transport_simplex: pivot limit exceeded");

    // Arcs from the entering target node back to the entering source node;
    // alternating signs starting with "-" next to the entering arc.
    std::vector<int> path = tree_path(pi, ns + pj);
    double theta = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < path.size(); k += 2)
      theta = std::min(theta, arcs[path[k]].flow);
    int leaving = -1;
    for (size_t k = 0; k < path.size(); k += 2) {
      const Arc& cand = arcs[path[k]];
      if (cand.flow != theta) continue;
      if (leaving < 0 || cand.i < arcs[leaving].i ||
          (cand.i == arcs[leaving].i && cand.j < arcs[leaving].j))
        leaving = path[k];
    }
    for (size_t k = 0; k < path.size(); ++k)
      arcs[path[k]].flow += (k % 2 == 0) ? -theta : theta;
    arcs[leaving] = Arc{pi, pj, theta};
  }

  TransportSimplexResult out;
  out.iterations = iterations;
  out.plan = Eigen::MatrixXd::Zero(n, m);
  out.cost = 0.0;
  for (const Arc& arc : arcs) {
    double f = std::max(arc.flow, 0.0);
    out.plan(sa[arc.i], sb[arc.j]) = f;
    out.cost += f * C(arc.i, arc.j);
  }

  // Duals on the support come straight from the final basis; off-support
  // entries are c-transform extensions, which keeps u(i) + v(j) <= cost(i,j)
  // valid at every pair without disturbing the support values.
  out.u.resize(n);
  out.v.resize(m);
  std::vector<char> in_sa(n, 0), in_sb(m, 0);
  for (int i = 0; i < ns; ++i) {
    in_sa[sa[i]] = 1;
    out.u(sa[i]) = u(i);
  }
  for (int j = 0; j < nt; ++j) {
    in_sb[sb[j]] = 1;
    out.v(sb[j]) = v(j);
  }
  for (int j = 0; j < m; ++j) {
    if (in_sb[j]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ns; ++i)
      best = std::min(best, cost(sa[i], j) - u(i));
    out.v(j) = best;
  }
  for (int i = 0; i < n; ++i) {
    if (in_sa[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) best = std::min(best, cost(i, j) - out.v(j));
    out.u(i) = best;
  }
  return out;
}

}  // namespace w2w
