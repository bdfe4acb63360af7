#pragma once

#include "skel/core.hpp"
#include "skel/keypoints.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <queue>
#include <vector>

namespace skel {

// Symmetric boolean adjacency with a zero diagonal.
using AdjacencyBinary = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Pairwise hop counts; unreachable pairs carry the sentinel below.
using HopDistances = Eigen::MatrixXd;
inline constexpr double kUnreachableHops = 1e4;

// Affinity floor when mapping edge affinities to lengths; keeps -ln finite.
inline constexpr double kAffinityFloor = 1e-12;

// Rooted tree with canonical unit offsets and first-frame scaled offsets.
struct SkeletonTree {
    int K = 0;
    int root = 0;
    std::vector<int> parents;          // parents[root] == root
    std::vector<Vec3> unit_offsets;    // zero for the root
    std::vector<Vec3> offsets;         // unit offset * first-frame bone length
    std::vector<double> node_intensities;

    // Children lists in index order.
    std::vector<std::vector<int>> children() const {
        std::vector<std::vector<int>> out(K);
        for (int k = 0; k < K; ++k)
            if (k != root) out[parents[k]].push_back(k);
        return out;
    }

    // Parent-before-child traversal order starting at the root.
    std::vector<int> topological_order() const {
        const auto kids = children();
        std::vector<int> order;
        order.reserve(K);
        std::deque<int> frontier{root};
        while (!frontier.empty()) {
            const int k = frontier.front();
            frontier.pop_front();
            order.push_back(k);
            for (int c : kids[k]) frontier.push_back(c);
        }
        return order;
    }

    // Throws unless parents encode a single tree rooted at root.
    void validate() const {
        if (K < 1 || static_cast<int>(parents.size()) != K) throw input_error("not a tree");
        if (root < 0 || root >= K || parents[root] != root) throw input_error("not a tree");
        for (int k = 0; k < K; ++k) {
            if (parents[k] < 0 || parents[k] >= K) throw input_error("not a tree");
            if (k != root && parents[k] == k) throw input_error("not a tree");
            int node = k;
            for (int hops = 0; node != root; ++hops) {
                if (hops > K) throw input_error("not a tree");
                node = parents[node];
            }
        }
    }

    // Longest root-to-leaf path length, a scale reference for fit errors.
    double extent() const {
        double longest = 0.0;
        for (int k = 0; k < K; ++k) {
            double reach = 0.0;
            int node = k;
            while (node != root) {
                reach += offsets[node].norm();
                node = parents[node];
            }
            longest = std::max(longest, reach);
        }
        return longest;
    }
};

// Per-row top-N (ties to the lower column index), then OR-symmetrization.
inline AdjacencyBinary binarize_affinity(const Eigen::MatrixXd& A, int neighbor_count) {
    const int K = static_cast<int>(A.rows());
    if (K < 2 || A.cols() != K) throw input_error("affinity matrix must be K x K with K >= 2");
    if (neighbor_count < 1 || neighbor_count >= K)
        throw input_error("neighbor count must satisfy 1 <= N < K");

    AdjacencyBinary adj = AdjacencyBinary::Constant(K, K, false);
    std::vector<int> order(K);
    for (int i = 0; i < K; ++i) {
        order.clear();
        for (int j = 0; j < K; ++j)
            if (j != i) order.push_back(j);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return A(i, a) > A(i, b); });
        for (int s = 0; s < neighbor_count; ++s) {
            adj(i, order[s]) = true;
            adj(order[s], i) = true;
        }
    }
    return adj;
}

// Unweighted shortest-path hop counts via BFS from every node.
inline HopDistances all_pairs_hops(const AdjacencyBinary& adj) {
    const int K = static_cast<int>(adj.rows());
    HopDistances dist = HopDistances::Constant(K, K, kUnreachableHops);
    std::vector<int> frontier, next;
    for (int s = 0; s < K; ++s) {
        dist(s, s) = 0.0;
        frontier.assign(1, s);
        double hops = 0.0;
        while (!frontier.empty()) {
            hops += 1.0;
            next.clear();
            for (int u : frontier)
                for (int v = 0; v < K; ++v)
                    if (adj(u, v) && dist(s, v) == kUnreachableHops) {
                        dist(s, v) = hops;
                        next.push_back(v);
                    }
            frontier.swap(next);
        }
    }
    return dist;
}

// Node with the smallest distance sum; ties go to the lowest index.
inline int select_root(const HopDistances& dist) {
    int best = 0;
    double best_sum = dist.row(0).sum();
    for (int i = 1; i < dist.rows(); ++i) {
        const double s = dist.row(i).sum();
        if (s < best_sum) {
            best_sum = s;
            best = i;
        }
    }
    return best;
}

namespace detail {

// Component id per node under the given adjacency.
inline std::vector<int> components(const AdjacencyBinary& adj) {
    const int K = static_cast<int>(adj.rows());
    std::vector<int> comp(K, -1);
    int next_id = 0;
    for (int s = 0; s < K; ++s) {
        if (comp[s] >= 0) continue;
        comp[s] = next_id;
        std::vector<int> stack{s};
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < K; ++v)
                if (adj(u, v) && comp[v] < 0) {
                    comp[v] = next_id;
                    stack.push_back(v);
                }
        }
        ++next_id;
    }
    return comp;
}

}  // namespace detail

struct ConnectResult {
    AdjacencyBinary adjacency;
    HopDistances distances;
    int root = 0;
    int added_edges = 0;
};

// Bridges disconnected components: repeatedly links the current root to the
// pseudo-root of another component (the outside node with the smallest
// distance sum), then recomputes distances and the root.
inline ConnectResult ensure_connected(AdjacencyBinary adj, HopDistances dist, int root) {
    ConnectResult out;
    while (true) {
        const std::vector<int> comp = detail::components(adj);
        const int root_comp = comp[root];
        int bridge = -1;
        double best_sum = std::numeric_limits<double>::infinity();
        for (int i = 0; i < static_cast<int>(comp.size()); ++i) {
            if (comp[i] == root_comp) continue;
            const double s = dist.row(i).sum();
            if (s < best_sum) {
                best_sum = s;
                bridge = i;
            }
        }
        if (bridge < 0) break;  // connected
        adj(root, bridge) = true;
        adj(bridge, root) = true;
        dist = all_pairs_hops(adj);
        root = select_root(dist);
        ++out.added_edges;
    }
    out.adjacency = std::move(adj);
    out.distances = std::move(dist);
    out.root = root;
    return out;
}

struct RefineResult {
    Eigen::MatrixXd weighted_distances;
    std::vector<int> rank;  // dense, root has rank 1
};

// Replaces unit edge lengths with -ln of the edge affinity (symmetrized by
// max, clamped away from zero) and reruns shortest paths, then ranks nodes
// by their weighted distance to the root. Distances equal within a relative
// tolerance of 1e-9 share a rank.
inline RefineResult refine_graph(const Eigen::MatrixXd& A, const AdjacencyBinary& adj, int root) {
    const int K = static_cast<int>(adj.rows());
    const std::vector<int> comp = detail::components(adj);
    for (int i = 0; i < K; ++i)
        if (comp[i] != comp[root]) throw input_error("refine_graph requires a connected graph");

    Eigen::MatrixXd weight = Eigen::MatrixXd::Constant(K, K, -1.0);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
            if (adj(i, j)) {
                const double a =
                    std::clamp(std::max(A(i, j), A(j, i)), kAffinityFloor, 1.0);
                weight(i, j) = -std::log(a);
            }

    RefineResult out;
    out.weighted_distances =
        Eigen::MatrixXd::Constant(K, K, std::numeric_limits<double>::infinity());
    for (int s = 0; s < K; ++s) {
        auto& d = out.weighted_distances;
        d(s, s) = 0.0;
        using Entry = std::pair<double, int>;
        std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue;
        queue.push({0.0, s});
        while (!queue.empty()) {
            const auto [du, u] = queue.top();
            queue.pop();
            if (du > d(s, u)) continue;
            for (int v = 0; v < K; ++v) {
                if (!adj(u, v)) continue;
                const double cand = du + weight(u, v);
                if (cand < d(s, v)) {
                    d(s, v) = cand;
                    queue.push({cand, v});
                }
            }
        }
    }

    // Dense ranking of root-distances with tolerance clustering; each cluster
    // is compared against its first (anchor) element to avoid chaining.
    std::vector<int> order(K);
    for (int i = 0; i < K; ++i) order[i] = i;
    const auto& droot = out.weighted_distances;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return droot(root, a) < droot(root, b); });
    out.rank.assign(K, 0);
    int rank = 1;
    double anchor = droot(root, order[0]);
    out.rank[order[0]] = rank;
    for (int s = 1; s < K; ++s) {
        const double d = droot(root, order[s]);
        if (d - anchor > 1e-9 * std::max(std::abs(d), std::abs(anchor))) {
            ++rank;
            anchor = d;
        }
        out.rank[order[s]] = rank;
    }
    return out;
}

// Parent assignment: each non-root node takes the neighbor closer to the
// root with the smallest rank gap. A same-rank neighbor j steals the slot
// when their best shared higher neighbor l prefers j (a_lj > a_li); the
// first qualifying j in index order wins.
inline std::vector<int> assign_parents(const std::vector<int>& rank, const AdjacencyBinary& adj,
                                       const Eigen::MatrixXd& A, int root) {
    const int K = static_cast<int>(adj.rows());
    std::vector<int> parents(K, -1);
    const auto higher_neighbors = [&](int i) {
        std::vector<int> out;
        for (int j = 0; j < K; ++j)
            if (adj(i, j) && rank[j] < rank[i]) out.push_back(j);
        return out;
    };

    for (int i = 0; i < K; ++i) {
        if (i == root) {
            parents[i] = root;
            continue;
        }
        const std::vector<int> higher = higher_neighbors(i);
        if (!higher.empty()) {
            int best = higher[0];
            for (int j : higher)
                if (rank[i] - rank[j] < rank[i] - rank[best]) best = j;
            parents[i] = best;
        }
        for (int j = 0; j < K; ++j) {
            if (!adj(i, j) || rank[j] != rank[i] || j == i) continue;
            const std::vector<int> higher_j = higher_neighbors(j);
            int shared_best = -1;
            int shared_gap = -1;
            for (int l : higher) {
                if (std::find(higher_j.begin(), higher_j.end(), l) == higher_j.end()) continue;
                const int gap = rank[i] - rank[l];
                if (gap > shared_gap) {
                    shared_gap = gap;
                    shared_best = l;
                }
            }
            if (shared_best < 0) continue;
            if (A(shared_best, j) > A(shared_best, i)) {
                parents[i] = j;
                break;
            }
        }
        if (parents[i] < 0) throw numeric_error("rank inversion");
    }
    return parents;
}

struct SkeletonConfig {
    int neighbor_count = 2;
    bool randomize_offsets = true;  // false: use observed first-frame directions
    std::uint64_t seed = 0;
};

// Full extraction: binarize, hop distances, root selection, connection,
// affinity refinement, parent assignment, then offsets scaled by the
// first-frame bone lengths.
inline SkeletonTree extract_skeleton(const Eigen::MatrixXd& A, const KeypointTracks& tracks,
                                     const SkeletonConfig& config) {
    const int K = tracks.K;
    if (K < 2) throw input_error("extract_skeleton requires K >= 2");
    if (tracks.T < 1) throw input_error("extract_skeleton requires at least one frame");
    if (A.rows() != K || A.cols() != K) throw input_error("affinity matrix shape mismatch");

    AdjacencyBinary adj = binarize_affinity(A, config.neighbor_count);
    HopDistances hops = all_pairs_hops(adj);
    int root = select_root(hops);
    ConnectResult connected = ensure_connected(std::move(adj), std::move(hops), root);
    const RefineResult refined = refine_graph(A, connected.adjacency, connected.root);

    SkeletonTree tree;
    tree.K = K;
    tree.root = connected.root;
    tree.parents = assign_parents(refined.rank, connected.adjacency, A, connected.root);
    tree.unit_offsets.assign(K, Vec3::Zero());
    tree.offsets.assign(K, Vec3::Zero());
    tree.node_intensities.assign(K, 0.0);

    Rng rng(config.seed);
    for (int k = 0; k < K; ++k) {
        for (int t = 0; t < tracks.T; ++t) tree.node_intensities[k] += tracks.alpha(k, t);
        tree.node_intensities[k] /= tracks.T;
        if (k == tree.root) continue;
        const Vec3 bone = tracks.position(k, 0) - tracks.position(tree.parents[k], 0);
        const double length = bone.norm();
        if (config.randomize_offsets) {
            tree.unit_offsets[k] = rng.unit_vector();
        } else {
            tree.unit_offsets[k] = length > 1e-12 ? Vec3(bone / length) : Vec3(1.0, 0.0, 0.0);
        }
        tree.offsets[k] = tree.unit_offsets[k] * length;
    }
    tree.validate();
    return tree;
}

}  // namespace skel
