#pragma once

#include "skel/core.hpp"
#include "skel/keypoints.hpp"
#include "skel/optim.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <utility>
#include <vector>

namespace skel {

// N decomposed K x K affinity matrices plus their elementwise-max combination.
struct AffinitySet {
    int N = 0;
    int K = 0;
    std::vector<Eigen::MatrixXd> matrices;
    Eigen::MatrixXd combined;
    bool static_warning = false;  // set when the input tracks never move
};

struct AffinityConfig {
    int neighbor_count = 2;  // N, must stay below K
    double lambda_traj = 1.0;
    double lambda_local = 0.001;
    double lambda_time = 1.0;
    double lambda_complex = 0.01;
    double velocity_epsilon = 1e-8;
    int max_iterations = 300;
    double initial_step = 0.5;
    std::uint64_t seed = 0;
};

namespace detail {

inline double cosine_or_zero(const Vec3& a, const Vec3& b, double eps) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na < eps || nb < eps) return 0.0;
    return a.dot(b) / (na * nb);
}

// Forward-difference velocities and second-difference accelerations, both
// padded at the tail by repeating the last defined value so every frame
// carries one of each.
inline void track_derivatives(const std::vector<Vec3>& track, std::vector<Vec3>& vel,
                              std::vector<Vec3>& acc) {
    const int T = static_cast<int>(track.size());
    vel.resize(T);
    acc.resize(T);
    for (int t = 0; t + 1 < T; ++t) vel[t] = track[t + 1] - track[t];
    vel[T - 1] = vel[T - 2];
    for (int t = 0; t + 2 < T; ++t) acc[t] = track[t + 2] - 2.0 * track[t + 1] + track[t];
    acc[T - 2] = acc[T - 3];
    acc[T - 1] = acc[T - 3];
}

}  // namespace detail

// Motion-path dissimilarity per frame:
//   C_t = 1/2 - 1/4 * (cos(v_a, v_b) + cos(acc_a, acc_b)),
// in [0, 1]. Velocities are forward differences, accelerations are second
// differences; a vector with norm below eps contributes cosine 0.
inline std::vector<double> trajectory_cost(const std::vector<Vec3>& track_a,
                                           const std::vector<Vec3>& track_b,
                                           double velocity_epsilon = 1e-8) {
    const int T = static_cast<int>(track_a.size());
    if (T < 3 || static_cast<int>(track_b.size()) != T)
        throw input_error("trajectory_cost requires two tracks with T >= 3");

    std::vector<Vec3> va, vb, aa, ab;
    detail::track_derivatives(track_a, va, aa);
    detail::track_derivatives(track_b, vb, ab);

    std::vector<double> cost(T);
    for (int t = 0; t < T; ++t) {
        const double cv = detail::cosine_or_zero(va[t], vb[t], velocity_epsilon);
        const double ca = detail::cosine_or_zero(aa[t], ab[t], velocity_epsilon);
        cost[t] = 0.5 - 0.25 * (cv + ca);
    }
    return cost;
}

namespace detail {

// C values for every ordered keypoint pair; C[k][k2][t].
inline std::vector<std::vector<std::vector<double>>> pairwise_trajectory_cost(
    const KeypointTracks& tracks, double velocity_epsilon) {
    const int K = tracks.K;
    std::vector<std::vector<Vec3>> per_track(K);
    for (int k = 0; k < K; ++k) per_track[k] = tracks.track(k);
    std::vector<std::vector<std::vector<double>>> cost(
        K, std::vector<std::vector<double>>(K));
    for (int k = 0; k < K; ++k)
        for (int k2 = 0; k2 < K; ++k2)
            cost[k][k2] = trajectory_cost(per_track[k], per_track[k2], velocity_epsilon);
    return cost;
}

}  // namespace detail

// (1/TK^2) sum_t sum_k alpha_{k,t} sum_{k'} a_{kk'} C_t(k, k'). Intensities
// are treated as constants; the gradient is with respect to the A entries.
inline double graph_trajectory_loss(const Eigen::MatrixXd& A, const KeypointTracks& tracks,
                                    double velocity_epsilon = 1e-8,
                                    Eigen::MatrixXd* grad = nullptr) {
    const int K = tracks.K;
    const int T = tracks.T;
    if (A.rows() != K || A.cols() != K) throw input_error("affinity matrix shape mismatch");
    const auto cost = detail::pairwise_trajectory_cost(tracks, velocity_epsilon);

    const double scale = 1.0 / (static_cast<double>(T) * K * K);
    if (grad) grad->setZero(K, K);
    double loss = 0.0;
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) {
            const double alpha = tracks.alpha(k, t);
            if (alpha == 0.0) continue;
            for (int k2 = 0; k2 < K; ++k2) {
                loss += alpha * A(k, k2) * cost[k][k2][t];
                if (grad) (*grad)(k, k2) += scale * alpha * cost[k][k2][t];
            }
        }
    return loss * scale;
}

// L_local penalizes affinity on distant pairs; L_time penalizes affinity on
// pairs whose distance varies over time (squared deviation from the temporal
// mean). Returns {L_local, L_time}.
inline std::pair<double, double> consistency_losses(const Eigen::MatrixXd& A,
                                                    const KeypointTracks& tracks,
                                                    Eigen::MatrixXd* grad_local = nullptr,
                                                    Eigen::MatrixXd* grad_time = nullptr) {
    const int K = tracks.K;
    const int T = tracks.T;
    if (T < 2) throw input_error("consistency_losses requires T >= 2");
    if (A.rows() != K || A.cols() != K) throw input_error("affinity matrix shape mismatch");

    // Pairwise distances and their temporal means.
    std::vector<Eigen::MatrixXd> dist(T, Eigen::MatrixXd(K, K));
    Eigen::MatrixXd mean_dist = Eigen::MatrixXd::Zero(K, K);
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k)
            for (int k2 = 0; k2 < K; ++k2)
                dist[t](k, k2) = (tracks.position(k, t) - tracks.position(k2, t)).norm();
        mean_dist += dist[t];
    }
    mean_dist /= T;

    const double scale = 1.0 / (static_cast<double>(T) * K * K);
    if (grad_local) grad_local->setZero(K, K);
    if (grad_time) grad_time->setZero(K, K);
    double local = 0.0, time = 0.0;
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) {
            const double alpha = tracks.alpha(k, t);
            if (alpha == 0.0) continue;
            for (int k2 = 0; k2 < K; ++k2) {
                const double l = dist[t](k, k2);
                const double dev = l - mean_dist(k, k2);
                local += alpha * A(k, k2) * l;
                time += alpha * A(k, k2) * dev * dev;
                if (grad_local) (*grad_local)(k, k2) += scale * alpha * l;
                if (grad_time) (*grad_time)(k, k2) += scale * alpha * dev * dev;
            }
        }
    return {local * scale, time * scale};
}

// Sum over ordered pairs n != n' of the Frobenius norm of A_n (.) A_n'.
inline double complexity_loss(const std::vector<Eigen::MatrixXd>& matrices,
                              std::vector<Eigen::MatrixXd>* grads = nullptr) {
    const int N = static_cast<int>(matrices.size());
    if (N < 1) throw input_error("complexity_loss requires N >= 1");
    if (grads) {
        grads->assign(N, Eigen::MatrixXd::Zero(matrices[0].rows(), matrices[0].cols()));
    }
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        for (int m = n + 1; m < N; ++m) {
            const Eigen::MatrixXd had = matrices[n].cwiseProduct(matrices[m]);
            const double norm = had.norm();
            loss += 2.0 * norm;  // both ordered pairs
            if (grads && norm > 0.0) {
                (*grads)[n] += 2.0 * had.cwiseProduct(matrices[m]) / norm;
                (*grads)[m] += 2.0 * had.cwiseProduct(matrices[n]) / norm;
            }
        }
    }
    return loss;
}

// Elementwise max across the decomposed matrices.
inline Eigen::MatrixXd combine_affinity(const std::vector<Eigen::MatrixXd>& matrices) {
    if (matrices.empty()) throw input_error("combine_affinity requires at least one matrix");
    Eigen::MatrixXd combined = matrices[0];
    for (std::size_t n = 1; n < matrices.size(); ++n) {
        if (matrices[n].rows() != combined.rows() || matrices[n].cols() != combined.cols())
            throw input_error("affinity matrix shape mismatch");
        combined = combined.cwiseMax(matrices[n]);
    }
    return combined;
}

// Regresses the decomposed affinity matrices against the graph losses.
// Each row of each A_n is a softmax over K-1 logits with the self-affinity
// fixed at 0, so rows stay positive and sum to 1 throughout.
inline AffinitySet optimize_affinity(const KeypointTracks& tracks, const AffinityConfig& config) {
    const int K = tracks.K;
    const int T = tracks.T;
    const int N = config.neighbor_count;
    if (K < 2) throw input_error("optimize_affinity requires K >= 2");
    if (T < 3) throw input_error("optimize_affinity requires T >= 3");
    if (N < 1 || N >= K) throw config_error("neighbor count must satisfy 1 <= N < K");

    bool any_motion = false;
    for (int k = 0; k < K && !any_motion; ++k)
        for (int t = 1; t < T && !any_motion; ++t)
            if ((tracks.position(k, t) - tracks.position(k, 0)).norm() > 1e-12)
                any_motion = true;

    // The three combined-matrix losses are linear in A, so their gradient is a
    // constant coefficient matrix that can be assembled once. Fully static
    // tracks carry no trajectory signal at all; they fall back to the
    // proximity-only objective and raise the warning flag.
    Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(K, K);
    {
        Eigen::MatrixXd g_traj(K, K), g_local(K, K), g_time(K, K);
        const Eigen::MatrixXd probe = Eigen::MatrixXd::Zero(K, K);
        graph_trajectory_loss(probe, tracks, config.velocity_epsilon, &g_traj);
        consistency_losses(probe, tracks, &g_local, &g_time);
        if (any_motion) {
            coeff = config.lambda_traj * g_traj + config.lambda_local * g_local +
                    config.lambda_time * g_time;
        } else {
            coeff = g_local;
        }
    }

    // Logits: n-major, then row, then the K-1 off-diagonal slots in column
    // order. Small seeded noise breaks the symmetry between the N matrices.
    const int row_dim = K - 1;
    const int dim = N * K * row_dim;
    Eigen::VectorXd logits(dim);
    {
        Rng rng(config.seed);
        for (int i = 0; i < dim; ++i) logits[i] = 0.01 * rng.normal();
    }

    std::vector<Eigen::MatrixXd> matrices(N, Eigen::MatrixXd::Zero(K, K));
    const auto unpack = [&](const Eigen::VectorXd& z) {
        for (int n = 0; n < N; ++n) {
            for (int i = 0; i < K; ++i) {
                const int base = (n * K + i) * row_dim;
                double row_max = -std::numeric_limits<double>::infinity();
                for (int s = 0; s < row_dim; ++s) row_max = std::max(row_max, z[base + s]);
                double denom = 0.0;
                for (int s = 0; s < row_dim; ++s) denom += std::exp(z[base + s] - row_max);
                int s = 0;
                for (int j = 0; j < K; ++j) {
                    if (j == i) {
                        matrices[n](i, j) = 0.0;
                        continue;
                    }
                    matrices[n](i, j) = std::exp(z[base + s] - row_max) / denom;
                    ++s;
                }
            }
        }
    };

    std::vector<Eigen::MatrixXd> grad_complex;
    const auto objective = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad) -> double {
        unpack(z);

        // Combined matrix with argmax bookkeeping for the subgradient.
        Eigen::MatrixXd combined = matrices[0];
        Eigen::MatrixXi arg = Eigen::MatrixXi::Zero(K, K);
        for (int n = 1; n < N; ++n)
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j)
                    if (matrices[n](i, j) > combined(i, j)) {
                        combined(i, j) = matrices[n](i, j);
                        arg(i, j) = n;
                    }

        double value = coeff.cwiseProduct(combined).sum();
        value += config.lambda_complex *
                 complexity_loss(matrices, grad ? &grad_complex : nullptr);

        if (grad) {
            grad->setZero(dim);
            std::vector<Eigen::MatrixXd> dA(N, Eigen::MatrixXd::Zero(K, K));
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j)
                    if (i != j) dA[arg(i, j)](i, j) += coeff(i, j);
            for (int n = 0; n < N; ++n) dA[n] += config.lambda_complex * grad_complex[n];

            // Softmax backward per row: dz_s = a_s * (dA_s - sum_j dA_j a_j).
            for (int n = 0; n < N; ++n) {
                for (int i = 0; i < K; ++i) {
                    const int base = (n * K + i) * row_dim;
                    double inner = 0.0;
                    for (int j = 0; j < K; ++j)
                        if (j != i) inner += dA[n](i, j) * matrices[n](i, j);
                    int s = 0;
                    for (int j = 0; j < K; ++j) {
                        if (j == i) continue;
                        (*grad)[base + s] = matrices[n](i, j) * (dA[n](i, j) - inner);
                        ++s;
                    }
                }
            }
        }
        return value;
    };

    optim::Options opt;
    opt.max_iterations = config.max_iterations;
    opt.initial_step = config.initial_step;
    optim::minimize(logits, objective, opt);

    unpack(logits);
    AffinitySet result;
    result.N = N;
    result.K = K;
    result.matrices = matrices;
    result.combined = combine_affinity(matrices);
    result.static_warning = !any_motion;
    return result;
}

}  // namespace skel
