#pragma once

#include "skel/core.hpp"
#include "skel/optim.hpp"
#include "skel/parallel.hpp"
#include "skel/voxel.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <vector>

namespace skel {

// A candidate joint: position in normalized [0,1]^3 coordinates plus an
// intensity in [0,1].
struct Keypoint {
    Vec3 mu = Vec3::Zero();
    double alpha = 0.0;
};

// K keypoints per frame, frame order matching the voxel sequence.
struct KeypointTracks {
    int K = 0;
    int T = 0;
    std::vector<std::vector<Keypoint>> frames;  // T x K

    const Vec3& position(int k, int t) const { return frames[t][k].mu; }
    double alpha(int k, int t) const { return frames[t][k].alpha; }

    std::vector<Vec3> track(int k) const {
        std::vector<Vec3> out(T);
        for (int t = 0; t < T; ++t) out[t] = frames[t][k].mu;
        return out;
    }
};

struct Heatmap {
    std::array<int, 3> resolution{0, 0, 0};
    std::vector<double> values;  // x-fastest, all >= 0

    std::size_t cell_count() const { return values.size(); }
    Vec3 cell_center(std::size_t i) const {
        const int gx = resolution[0], gy = resolution[1];
        const int x = static_cast<int>(i % gx);
        const int y = static_cast<int>((i / gx) % gy);
        const int z = static_cast<int>(i / (static_cast<std::size_t>(gx) * gy));
        return Vec3((x + 0.5) / resolution[0], (y + 0.5) / resolution[1],
                    (z + 0.5) / resolution[2]);
    }
};

struct KeypointConfig {
    int count = 24;              // K
    double sigma_g = 1.5;        // Gaussian width in cell units
    double sigma_s = 1250.0;     // separation scale in normalized units
    double lambda_vol = 10.0;
    double lambda_sparse = 5.0;
    double lambda_sep = 0.1;
    double lambda_smooth = -1.0;  // < 0: resolved to 0.1 * lambda_vol
    int max_iterations = 300;
    double initial_step = 0.05;
    double backtrack_factor = 0.5;
    std::uint64_t seed = 0;

    double smooth_weight() const {
        return lambda_smooth < 0.0 ? 0.1 * lambda_vol : lambda_smooth;
    }
};

// Gaussian bump discretized on the grid. mu is in normalized coordinates;
// sigma is measured in cell units, so distances are taken between cell
// centers on the integer lattice.
inline Heatmap gaussian_grid(const Vec3& mu, double sigma_g, const std::array<int, 3>& resolution) {
    if (!(sigma_g > 0.0)) throw input_error("sigma_g must be positive");
    Heatmap map;
    map.resolution = resolution;
    map.values.resize(static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2]);
    const Vec3 mu_cells(mu[0] * resolution[0], mu[1] * resolution[1], mu[2] * resolution[2]);
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma_g * sigma_g);
    std::size_t i = 0;
    for (int z = 0; z < resolution[2]; ++z) {
        for (int y = 0; y < resolution[1]; ++y) {
            for (int x = 0; x < resolution[0]; ++x, ++i) {
                const double dx = (x + 0.5) - mu_cells[0];
                const double dy = (y + 0.5) - mu_cells[1];
                const double dz = (z + 0.5) - mu_cells[2];
                map.values[i] = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_two_sigma_sq);
            }
        }
    }
    return map;
}

// Expected cell center under the mass-normalized heatmap; alpha is the peak
// value clamped to [0,1]. A heatmap with no mass yields the grid centroid
// with alpha 0, which callers can treat as a degenerate-detection flag.
inline Keypoint soft_argmax(const Heatmap& map) {
    double total = 0.0;
    double peak = 0.0;
    for (double v : map.values) {
        total += v;
        peak = std::max(peak, v);
    }
    Keypoint kp;
    if (total <= 0.0) {
        kp.mu = Vec3(0.5, 0.5, 0.5);
        kp.alpha = 0.0;
        return kp;
    }
    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < map.cell_count(); ++i) {
        if (map.values[i] != 0.0) mean += map.values[i] * map.cell_center(i);
    }
    kp.mu = mean / total;
    kp.alpha = std::clamp(peak, 0.0, 1.0);
    return kp;
}

// Mean over frames of the one-directional squared Chamfer distance from the
// occupied points to the keypoints. Ties in the nearest-keypoint assignment
// break toward the lowest keypoint index; the gradient uses that assignment.
//
// positions: T x K, frames: T point frames in the same coordinate system.
// If grad is non-null it is resized to match positions.
inline double volume_fitting_loss(const std::vector<std::vector<Vec3>>& positions,
                                  const std::vector<PointFrame>& frames,
                                  std::vector<std::vector<Vec3>>* grad = nullptr) {
    const int T = static_cast<int>(positions.size());
    if (T == 0 || static_cast<int>(frames.size()) != T)
        throw input_error("positions and frames must have the same frame count");
    const int K = static_cast<int>(positions[0].size());
    for (const auto& f : frames)
        if (f.empty()) throw input_error("empty frame");

    if (grad) {
        grad->assign(T, std::vector<Vec3>(K, Vec3::Zero()));
    }
    std::vector<double> frame_loss(T, 0.0);
    par::parallel_for(T, [&](std::size_t t) {
        const auto& kps = positions[t];
        const double point_scale = 1.0 / static_cast<double>(frames[t].points.size());
        double acc = 0.0;
        for (const Vec3& p : frames[t].points) {
            int best = 0;
            double best_d = (p - kps[0]).squaredNorm();
            for (int k = 1; k < K; ++k) {
                const double d = (p - kps[k]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            acc += best_d;
            if (grad) (*grad)[t][best] += 2.0 * (kps[best] - p) * point_scale / T;
        }
        frame_loss[t] = acc * point_scale;
    });
    double loss = 0.0;
    for (double v : frame_loss) loss += v;
    return loss / T;
}

// Mean entrywise L1 mass of the heatmaps. Values are non-negative by the
// Heatmap invariant, so this is a plain sum.
inline double sparsity_loss(const std::vector<Heatmap>& maps) {
    if (maps.empty()) return 0.0;
    double total = 0.0;
    for (const auto& m : maps)
        for (double v : m.values) total += std::abs(v);
    return total / static_cast<double>(maps.size());
}

// Pairwise Gaussian repulsion between temporally centered trajectories.
// positions: T x K. Gradient (if requested) is with respect to the raw
// positions, including the centering term.
inline double separation_loss(const std::vector<std::vector<Vec3>>& positions, double sigma_s,
                              std::vector<std::vector<Vec3>>* grad = nullptr) {
    const int T = static_cast<int>(positions.size());
    if (T == 0) throw input_error("separation_loss requires at least one frame");
    const int K = static_cast<int>(positions[0].size());
    if (K < 2) throw input_error("separation_loss requires K >= 2");

    std::vector<Vec3> mean(K, Vec3::Zero());
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) mean[k] += positions[t][k];
    for (int k = 0; k < K; ++k) mean[k] /= T;

    const double norm = 1.0 / (static_cast<double>(T) * K * (K - 1));
    double loss = 0.0;
    // Gradient with respect to the centered trajectories, folded back through
    // the centering map at the end.
    std::vector<std::vector<Vec3>> g_centered;
    if (grad) g_centered.assign(T, std::vector<Vec3>(K, Vec3::Zero()));

    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            const Vec3 sk = positions[t][k] - mean[k];
            for (int k2 = 0; k2 < K; ++k2) {
                if (k2 == k) continue;
                const Vec3 d = sk - (positions[t][k2] - mean[k2]);
                const double e = std::exp(-sigma_s * d.squaredNorm());
                loss += e;
                if (grad) g_centered[t][k] += norm * e * (-sigma_s) * 2.0 * d;
            }
        }
    }

    if (grad) {
        grad->assign(T, std::vector<Vec3>(K, Vec3::Zero()));
        std::vector<Vec3> column_sum(K, Vec3::Zero());
        for (int t = 0; t < T; ++t)
            for (int k = 0; k < K; ++k) column_sum[k] += g_centered[t][k];
        // g_centered holds only the ordered pairs where k comes first; the
        // transposed pairs contribute an equal amount, hence the factor 2.
        // The inner subtraction is the centering chain rule:
        // d s_{k,t} / d mu_{k,tau} = I * (delta_{t,tau} - 1/T).
        for (int t = 0; t < T; ++t)
            for (int k = 0; k < K; ++k)
                (*grad)[t][k] = 2.0 * (g_centered[t][k] - column_sum[k] / T);
    }
    return loss * norm;
}

namespace detail {

// Greedy farthest-point sampling over a point set; the start index is seeded.
inline std::vector<Vec3> farthest_point_sample(const std::vector<Vec3>& points, int count,
                                               std::uint64_t seed) {
    const int n = static_cast<int>(points.size());
    std::vector<Vec3> picked;
    picked.reserve(count);
    Rng rng(seed);
    int current = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
    picked.push_back(points[current]);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(picked.size()) < count) {
        int best = 0;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (points[i] - picked.back()).squaredNorm());
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        picked.push_back(points[best]);
    }
    return picked;
}

}  // namespace detail

// Places K keypoints per frame by direct minimization of
//   lambda_vol * L_vol + lambda_sep * L_sep + lambda_smooth * sum |mu_t - mu_{t-1}|^2
// over all frame positions, starting from farthest-point sampling on the
// first frame. All intensities are 1: no heatmaps exist on this path.
inline KeypointTracks optimize_keypoints(const VoxelSequence& voxels,
                                         const KeypointConfig& config) {
    const int T = voxels.frame_count();
    const int K = config.count;
    if (T < 1) throw input_error("empty voxel sequence");
    if (K < 1) throw config_error("keypoint count must be >= 1");

    // Occupied cell centers in normalized coordinates.
    std::vector<PointFrame> cloud(T);
    for (int t = 0; t < T; ++t) {
        const VoxelGrid& g = voxels.frames[t];
        for (std::size_t i = 0; i < g.cell_count(); ++i)
            if (g.occupied(i)) cloud[t].points.push_back(g.cell_center(i));
        if (cloud[t].empty()) throw input_error("empty frame");
    }

    std::vector<Vec3> init = detail::farthest_point_sample(
        cloud[0].points, std::min<int>(K, static_cast<int>(cloud[0].points.size())), config.seed);
    while (static_cast<int>(init.size()) < K)
        init.push_back(init[init.size() % std::max<std::size_t>(1, cloud[0].points.size())]);

    const double lambda_smooth = config.smooth_weight();
    const int dim = T * K * 3;
    Eigen::VectorXd x(dim);
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k)
            for (int a = 0; a < 3; ++a) x[(t * K + k) * 3 + a] = init[k][a];

    std::vector<std::vector<Vec3>> positions(T, std::vector<Vec3>(K));
    std::vector<std::vector<Vec3>> grad_vol, grad_sep;
    const auto unpack = [&](const Eigen::VectorXd& v) {
        for (int t = 0; t < T; ++t)
            for (int k = 0; k < K; ++k)
                positions[t][k] = Vec3(v[(t * K + k) * 3], v[(t * K + k) * 3 + 1],
                                       v[(t * K + k) * 3 + 2]);
    };

    const auto objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) -> double {
        unpack(v);
        double value = config.lambda_vol *
                       volume_fitting_loss(positions, cloud, grad ? &grad_vol : nullptr);
        if (K >= 2 && config.lambda_sep > 0.0)
            value += config.lambda_sep *
                     separation_loss(positions, config.sigma_s, grad ? &grad_sep : nullptr);
        for (int t = 1; t < T; ++t)
            for (int k = 0; k < K; ++k)
                value += lambda_smooth * (positions[t][k] - positions[t - 1][k]).squaredNorm();

        if (grad) {
            grad->setZero(dim);
            for (int t = 0; t < T; ++t) {
                for (int k = 0; k < K; ++k) {
                    Vec3 g = config.lambda_vol * grad_vol[t][k];
                    if (K >= 2 && config.lambda_sep > 0.0)
                        g += config.lambda_sep * grad_sep[t][k];
                    if (t > 0)
                        g += lambda_smooth * 2.0 * (positions[t][k] - positions[t - 1][k]);
                    if (t + 1 < T)
                        g -= lambda_smooth * 2.0 * (positions[t + 1][k] - positions[t][k]);
                    for (int a = 0; a < 3; ++a) (*grad)[(t * K + k) * 3 + a] = g[a];
                }
            }
        }
        return value;
    };

    optim::Options opt;
    opt.max_iterations = config.max_iterations;
    opt.initial_step = config.initial_step;
    opt.backtrack_factor = config.backtrack_factor;
    optim::minimize(x, objective, opt);

    unpack(x);
    KeypointTracks tracks;
    tracks.K = K;
    tracks.T = T;
    tracks.frames.assign(T, std::vector<Keypoint>(K));
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) tracks.frames[t][k] = Keypoint{positions[t][k], 1.0};
    return tracks;
}

}  // namespace skel
