#pragma once

#include "skel/core.hpp"
#include "skel/optim.hpp"
#include "skel/skeleton.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace skel {

// First two columns of a rotation matrix, before orthonormalization.
using Rotation6D = Eigen::Matrix<double, 6, 1>;

namespace detail {

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0;
    return m;
}

// Gram-Schmidt of the 6D representation. Returns false on degenerate input.
// When jacobian is non-null it receives dR/dp for the six parameters.
inline bool try_rot6d_to_matrix(const Rotation6D& r, Mat3& R,
                                std::array<Mat3, 6>* jacobian = nullptr) {
    const Vec3 a1 = r.head<3>();
    const Vec3 a2 = r.tail<3>();
    const double n1 = a1.norm();
    if (n1 <= 1e-9) return false;
    const Vec3 c1 = a1 / n1;
    const double s = c1.dot(a2);
    const Vec3 w = a2 - s * c1;
    const double n2 = w.norm();
    if (n2 <= 1e-9) return false;
    const Vec3 c2 = w / n2;
    const Vec3 c3 = c1.cross(c2);
    R.col(0) = c1;
    R.col(1) = c2;
    R.col(2) = c3;

    if (jacobian) {
        const Mat3 I = Mat3::Identity();
        const Mat3 D1 = (I - c1 * c1.transpose()) / n1;        // dc1/da1
        const Mat3 P2 = (I - c2 * c2.transpose()) / n2;        // dc2/dw
        const Mat3 dw_da1 = -(c1 * a2.transpose() + s * I) * D1;
        const Mat3 dw_da2 = I - c1 * c1.transpose();
        const Mat3 dc2_da1 = P2 * dw_da1;
        const Mat3 dc2_da2 = P2 * dw_da2;
        const Mat3 c1x = skew(c1);
        const Mat3 c2x = skew(c2);
        for (int p = 0; p < 3; ++p) {
            const Vec3 dc1 = D1.col(p);
            const Vec3 dc2 = dc2_da1.col(p);
            (*jacobian)[p].col(0) = dc1;
            (*jacobian)[p].col(1) = dc2;
            (*jacobian)[p].col(2) = -c2x * dc1 + c1x * dc2;
        }
        for (int p = 0; p < 3; ++p) {
            const Vec3 dc2 = dc2_da2.col(p);
            (*jacobian)[3 + p].col(0).setZero();
            (*jacobian)[3 + p].col(1) = dc2;
            (*jacobian)[3 + p].col(2) = c1x * dc2;
        }
    }
    return true;
}

}  // namespace detail

inline Mat3 rot6d_to_matrix(const Rotation6D& r) {
    Mat3 R;
    if (!detail::try_rot6d_to_matrix(r, R)) throw input_error("degenerate 6D rotation");
    return R;
}

inline Rotation6D matrix_to_rot6d(const Mat3& R) {
    Rotation6D r;
    r.head<3>() = R.col(0);
    r.tail<3>() = R.col(1);
    return r;
}

// One frame of skeletal state. The root's relative rotation is the global
// orientation; all others are local to their parent.
struct Pose {
    Vec3 root_translation = Vec3::Zero();
    std::vector<Mat3> relative_rotations;
    std::vector<double> intensities;

    static Pose identity(int k_count) {
        Pose p;
        p.relative_rotations.assign(k_count, Mat3::Identity());
        p.intensities.assign(k_count, 1.0);
        return p;
    }
};

struct MotionSequence {
    SkeletonTree skeleton;
    std::vector<Pose> poses;

    int frame_count() const { return static_cast<int>(poses.size()); }
};

// Accumulated world rotation and position per joint.
struct JointTransforms {
    std::vector<Mat3> rotations;
    std::vector<Vec3> positions;
};

// Chain rule over the tree: R_k = R_parent(k) * Rrel_k, and the joint sits a
// rotated offset away from its parent.
inline JointTransforms forward_kinematics_transforms(const SkeletonTree& tree, const Pose& pose) {
    tree.validate();
    if (static_cast<int>(pose.relative_rotations.size()) != tree.K)
        throw input_error("pose has wrong joint count");
    JointTransforms out;
    out.rotations.assign(tree.K, Mat3::Identity());
    out.positions.assign(tree.K, Vec3::Zero());
    for (int k : tree.topological_order()) {
        if (k == tree.root) {
            out.rotations[k] = pose.relative_rotations[k];
            out.positions[k] = pose.root_translation;
        } else {
            const int parent = tree.parents[k];
            out.rotations[k] = out.rotations[parent] * pose.relative_rotations[k];
            out.positions[k] = out.positions[parent] + out.rotations[k] * tree.offsets[k];
        }
    }
    return out;
}

inline std::vector<Vec3> forward_kinematics(const SkeletonTree& tree, const Pose& pose) {
    return forward_kinematics_transforms(tree, pose).positions;
}

struct FitSettings {
    int max_iterations = 500;
    double initial_step = 0.1;
};

struct FitResult {
    Pose pose;
    double objective = 0.0;  // weighted sum of squared joint errors
    int iterations = 0;
};

// Weighted position-matching objective over the fit parameter vector
// [root_translation (3), rot6d per joint (6K)]. Degenerate 6D blocks return
// +inf so a line search can reject them. Gradients are analytic through the
// rotation accumulation and the Gram-Schmidt map.
class FitObjective {
public:
    FitObjective(const SkeletonTree& tree, std::vector<Vec3> targets,
                 std::vector<double> weights)
        : tree_(tree),
          targets_(std::move(targets)),
          weights_(std::move(weights)),
          order_(tree.topological_order()),
          rel_(tree.K),
          acc_(tree.K),
          jac_(tree.K),
          mu_(tree.K) {}

    int dimension() const { return 3 + 6 * tree_.K; }

    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
        const int K = tree_.K;
        for (int k = 0; k < K; ++k) {
            if (!detail::try_rot6d_to_matrix(x.segment<6>(3 + 6 * k), rel_[k],
                                             grad ? &jac_[k] : nullptr))
                return std::numeric_limits<double>::infinity();
        }
        for (int k : order_) {
            if (k == tree_.root) {
                acc_[k] = rel_[k];
                mu_[k] = x.head<3>();
            } else {
                acc_[k] = acc_[tree_.parents[k]] * rel_[k];
                mu_[k] = mu_[tree_.parents[k]] + acc_[k] * tree_.offsets[k];
            }
        }
        double value = 0.0;
        for (int k = 0; k < K; ++k)
            value += weights_[k] * (mu_[k] - targets_[k]).squaredNorm();
        if (!grad) return value;

        // Reverse pass: subtree sums of residuals and residual-position outer
        // products, then per-joint Frobenius contraction with the 6D Jacobian.
        std::vector<Vec3> sum_g(K);
        std::vector<Mat3> sum_gmu(K);
        for (int k = 0; k < K; ++k) {
            const Vec3 g = 2.0 * weights_[k] * (mu_[k] - targets_[k]);
            sum_g[k] = g;
            sum_gmu[k] = g * mu_[k].transpose();
        }
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            const int k = *it;
            if (k == tree_.root) continue;
            sum_g[tree_.parents[k]] += sum_g[k];
            sum_gmu[tree_.parents[k]] += sum_gmu[k];
        }

        grad->setZero(dimension());
        grad->head<3>() = sum_g[tree_.root];
        for (int j = 0; j < K; ++j) {
            const Vec3 anchor = j == tree_.root ? mu_[j] : mu_[tree_.parents[j]];
            const Mat3 parent_rot =
                j == tree_.root ? Mat3::Identity() : Mat3(acc_[tree_.parents[j]]);
            const Mat3 B = sum_gmu[j] - sum_g[j] * anchor.transpose();
            const Mat3 M = parent_rot.transpose() * B * acc_[j];
            for (int p = 0; p < 6; ++p)
                (*grad)[3 + 6 * j + p] = M.cwiseProduct(jac_[j][p]).sum();
        }
        return value;
    }

    const std::vector<Vec3>& joint_positions() const { return mu_; }

private:
    const SkeletonTree& tree_;
    std::vector<Vec3> targets_;
    std::vector<double> weights_;
    std::vector<int> order_;
    std::vector<Mat3> rel_, acc_;
    std::vector<std::array<Mat3, 6>> jac_;
    std::vector<Vec3> mu_;
};

// Least-squares pose recovery: minimizes sum_k w_k |FK(pose)_k - target_k|^2
// over the root translation and all relative rotations with gradient descent
// and backtracking, from init (default: identity rotations, root translation
// at the target root). Rotations about a bone axis are unobservable from
// positions, so only joint positions are guaranteed to match, not the
// generating rotations. Non-convergence still returns the best iterate with
// its objective value.
inline FitResult fit_pose_rotations(const SkeletonTree& tree, const std::vector<Vec3>& targets,
                                    const std::vector<double>& weights_in = {},
                                    const Pose* init = nullptr,
                                    const FitSettings& settings = {}) {
    tree.validate();
    const int K = tree.K;
    if (static_cast<int>(targets.size()) != K)
        throw input_error("target joint count mismatch");
    for (const Vec3& y : targets)
        if (!y.allFinite()) throw input_error("target positions must be finite");
    std::vector<double> weights = weights_in;
    if (weights.empty()) weights.assign(K, 1.0);
    if (static_cast<int>(weights.size()) != K) throw input_error("weight count mismatch");

    FitObjective objective(tree, targets, weights);
    Eigen::VectorXd x(objective.dimension());
    {
        Pose start = init ? *init : Pose::identity(K);
        if (!init) start.root_translation = targets[tree.root];
        x.head<3>() = start.root_translation;
        for (int k = 0; k < K; ++k)
            x.segment<6>(3 + 6 * k) = matrix_to_rot6d(start.relative_rotations[k]);
    }

    optim::Options opt;
    opt.max_iterations = settings.max_iterations;
    opt.initial_step = settings.initial_step;
    const optim::Result res =
        optim::minimize(x, [&](const Eigen::VectorXd& v, Eigen::VectorXd* g) { return objective(v, g); }, opt);

    FitResult out;
    out.objective = res.final_value;
    out.iterations = res.iterations;
    out.pose.root_translation = x.head<3>();
    out.pose.relative_rotations.resize(K);
    for (int k = 0; k < K; ++k)
        out.pose.relative_rotations[k] = rot6d_to_matrix(x.segment<6>(3 + 6 * k));
    out.pose.intensities = weights;
    return out;
}

namespace detail {

// Shortest-arc quaternion slerp, falling back to normalized lerp for tiny
// arcs where sin(theta) would lose precision.
inline Eigen::Quaterniond slerp_quaternion(Eigen::Quaterniond a, Eigen::Quaterniond b, double t) {
    double dot = a.dot(b);
    if (dot < 0.0) {
        b.coeffs() = -b.coeffs();
        dot = -dot;
    }
    dot = std::min(dot, 1.0);
    const double angle = std::acos(dot);
    double wa, wb;
    if (angle < 1e-6) {
        wa = 1.0 - t;
        wb = t;
    } else {
        const double s = std::sin(angle);
        wa = std::sin((1.0 - t) * angle) / s;
        wb = std::sin(t * angle) / s;
    }
    Eigen::Quaterniond out;
    out.coeffs() = wa * a.coeffs() + wb * b.coeffs();
    out.normalize();
    return out;
}

}  // namespace detail

// Per-joint spherical interpolation of the local rotations; root translation
// and intensities interpolate linearly. Endpoints are returned exactly.
inline Pose slerp_pose(const Pose& a, const Pose& b, double t) {
    if (a.relative_rotations.size() != b.relative_rotations.size())
        throw input_error("pose joint count mismatch");
    if (t == 0.0) return a;
    if (t == 1.0) return b;
    Pose out;
    out.root_translation = (1.0 - t) * a.root_translation + t * b.root_translation;
    const int K = static_cast<int>(a.relative_rotations.size());
    out.relative_rotations.resize(K);
    out.intensities.resize(K);
    for (int k = 0; k < K; ++k) {
        const Eigen::Quaterniond qa(a.relative_rotations[k]);
        const Eigen::Quaterniond qb(b.relative_rotations[k]);
        out.relative_rotations[k] = detail::slerp_quaternion(qa, qb, t).toRotationMatrix();
        const double ia = k < static_cast<int>(a.intensities.size()) ? a.intensities[k] : 1.0;
        const double ib = k < static_cast<int>(b.intensities.size()) ? b.intensities[k] : 1.0;
        out.intensities[k] = (1.0 - t) * ia + t * ib;
    }
    return out;
}

// Componentwise linear interpolation of keypoint frames.
inline std::vector<Keypoint> lerp_keypoints(const std::vector<Keypoint>& a,
                                            const std::vector<Keypoint>& b, double t) {
    if (a.size() != b.size()) throw input_error("keypoint count mismatch");
    std::vector<Keypoint> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        out[k].mu = (1.0 - t) * a[k].mu + t * b[k].mu;
        out[k].alpha = (1.0 - t) * a[k].alpha + t * b[k].alpha;
    }
    return out;
}

}  // namespace skel
