#include "skel/kinematics.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace skel;

namespace {

Mat3 random_rotation(Rng& rng) {
    // Orthonormalize a random 6D sample; rejection happens inside rot6d.
    while (true) {
        Rotation6D r;
        for (int i = 0; i < 6; ++i) r[i] = rng.normal();
        Mat3 R;
        if (detail::try_rot6d_to_matrix(r, R)) return R;
    }
}

// Serial chain skeleton: node i+1 hangs off node i.
SkeletonTree chain_tree(const std::vector<Vec3>& offsets) {
    SkeletonTree tree;
    tree.K = static_cast<int>(offsets.size()) + 1;
    tree.root = 0;
    tree.parents.resize(tree.K);
    tree.unit_offsets.assign(tree.K, Vec3::Zero());
    tree.offsets.assign(tree.K, Vec3::Zero());
    tree.node_intensities.assign(tree.K, 1.0);
    tree.parents[0] = 0;
    for (int k = 1; k < tree.K; ++k) {
        tree.parents[k] = k - 1;
        tree.offsets[k] = offsets[k - 1];
        tree.unit_offsets[k] = offsets[k - 1].normalized();
    }
    return tree;
}

Pose random_pose(Rng& rng, int k_count, double max_angle) {
    Pose pose = Pose::identity(k_count);
    pose.root_translation = Vec3(rng.uniform01(), rng.uniform01(), rng.uniform01());
    for (int k = 0; k < k_count; ++k) {
        const Vec3 axis = rng.unit_vector();
        const double angle = rng.uniform(-max_angle, max_angle);
        pose.relative_rotations[k] = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    }
    return pose;
}

}  // namespace

TEST(Rot6d, CanonicalInputGivesIdentity) {
    Rotation6D r;
    r << 1, 0, 0, 0, 1, 0;
    EXPECT_NEAR((rot6d_to_matrix(r) - Mat3::Identity()).norm(), 0.0, 1e-15);
}

TEST(Rot6d, ScaleInvariant) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Rotation6D r;
        for (int i = 0; i < 6; ++i) r[i] = rng.normal();
        Mat3 R;
        if (!detail::try_rot6d_to_matrix(r, R)) continue;
        Rotation6D scaled_first = r, scaled_second = r;
        scaled_first.head<3>() *= 5.0;
        scaled_second.tail<3>() *= 5.0;
        EXPECT_NEAR((rot6d_to_matrix(scaled_first) - R).norm(), 0.0, 1e-12);
        EXPECT_NEAR((rot6d_to_matrix(scaled_second) - R).norm(), 0.0, 1e-12);
    }
}

TEST(Rot6d, RoundTripFromRotationMatrices) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const Mat3 R = random_rotation(rng);
        EXPECT_NEAR((rot6d_to_matrix(matrix_to_rot6d(R)) - R).norm(), 0.0, 1e-12);
    }
}

TEST(Rot6d, OutputAlwaysOrthonormalWithUnitDeterminant) {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Rotation6D r;
        for (int i = 0; i < 6; ++i) r[i] = rng.normal();
        Mat3 R;
        if (!detail::try_rot6d_to_matrix(r, R)) continue;
        EXPECT_LT((R.transpose() * R - Mat3::Identity()).norm(), 1e-10);
        EXPECT_NEAR(R.determinant(), 1.0, 1e-10);
    }
}

TEST(Rot6d, DegenerateInputsThrow) {
    Rotation6D zero_first;
    zero_first << 0, 0, 0, 0, 1, 0;
    EXPECT_THROW(rot6d_to_matrix(zero_first), input_error);
    Rotation6D parallel;
    parallel << 1, 0, 0, 2, 0, 0;
    EXPECT_THROW(rot6d_to_matrix(parallel), input_error);
}

TEST(Rot6d, JacobianMatchesFiniteDifferences) {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        Rotation6D r;
        for (int i = 0; i < 6; ++i) r[i] = rng.normal();
        Mat3 R;
        std::array<Mat3, 6> jac;
        if (!detail::try_rot6d_to_matrix(r, R, &jac)) continue;
        for (int entry = 0; entry < 9; ++entry) {
            const int row = entry % 3, col = entry / 3;
            const auto fn = [&](const Eigen::VectorXd& v) {
                Rotation6D probe = v;
                Mat3 m;
                detail::try_rot6d_to_matrix(probe, m);
                return m(row, col);
            };
            const Eigen::VectorXd fd =
                oracle::finite_difference(fn, Eigen::VectorXd(r), 1e-6);
            for (int p = 0; p < 6; ++p) EXPECT_NEAR(jac[p](row, col), fd[p], 1e-6);
        }
    }
}

TEST(ForwardKinematics, IdentityPoseSumsOffsets) {
    const SkeletonTree tree =
        chain_tree({Vec3(0.1, 0, 0), Vec3(0, 0.2, 0), Vec3(0, 0, 0.3)});
    const auto joints = forward_kinematics(tree, Pose::identity(4));
    EXPECT_NEAR((joints[0] - Vec3(0, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((joints[1] - Vec3(0.1, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((joints[2] - Vec3(0.1, 0.2, 0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((joints[3] - Vec3(0.1, 0.2, 0.3)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, RootRotationTurnsChild) {
    const SkeletonTree tree = chain_tree({Vec3(1, 0, 0)});
    Pose pose = Pose::identity(2);
    pose.root_translation = Vec3(0.5, 0.5, 0.0);
    pose.relative_rotations[0] =
        Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
    const auto joints = forward_kinematics(tree, pose);
    EXPECT_NEAR((joints[1] - (pose.root_translation + Vec3(0, 1, 0))).norm(), 0.0, 1e-12);
}

TEST(ForwardKinematics, BoneLengthsPreservedAcrossRandomPoses) {
    Rng rng(11);
    const SkeletonTree tree =
        chain_tree({Vec3(0.2, 0.05, 0), Vec3(0.1, -0.1, 0.1), Vec3(0, 0.15, 0.2)});
    for (int trial = 0; trial < 1000; ++trial) {
        const Pose pose = random_pose(rng, tree.K, M_PI);
        const auto joints = forward_kinematics(tree, pose);
        for (int k = 0; k < tree.K; ++k) {
            if (k == tree.root) continue;
            EXPECT_NEAR((joints[k] - joints[tree.parents[k]]).norm(),
                        tree.offsets[k].norm(), 1e-12);
        }
    }
}

TEST(ForwardKinematics, GlobalRotationActsRigidly) {
    Rng rng(13);
    const SkeletonTree tree =
        chain_tree({Vec3(0.2, 0, 0), Vec3(0, 0.2, 0), Vec3(0.1, 0.1, 0.1)});
    for (int trial = 0; trial < 50; ++trial) {
        const Pose pose = random_pose(rng, tree.K, 1.0);
        const Mat3 G = random_rotation(rng);
        Pose rotated = pose;
        rotated.relative_rotations[tree.root] = G * pose.relative_rotations[tree.root];
        rotated.root_translation = G * pose.root_translation;
        const auto base = forward_kinematics(tree, pose);
        const auto moved = forward_kinematics(tree, rotated);
        for (int k = 0; k < tree.K; ++k)
            EXPECT_NEAR((moved[k] - G * base[k]).norm(), 0.0, 1e-12);
    }
}

TEST(ForwardKinematics, InvalidTreeThrows) {
    SkeletonTree broken = chain_tree({Vec3(1, 0, 0)});
    broken.parents[1] = 1;
    EXPECT_THROW(forward_kinematics(broken, Pose::identity(2)), input_error);
}

TEST(FitObjective, GradientMatchesFiniteDifferences) {
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const int segments = 2 + static_cast<int>(rng.uniform01() * 3);
        std::vector<Vec3> offsets;
        for (int s = 0; s < segments; ++s) offsets.push_back(0.2 * rng.unit_vector());
        const SkeletonTree tree = chain_tree(offsets);

        std::vector<Vec3> targets(tree.K);
        std::vector<double> weights(tree.K);
        for (int k = 0; k < tree.K; ++k) {
            targets[k] = Vec3(rng.uniform01(), rng.uniform01(), rng.uniform01());
            weights[k] = rng.uniform(0.2, 1.0);
        }
        FitObjective objective(tree, targets, weights);

        Eigen::VectorXd x(objective.dimension());
        x.head<3>() = Vec3(rng.uniform01(), rng.uniform01(), rng.uniform01());
        for (int k = 0; k < tree.K; ++k)
            x.segment<6>(3 + 6 * k) = matrix_to_rot6d(random_rotation(rng));

        Eigen::VectorXd grad(x.size());
        objective(x, &grad);
        const auto fn = [&](const Eigen::VectorXd& v) {
            FitObjective probe(tree, targets, weights);
            return probe(v, nullptr);
        };
        const Eigen::VectorXd fd = oracle::finite_difference(fn, x);
        EXPECT_LT(oracle::gradient_rel_error(grad, fd), 1e-4);
    }
}

TEST(FitPose, CanonicalTargetsFitExactlyAtIdentityInit) {
    const SkeletonTree tree = chain_tree({Vec3(0.2, 0, 0), Vec3(0, 0.3, 0)});
    const auto rest = forward_kinematics(tree, Pose::identity(tree.K));
    const FitResult fit = fit_pose_rotations(tree, rest);
    EXPECT_NEAR(fit.objective, 0.0, 1e-18);
}

TEST(FitPose, RecoversJointPositionsOfKnownPoses) {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Vec3> offsets;
        const int segments = 3;
        for (int s = 0; s < segments; ++s) offsets.push_back(0.25 * rng.unit_vector());
        const SkeletonTree tree = chain_tree(offsets);
        const Pose truth = random_pose(rng, tree.K, 0.6);
        const auto targets = forward_kinematics(tree, truth);

        const FitResult fit = fit_pose_rotations(tree, targets);
        const auto fitted = forward_kinematics(tree, fit.pose);
        for (int k = 0; k < tree.K; ++k)
            EXPECT_LT((fitted[k] - targets[k]).norm(), 1e-3);
    }
}

TEST(FitPose, IncompatibleBoneLengthsStillReturnBestFit) {
    const SkeletonTree tree = chain_tree({Vec3(0.1, 0, 0)});
    // Target asks for a bone twice as long as the skeleton has. The best
    // least-squares fit splits the slack between root and child, keeping the
    // bone at its fixed length along the target axis.
    const std::vector<Vec3> targets{Vec3(0, 0, 0), Vec3(0.2, 0, 0)};
    const FitResult fit = fit_pose_rotations(tree, targets);
    EXPECT_NEAR(fit.objective, 2 * 0.05 * 0.05, 1e-8);
    const auto fitted = forward_kinematics(tree, fit.pose);
    EXPECT_NEAR((fitted[0] - Vec3(0.05, 0, 0)).norm(), 0.0, 1e-4);
    EXPECT_NEAR((fitted[1] - Vec3(0.15, 0, 0)).norm(), 0.0, 1e-4);
}

TEST(FitPose, DepthFiveChainWithinOnePercentOfExtent) {
    Rng rng(19);
    std::vector<Vec3> offsets;
    for (int s = 0; s < 5; ++s) offsets.push_back(0.2 * rng.unit_vector());
    const SkeletonTree tree = chain_tree(offsets);
    const double extent = tree.extent();

    const Pose truth = random_pose(rng, tree.K, 0.5);
    const auto targets = forward_kinematics(tree, truth);
    const FitResult fit = fit_pose_rotations(tree, targets);
    const auto fitted = forward_kinematics(tree, fit.pose);
    double mean_error = 0.0;
    for (int k = 0; k < tree.K; ++k) mean_error += (fitted[k] - targets[k]).norm();
    mean_error /= tree.K;
    EXPECT_LT(mean_error, 0.01 * extent);
}

TEST(SlerpPose, EndpointsAreExact) {
    Rng rng(21);
    const Pose a = random_pose(rng, 3, 1.0);
    const Pose b = random_pose(rng, 3, 1.0);
    const Pose at0 = slerp_pose(a, b, 0.0);
    const Pose at1 = slerp_pose(a, b, 1.0);
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(at0.relative_rotations[k], a.relative_rotations[k]);
        EXPECT_EQ(at1.relative_rotations[k], b.relative_rotations[k]);
    }
    EXPECT_EQ(at0.root_translation, a.root_translation);
    EXPECT_EQ(at1.root_translation, b.root_translation);
}

TEST(SlerpPose, HalfwayBetweenIdentityAndQuarterTurn) {
    Pose a = Pose::identity(1);
    Pose b = Pose::identity(1);
    b.relative_rotations[0] = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
    const Pose mid = slerp_pose(a, b, 0.5);
    const Mat3 expect = Eigen::AngleAxisd(M_PI / 4, Vec3::UnitZ()).toRotationMatrix();
    EXPECT_NEAR((mid.relative_rotations[0] - expect).norm(), 0.0, 1e-12);
}

TEST(SlerpPose, RotationAngleIsLinearInT) {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        Pose a = Pose::identity(1);
        Pose b = Pose::identity(1);
        a.relative_rotations[0] = random_rotation(rng);
        b.relative_rotations[0] = random_rotation(rng);
        const Eigen::AngleAxisd full(a.relative_rotations[0].transpose() *
                                     b.relative_rotations[0]);
        // Slerp takes the shortest arc, so measure against that angle.
        const double total = std::min(full.angle(), 2 * M_PI - full.angle());
        const double t = rng.uniform01();
        const Pose mid = slerp_pose(a, b, t);
        const Eigen::AngleAxisd partial(a.relative_rotations[0].transpose() *
                                        mid.relative_rotations[0]);
        const double part = std::min(partial.angle(), 2 * M_PI - partial.angle());
        EXPECT_NEAR(part, t * total, 1e-9);
    }
}

TEST(LerpKeypoints, EndpointAndMidpoint) {
    std::vector<Keypoint> a{Keypoint{Vec3(0, 0, 0), 1.0}};
    std::vector<Keypoint> b{Keypoint{Vec3(2, 0, 0), 0.0}};
    const auto at0 = lerp_keypoints(a, b, 0.0);
    EXPECT_EQ(at0[0].mu, a[0].mu);
    const auto mid = lerp_keypoints(a, b, 0.5);
    EXPECT_NEAR((mid[0].mu - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(mid[0].alpha, 0.5);
}

TEST(LerpKeypoints, CommutesWithAffineMaps) {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Keypoint> a(4), b(4);
        for (int k = 0; k < 4; ++k) {
            a[k] = Keypoint{Vec3(rng.uniform01(), rng.uniform01(), rng.uniform01()), 1.0};
            b[k] = Keypoint{Vec3(rng.uniform01(), rng.uniform01(), rng.uniform01()), 1.0};
        }
        Mat3 M;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) M(i, j) = rng.normal();
        const Vec3 shift(rng.normal(), rng.normal(), rng.normal());
        const double t = rng.uniform01();

        auto mapped_a = a, mapped_b = b;
        for (int k = 0; k < 4; ++k) {
            mapped_a[k].mu = M * a[k].mu + shift;
            mapped_b[k].mu = M * b[k].mu + shift;
        }
        const auto lerp_then_map = lerp_keypoints(a, b, t);
        const auto map_then_lerp = lerp_keypoints(mapped_a, mapped_b, t);
        for (int k = 0; k < 4; ++k)
            EXPECT_NEAR((M * lerp_then_map[k].mu + shift - map_then_lerp[k].mu).norm(), 0.0,
                        1e-12);
    }
}
