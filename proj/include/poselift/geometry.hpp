#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <vector>

#include "poselift/camera.hpp"
#include "poselift/common.hpp"
#include "poselift/skeleton.hpp"

namespace poselift {

/// Positive ray parameters t where ||origin + t*direction - center|| = radius,
/// in ascending order. Empty when the ray misses the sphere; a single value
/// at tangency. Uses the numerically stable quadratic form so residuals stay
/// at machine precision even when the two roots differ widely.
inline std::vector<double> ray_sphere_intersections(const Ray& ray, const Vec3& center, double radius) {
    require(radius >= 0.0, "ray_sphere_intersections: negative radius");
    const Vec3 oc = ray.origin - center;
    const double a = ray.direction.squaredNorm();
    const double b = 2.0 * oc.dot(ray.direction);
    const double c = oc.squaredNorm() - radius * radius;
    const double disc = b * b - 4.0 * a * c;
    std::vector<double> out;
    if (disc < 0.0 || a == 0.0) return out;
    if (disc == 0.0) {
        const double t = -b / (2.0 * a);
        if (t > 0.0) out.push_back(t);
        return out;
    }
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    double t0 = q / a;
    double t1 = c / q;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > 0.0) out.push_back(t0);
    if (t1 > 0.0) out.push_back(t1);
    return out;
}

/// All 3D poses consistent with one 2D observation and a set of bone lengths,
/// given the root depth. `branch_count_per_joint` records, per bone in
/// topology order, the largest number of ray-sphere intersections seen while
/// expanding that joint (0 means every partial pose was pruned there).
struct CandidateSet {
    std::vector<Pose3D> poses;
    std::vector<int> branch_count_per_joint;
};

/// Enumerates depth candidates joint by joint: the root is placed root_depth
/// millimeters along its pixel ray, and each child is intersected with the
/// sphere of its bone length around every candidate parent. Expansion walks
/// the tree parents-first and keeps intersections in ascending-t order, so
/// the enumeration is deterministic; it stops growing once `cap` candidates
/// exist.
inline CandidateSet chain_candidates(const Pose2D& obs, const std::vector<double>& lengths,
                                     const CameraIntrinsics& cam, const SkeletonTopology& topo,
                                     double root_depth, std::size_t cap) {
    if (obs.joint_count() != topo.joint_count)
        throw InvalidInputError("chain_candidates: observation joint count does not match topology");
    if (lengths.size() != static_cast<std::size_t>(topo.bone_count()))
        throw InvalidInputError("chain_candidates: bone length count does not match topology");
    require(root_depth > 0.0, "chain_candidates: root_depth must be positive");
    require(cap > 0, "chain_candidates: cap must be positive");

    const std::size_t n = static_cast<std::size_t>(topo.joint_count);
    std::vector<Ray> rays(n);
    for (std::size_t j = 0; j < n; ++j) rays[j] = pixel_ray(obs.joints[j], cam);

    // Bone index per child joint, for looking up the radius during traversal.
    std::vector<int> bone_of_child(n, -1);
    {
        const auto bones = topo.bones();
        for (std::size_t i = 0; i < bones.size(); ++i) bone_of_child[static_cast<std::size_t>(bones[i].child)] = static_cast<int>(i);
    }

    struct Partial {
        std::vector<Vec3> joints;
    };
    std::vector<Partial> frontier;
    {
        Partial seed;
        seed.joints.assign(n, Vec3::Zero());
        seed.joints[static_cast<std::size_t>(topo.root_index)] = rays[static_cast<std::size_t>(topo.root_index)].direction * root_depth;
        frontier.push_back(std::move(seed));
    }

    std::vector<int> branch_counts(static_cast<std::size_t>(topo.bone_count()), 0);
    for (int joint : topo.traversal_order()) {
        if (joint == topo.root_index) continue;
        const std::size_t j = static_cast<std::size_t>(joint);
        const int bone = bone_of_child[j];
        const double radius = lengths[static_cast<std::size_t>(bone)];
        const std::size_t parent = static_cast<std::size_t>(topo.parent[j]);

        std::vector<Partial> next;
        next.reserve(frontier.size());
        for (const Partial& p : frontier) {
            const auto ts = ray_sphere_intersections(rays[j], p.joints[parent], radius);
            branch_counts[static_cast<std::size_t>(bone)] =
                std::max(branch_counts[static_cast<std::size_t>(bone)], static_cast<int>(ts.size()));
            for (double t : ts) {
                if (next.size() >= cap) break;
                Partial q = p;
                q.joints[j] = rays[j].direction * t;
                next.push_back(std::move(q));
            }
            if (next.size() >= cap) break;
        }
        frontier = std::move(next);
        if (frontier.empty()) break;
    }

    CandidateSet out;
    out.branch_count_per_joint = std::move(branch_counts);
    out.poses.reserve(frontier.size());
    for (auto& p : frontier) out.poses.push_back(Pose3D{std::move(p.joints)});
    return out;
}

/// Least-squares alignment of `pred` onto `gt`: returns R*s*pred + T with R a
/// proper rotation (det +1), closed form via SVD of the cross-covariance.
/// With `with_scale` off, s is fixed to 1. Throws on rank-deficient
/// configurations (e.g. collinear joints), where the rotation is not unique.
inline Pose3D procrustes_align(const Pose3D& pred, const Pose3D& gt, bool with_scale) {
    if (pred.joint_count() != gt.joint_count())
        throw InvalidInputError("procrustes_align: joint counts differ");
    const int n = pred.joint_count();
    require(n >= 3, "procrustes_align: need at least 3 joints");

    Vec3 mu_p = Vec3::Zero(), mu_g = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
        mu_p += pred.joints[static_cast<std::size_t>(i)];
        mu_g += gt.joints[static_cast<std::size_t>(i)];
    }
    mu_p /= n;
    mu_g /= n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();  // gt-centered times pred-centered
    double var_p = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec3 dp = pred.joints[static_cast<std::size_t>(i)] - mu_p;
        const Vec3 dg = gt.joints[static_cast<std::size_t>(i)] - mu_g;
        cov += dg * dp.transpose();
        var_p += dp.squaredNorm();
    }
    cov /= n;
    var_p /= n;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(2) <= sv(0) * 1e-12)
        throw DegenerateInputError("procrustes_align: rank-deficient cross-covariance");

    // Force a proper rotation by flipping the smallest singular direction.
    Vec3 d = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
    const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double scale = with_scale ? (sv(0) * d(0) + sv(1) * d(1) + sv(2) * d(2)) / var_p : 1.0;
    const Vec3 trans = mu_g - scale * (rot * mu_p);

    Pose3D out;
    out.joints.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.joints.push_back(scale * (rot * pred.joints[static_cast<std::size_t>(i)]) + trans);
    return out;
}

}  // namespace poselift
