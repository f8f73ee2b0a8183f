#pragma once

#include <string>
#include <vector>

#include "poselift/common.hpp"
#include "poselift/skeleton.hpp"

namespace poselift {

struct LossWeights {
    double w_mse = 0.5;
    double w_dir = 0.5;

    void validate() const {
        if (w_mse < 0.0 || w_dir < 0.0) throw InvalidInputError("loss weights must be non-negative");
        if (!(w_mse + w_dir > 0.0)) throw InvalidInputError("loss weights must not both be zero");
    }
};

/// How the direction loss is averaged: over every summed scalar component
/// (3 per bone, the default) or over bones.
enum class DirectionNormalization { kPerComponent, kPerBone };

struct ScalarLoss {
    double value = 0.0;
    Vector grad;
};

/// Mean squared componentwise difference; gradient is 2*(pred-gt)/width.
inline ScalarLoss mse_loss(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& gt) {
    if (pred.size() != gt.size()) throw InvalidInputError("mse_loss: width mismatch");
    const double width = static_cast<double>(pred.size());
    ScalarLoss out;
    const Vector diff = pred - gt;
    out.value = diff.squaredNorm() / width;
    out.grad = diff * (2.0 / width);
    return out;
}

struct DirectionLossResult {
    double value = 0.0;
    std::vector<Vec3> grad;  // per joint, w.r.t. pred coordinates
};

/// Mean squared difference of unnormalized bone vectors (child minus parent)
/// between pred and gt. Invariant under independent global translations of
/// either pose. Each bone contributes +grad to its child and -grad to its
/// parent.
inline DirectionLossResult direction_loss(const Pose3D& pred, const Pose3D& gt, const SkeletonTopology& topo,
                                          DirectionNormalization norm = DirectionNormalization::kPerComponent) {
    check_pose_matches(pred, topo, "direction_loss(pred)");
    check_pose_matches(gt, topo, "direction_loss(gt)");
    const double m = norm == DirectionNormalization::kPerComponent ? 3.0 * topo.bone_count() : 1.0 * topo.bone_count();
    DirectionLossResult out;
    out.grad.assign(pred.joints.size(), Vec3::Zero());
    for (const Bone& b : topo.bones()) {
        const std::size_t c = static_cast<std::size_t>(b.child);
        const std::size_t p = static_cast<std::size_t>(b.parent);
        const Vec3 d = (pred.joints[c] - pred.joints[p]) - (gt.joints[c] - gt.joints[p]);
        out.value += d.squaredNorm() / m;
        const Vec3 g = d * (2.0 / m);
        out.grad[c] += g;
        out.grad[p] -= g;
    }
    return out;
}

/// Weighted sum of the coordinate MSE (computed in the standardized target
/// space the network regresses in) and the direction loss (computed on the
/// de-standardized millimeter poses). `target_mean`/`target_std` are the
/// training-split statistics of the flat 3J target; the direction gradient
/// is chained back through the de-standardization.
inline ScalarLoss combined_loss(const Eigen::Ref<const Vector>& pred_std, const Eigen::Ref<const Vector>& gt_std,
                                const Eigen::Ref<const Vector>& target_mean, const Eigen::Ref<const Vector>& target_std,
                                const SkeletonTopology& topo, const LossWeights& weights,
                                DirectionNormalization norm = DirectionNormalization::kPerComponent) {
    weights.validate();
    if (pred_std.size() != gt_std.size()) throw InvalidInputError("combined_loss: width mismatch");
    if (pred_std.size() != 3 * topo.joint_count) throw InvalidInputError("combined_loss: width does not match topology");
    if (target_mean.size() != pred_std.size() || target_std.size() != pred_std.size())
        throw InvalidInputError("combined_loss: statistics width mismatch");

    ScalarLoss out;
    out.grad = Vector::Zero(pred_std.size());
    if (weights.w_mse != 0.0) {
        const ScalarLoss mse = mse_loss(pred_std, gt_std);
        out.value += weights.w_mse * mse.value;
        out.grad += weights.w_mse * mse.grad;
    }
    if (weights.w_dir != 0.0) {
        const Vector pred_mm = pred_std.cwiseProduct(target_std) + target_mean;
        const Vector gt_mm = gt_std.cwiseProduct(target_std) + target_mean;
        const DirectionLossResult dir = direction_loss(vector_to_pose3d(pred_mm), vector_to_pose3d(gt_mm), topo, norm);
        out.value += weights.w_dir * dir.value;
        for (int j = 0; j < topo.joint_count; ++j) {
            out.grad.segment<3>(3 * j) +=
                weights.w_dir * dir.grad[static_cast<std::size_t>(j)].cwiseProduct(Vec3(target_std.segment<3>(3 * j)));
        }
    }
    return out;
}

}  // namespace poselift
