#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "poselift/common.hpp"

namespace poselift {

/// One directed bone: child joint minus parent joint.
struct Bone {
    int child = -1;
    int parent = -1;
};

/// Articulated joint tree. `parent[j]` is the parent joint index, with -1 as
/// the sentinel for the single root. Bones are ordered by ascending child
/// index, so for the default 16-joint skeleton there are 15 bones whose
/// order is reproducible across runs and serialized artifacts.
struct SkeletonTopology {
    int joint_count = 0;
    std::vector<int> parent;
    int root_index = 0;
    std::vector<std::string> joint_names;

    static constexpr int kNoParent = -1;

    int bone_count() const { return joint_count - 1; }

    /// Bones in ascending child-index order.
    std::vector<Bone> bones() const {
        std::vector<Bone> out;
        out.reserve(static_cast<std::size_t>(bone_count()));
        for (int j = 0; j < joint_count; ++j) {
            if (j != root_index) out.push_back(Bone{j, parent[static_cast<std::size_t>(j)]});
        }
        return out;
    }

    /// Joints in breadth-first order from the root; parents always precede
    /// children, which is what chain reconstruction needs.
    std::vector<int> traversal_order() const {
        std::vector<std::vector<int>> children(static_cast<std::size_t>(joint_count));
        for (int j = 0; j < joint_count; ++j) {
            if (j != root_index) children[static_cast<std::size_t>(parent[static_cast<std::size_t>(j)])].push_back(j);
        }
        std::vector<int> order;
        order.reserve(static_cast<std::size_t>(joint_count));
        order.push_back(root_index);
        for (std::size_t i = 0; i < order.size(); ++i) {
            for (int c : children[static_cast<std::size_t>(order[i])]) order.push_back(c);
        }
        return order;
    }

    void validate() const {
        if (joint_count < 2) throw ValidationError("topology: need at least 2 joints");
        if (parent.size() != static_cast<std::size_t>(joint_count))
            throw ValidationError("topology: parent array size does not match joint_count");
        if (!joint_names.empty() && joint_names.size() != static_cast<std::size_t>(joint_count))
            throw ValidationError("topology: joint_names size does not match joint_count");
        int roots = 0;
        for (int j = 0; j < joint_count; ++j) {
            const int p = parent[static_cast<std::size_t>(j)];
            if (p == kNoParent) {
                ++roots;
                if (j != root_index) throw ValidationError("topology: root_index does not match sentinel parent");
            } else if (p < 0 || p >= joint_count) {
                throw ValidationError("topology: parent index out of range at joint " + std::to_string(j));
            } else if (p == j) {
                throw ValidationError("topology: joint " + std::to_string(j) + " is its own parent");
            }
        }
        if (roots != 1) throw ValidationError("topology: expected exactly one root, found " + std::to_string(roots));
        // Acyclic check: every joint must reach the root in < joint_count hops.
        for (int j = 0; j < joint_count; ++j) {
            int cur = j;
            int hops = 0;
            while (cur != root_index) {
                cur = parent[static_cast<std::size_t>(cur)];
                if (++hops >= joint_count) throw ValidationError("topology: cycle detected at joint " + std::to_string(j));
            }
        }
    }

    /// 16-joint skeleton in the stacked-hourglass (MPII) joint order:
    /// ankles/knees/hips, pelvis root, thorax/neck/head, wrists/elbows/shoulders.
    static SkeletonTopology default_16() {
        SkeletonTopology t;
        t.joint_count = 16;
        t.root_index = 6;
        t.parent = {1, 2, 6, 6, 3, 4, kNoParent, 6, 7, 8, 11, 12, 7, 7, 13, 14};
        t.joint_names = {"right_ankle", "right_knee",    "right_hip",   "left_hip",
                         "left_knee",   "left_ankle",    "hip",         "thorax",
                         "neck",        "head_top",      "right_wrist", "right_elbow",
                         "right_shoulder", "left_shoulder", "left_elbow", "left_wrist"};
        return t;
    }
};

inline nlohmann::ordered_json topology_to_json(const SkeletonTopology& t) {
    nlohmann::ordered_json j;
    j["joint_count"] = t.joint_count;
    nlohmann::ordered_json parents = nlohmann::ordered_json::array();
    for (int p : t.parent) {
        if (p == SkeletonTopology::kNoParent)
            parents.push_back(nullptr);
        else
            parents.push_back(p);
    }
    j["parent"] = std::move(parents);
    j["root_index"] = t.root_index;
    j["joint_names"] = t.joint_names;
    return j;
}

inline SkeletonTopology topology_from_json(const nlohmann::json& j) {
    SkeletonTopology t;
    t.joint_count = j.at("joint_count").get<int>();
    for (const auto& p : j.at("parent")) {
        t.parent.push_back(p.is_null() ? SkeletonTopology::kNoParent : p.get<int>());
    }
    t.root_index = j.at("root_index").get<int>();
    if (j.contains("joint_names")) t.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    t.validate();
    return t;
}

/// Per-joint 3D coordinates in millimeters, camera frame.
struct Pose3D {
    std::vector<Vec3> joints;

    int joint_count() const { return static_cast<int>(joints.size()); }

    bool all_finite() const {
        for (const auto& p : joints) {
            if (!p.allFinite()) return false;
        }
        return true;
    }
};

/// Per-joint 2D coordinates in pixels.
struct Pose2D {
    std::vector<Vec2> joints;

    int joint_count() const { return static_cast<int>(joints.size()); }

    bool all_finite() const {
        for (const auto& p : joints) {
            if (!p.allFinite()) return false;
        }
        return true;
    }
};

inline void check_pose_matches(const Pose3D& pose, const SkeletonTopology& topo, const char* what) {
    if (pose.joint_count() != topo.joint_count)
        throw InvalidInputError(std::string(what) + ": pose has " + std::to_string(pose.joint_count()) +
                                " joints, topology expects " + std::to_string(topo.joint_count));
}

/// Euclidean child-to-parent distances, one per bone in topology bone order.
inline std::vector<double> bone_lengths(const Pose3D& pose, const SkeletonTopology& topo) {
    check_pose_matches(pose, topo, "bone_lengths");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(topo.bone_count()));
    for (const Bone& b : topo.bones()) {
        out.push_back((pose.joints[static_cast<std::size_t>(b.child)] - pose.joints[static_cast<std::size_t>(b.parent)]).norm());
    }
    return out;
}

/// Unnormalized child-minus-parent vectors, one per bone in topology bone order.
inline std::vector<Vec3> bone_directions(const Pose3D& pose, const SkeletonTopology& topo) {
    check_pose_matches(pose, topo, "bone_directions");
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(topo.bone_count()));
    for (const Bone& b : topo.bones()) {
        out.push_back(pose.joints[static_cast<std::size_t>(b.child)] - pose.joints[static_cast<std::size_t>(b.parent)]);
    }
    return out;
}

/// Flat (x0,y0,z0,x1,...) layout used for network targets.
inline Vector pose3d_to_vector(const Pose3D& pose) {
    Vector v(3 * pose.joint_count());
    for (int j = 0; j < pose.joint_count(); ++j) v.segment<3>(3 * j) = pose.joints[static_cast<std::size_t>(j)];
    return v;
}

inline Pose3D vector_to_pose3d(const Eigen::Ref<const Vector>& v) {
    require(v.size() % 3 == 0, "vector_to_pose3d: length not divisible by 3");
    Pose3D pose;
    pose.joints.resize(static_cast<std::size_t>(v.size() / 3));
    for (int j = 0; j < pose.joint_count(); ++j) pose.joints[static_cast<std::size_t>(j)] = v.segment<3>(3 * j);
    return pose;
}

/// Flat (u0,v0,u1,...) layout used for network inputs.
inline Vector pose2d_to_vector(const Pose2D& pose) {
    Vector v(2 * pose.joint_count());
    for (int j = 0; j < pose.joint_count(); ++j) v.segment<2>(2 * j) = pose.joints[static_cast<std::size_t>(j)];
    return v;
}

/// Translate the pose so the root joint sits exactly at the origin.
inline Pose3D root_center(const Pose3D& pose, const SkeletonTopology& topo) {
    check_pose_matches(pose, topo, "root_center");
    const Vec3 root = pose.joints[static_cast<std::size_t>(topo.root_index)];
    Pose3D out;
    out.joints.reserve(pose.joints.size());
    for (const auto& p : pose.joints) out.joints.push_back(p - root);
    out.joints[static_cast<std::size_t>(topo.root_index)] = Vec3::Zero();
    return out;
}

}  // namespace poselift
