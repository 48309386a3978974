// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace splatseg {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major float32 matrix, the in-memory layout of every tensor file.
using FeatureMatrix = RowMatrix<float>;

using ObjectId = std::uint32_t;
using SegmentId = std::uint32_t;

/// One Gaussian in array-of-structs form. Scenes store Gaussians as columns
/// (see GaussianScene); this type exists for construction and inspection.
struct Gaussian {
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    Eigen::Vector3f scale = Eigen::Vector3f::Constant(0.1f);
    Eigen::Vector4f rotation = Eigen::Vector4f(1.f, 0.f, 0.f, 0.f); // (w, x, y, z)
    float opacity = 1.f;
    Eigen::Vector3f color = Eigen::Vector3f::Constant(0.5f);
    Eigen::VectorXf instance_feature;
    std::optional<Eigen::VectorXf> language_feature;
    std::optional<ObjectId> gt_object_id;
};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (x, y)
/// samples the image plane at exactly (x, y).
struct Camera {
    int width = 0;
    int height = 0;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); // world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    void validate() const;

    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width,
                          int height, double focal);
};

/// Per-view 2D supervision: an instance-ID mask plus one language embedding
/// per segment.
struct ViewSupervision {
    Camera camera;
    std::vector<SegmentId> instance_mask; // row-major height x width, 0 = unlabeled
    std::map<SegmentId, std::vector<float>> segment_language;
    std::set<SegmentId> language_free;

    SegmentId mask_at(int x, int y) const {
        return instance_mask[static_cast<std::size_t>(y) * camera.width + x];
    }
    /// Sorted nonzero IDs present in the mask.
    std::vector<SegmentId> segment_ids() const;
};

/// Pipeline progress recorded alongside the scene.
struct PipelineStage {
    bool trained = false;
    std::string mapped; // "", "kernel", "mlp" or "parallel"
    bool operator==(const PipelineStage&) const = default;
};

/// Structure-of-arrays Gaussian scene with its instance and language fields.
///
/// Tensor shapes (N = number of Gaussians):
///   positions [N,3], scales [N,3], rotations [N,4] (wxyz), opacities [N],
///   colors [N,3], instance [N,d_instance], language [N,d_language] or empty,
///   object_ids [N] or empty.
struct GaussianScene {
    int d_instance = 16;
    int d_language = 32;

    FeatureMatrix positions;
    FeatureMatrix scales;
    FeatureMatrix rotations;
    Eigen::VectorXf opacities;
    FeatureMatrix colors;
    FeatureMatrix instance;
    FeatureMatrix language;
    std::vector<ObjectId> object_ids;

    std::vector<ViewSupervision> views;
    std::map<ObjectId, std::vector<float>> vocabulary;
    PipelineStage stage;

    GaussianScene() = default;
    GaussianScene(int instance_dim, int language_dim);

    std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
    bool empty() const { return size() == 0; }
    bool has_language() const { return language.rows() > 0; }
    bool has_object_ids() const { return !object_ids.empty(); }

    /// Resizes every per-Gaussian tensor to n rows (new rows zeroed; language and
    /// object ids only if already present).
    void resize(std::size_t n);
    void push_back(const Gaussian& g);
    Gaussian gaussian(std::size_t i) const;

    /// Indices of Gaussians whose gt_object_id equals id.
    std::vector<std::uint32_t> gaussians_of_object(ObjectId id) const;
    /// Largest gt object id in the scene (0 when none).
    ObjectId max_object_id() const;

    /// Throws Error naming the first violated invariant.
    void validate() const;
};

} // namespace splatseg
