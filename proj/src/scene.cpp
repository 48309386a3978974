// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/scene.hpp"

#include "splatseg/error.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace splatseg {
namespace {

void require(bool ok, Errc code, const std::string& message) {
    if (!ok) throw Error(code, message);
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* field) {
    require(m.allFinite(), Errc::non_finite, std::string("non-finite values in ") + field);
}

} // namespace

void Camera::validate() const {
    require(width >= 1 && height >= 1, Errc::invalid_argument, "camera: width and height must be >= 1");
    require(fx > 0 && fy > 0, Errc::invalid_argument, "camera: fx and fy must be positive");
    require(std::isfinite(cx) && std::isfinite(cy) && rotation.allFinite() && translation.allFinite(),
            Errc::non_finite, "camera: non-finite parameters");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, int width,
                       int height, double focal) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d up(0.0, -1.0, 0.0);
    if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d(0.0, 0.0, 1.0);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

std::vector<SegmentId> ViewSupervision::segment_ids() const {
    std::set<SegmentId> ids(instance_mask.begin(), instance_mask.end());
    ids.erase(0);
    return {ids.begin(), ids.end()};
}

GaussianScene::GaussianScene(int instance_dim, int language_dim)
    : d_instance(instance_dim), d_language(language_dim) {
    resize(0);
}

void GaussianScene::resize(std::size_t n) {
    const auto rows = static_cast<Eigen::Index>(n);
    const Eigen::Index old = positions.rows();
    auto grow = [&](auto& m, Eigen::Index cols) {
        m.conservativeResize(rows, cols);
        if (rows > old) m.bottomRows(rows - old).setZero();
    };
    grow(positions, 3);
    grow(scales, 3);
    grow(rotations, 4);
    grow(colors, 3);
    grow(instance, d_instance);
    if (has_language()) grow(language, d_language);
    opacities.conservativeResize(rows);
    if (rows > old) opacities.tail(rows - old).setZero();
    if (!object_ids.empty()) object_ids.resize(n, 0);
}

void GaussianScene::push_back(const Gaussian& g) {
    const std::size_t i = size();
    const bool first = i == 0;
    if (first && g.language_feature) language.resize(0, d_language);
    if (first && g.gt_object_id) object_ids.clear();

    const auto rows = static_cast<Eigen::Index>(i + 1);
    positions.conservativeResize(rows, 3);
    scales.conservativeResize(rows, 3);
    rotations.conservativeResize(rows, 4);
    colors.conservativeResize(rows, 3);
    instance.conservativeResize(rows, d_instance);
    opacities.conservativeResize(rows);

    const auto r = static_cast<Eigen::Index>(i);
    positions.row(r) = g.position.transpose();
    scales.row(r) = g.scale.transpose();
    rotations.row(r) = g.rotation.transpose();
    colors.row(r) = g.color.transpose();
    opacities[r] = g.opacity;
    if (g.instance_feature.size() == d_instance)
        instance.row(r) = g.instance_feature.transpose();
    else if (g.instance_feature.size() == 0)
        instance.row(r).setZero();
    else
        throw Error(Errc::shape_mismatch, "gaussian: instance_feature length != d_instance");

    if (g.language_feature || language.rows() > 0) {
        if (!g.language_feature || (language.rows() == 0 && !first))
            throw Error(Errc::invalid_argument, "gaussian: language_feature must be present on all or none");
        if (g.language_feature->size() != d_language)
            throw Error(Errc::shape_mismatch, "gaussian: language_feature length != d_language");
        language.conservativeResize(rows, d_language);
        language.row(r) = g.language_feature->transpose();
    }
    if (g.gt_object_id || !object_ids.empty()) {
        if (!g.gt_object_id || (object_ids.empty() && !first))
            throw Error(Errc::invalid_argument, "gaussian: gt_object_id must be present on all or none");
        object_ids.push_back(*g.gt_object_id);
    }
}

Gaussian GaussianScene::gaussian(std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(i);
    Gaussian g;
    g.position = positions.row(r).transpose();
    g.scale = scales.row(r).transpose();
    g.rotation = rotations.row(r).transpose();
    g.opacity = opacities[r];
    g.color = colors.row(r).transpose();
    g.instance_feature = instance.row(r).transpose();
    if (has_language()) g.language_feature = Eigen::VectorXf(language.row(r).transpose());
    if (has_object_ids()) g.gt_object_id = object_ids[i];
    return g;
}

std::vector<std::uint32_t> GaussianScene::gaussians_of_object(ObjectId id) const {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < object_ids.size(); ++i)
        if (object_ids[i] == id) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

ObjectId GaussianScene::max_object_id() const {
    return object_ids.empty() ? 0 : *std::max_element(object_ids.begin(), object_ids.end());
}

void GaussianScene::validate() const {
    require(d_instance >= 1 && d_language >= 1, Errc::invalid_argument, "scene: d_I and d_L must be positive");
    const auto n = static_cast<Eigen::Index>(size());
    auto shape = [&](Eigen::Index rows, Eigen::Index cols, Eigen::Index want_cols, const char* field) {
        require(rows == n && cols == want_cols, Errc::shape_mismatch,
                std::string("scene: ") + field + " has shape [" + std::to_string(rows) + "," +
                    std::to_string(cols) + "], expected [" + std::to_string(n) + "," +
                    std::to_string(want_cols) + "]");
    };
    shape(scales.rows(), scales.cols(), 3, "scales");
    shape(rotations.rows(), rotations.cols(), 4, "rotations");
    shape(colors.rows(), colors.cols(), 3, "colors");
    shape(instance.rows(), instance.cols(), d_instance, "instance");
    shape(opacities.rows(), 1, 1, "opacities");
    if (has_language()) shape(language.rows(), language.cols(), d_language, "language");
    require(object_ids.empty() || object_ids.size() == size(), Errc::shape_mismatch,
            "scene: object_ids length != n_gaussians");

    require_finite(positions, "positions");
    require_finite(scales, "scales");
    require_finite(rotations, "rotations");
    require_finite(opacities, "opacities");
    require_finite(colors, "colors");
    require_finite(instance, "instance");
    require_finite(language, "language");

    for (Eigen::Index i = 0; i < n; ++i) {
        const std::string where = " (gaussian " + std::to_string(i) + ")";
        const double qn = rotations.row(i).cast<double>().norm();
        require(std::abs(qn - 1.0) <= 1e-6, Errc::invalid_argument, "scene: rotation not unit norm" + where);
        require((scales.row(i).array() > 0.f).all(), Errc::invalid_argument,
                "scene: scale must be strictly positive" + where);
        require(opacities[i] >= 0.f && opacities[i] <= 1.f, Errc::invalid_argument,
                "scene: opacity outside [0,1]" + where);
    }

    for (const auto& [id, vec] : vocabulary)
        require(static_cast<int>(vec.size()) == d_language, Errc::shape_mismatch,
                "scene: vocabulary entry " + std::to_string(id) + " length != d_L");
    if (!vocabulary.empty())
        for (ObjectId id : object_ids)
            require(id == 0 || vocabulary.count(id) != 0, Errc::invalid_argument,
                    "scene: object id " + std::to_string(id) + " missing from vocabulary");

    for (std::size_t k = 0; k < views.size(); ++k) {
        const auto& view = views[k];
        const std::string where = "view " + std::to_string(k) + ": ";
        view.camera.validate();
        require(view.instance_mask.size() == view.camera.pixel_count(), Errc::shape_mismatch,
                where + "instance_mask size != width*height");
        for (const auto& [id, vec] : view.segment_language)
            require(static_cast<int>(vec.size()) == d_language, Errc::shape_mismatch,
                    where + "segment " + std::to_string(id) + " language length != d_L");
        for (SegmentId id : view.segment_ids())
            require(view.segment_language.count(id) != 0 || view.language_free.count(id) != 0,
                    Errc::invalid_argument,
                    where + "segment " + std::to_string(id) + " has no language entry");
    }
}

} // namespace splatseg
