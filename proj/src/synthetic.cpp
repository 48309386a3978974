// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/synthetic.hpp"

#include "splatseg/error.hpp"
#include "splatseg/instance_field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace splatseg {
namespace {

Eigen::Vector3d random_in_ball(std::mt19937_64& rng, double radius) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
    while (dir.squaredNorm() < 1e-12) dir = {normal(rng), normal(rng), normal(rng)};
    return dir.normalized() * radius * std::cbrt(unit(rng));
}

Eigen::Vector4f random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
    while (q.squaredNorm() < 1e-12) q = {normal(rng), normal(rng), normal(rng), normal(rng)};
    q.normalize();
    if (q[0] < 0) q = -q;
    Eigen::Vector4f qf = q.cast<float>();
    return qf / qf.norm();
}

/// Random Gaussian vectors orthonormalized by modified Gram-Schmidt.
std::vector<Eigen::VectorXd> make_vocabulary(std::mt19937_64& rng, int count, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::VectorXd> basis;
    while (static_cast<int>(basis.size()) < count) {
        Eigen::VectorXd v(dim);
        for (int k = 0; k < dim; ++k) v[k] = normal(rng);
        for (const auto& b : basis) v -= v.dot(b) * b;
        const double norm = v.norm();
        if (norm < 1e-6) continue;
        basis.push_back(v / norm);
    }
    return basis;
}

std::vector<float> unit_floats(const Eigen::VectorXd& v) {
    const Eigen::VectorXd u = v.normalized();
    std::vector<float> out(static_cast<std::size_t>(u.size()));
    for (Eigen::Index k = 0; k < u.size(); ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(u[k]);
    return out;
}

} // namespace

GaussianScene generate_synthetic_scene(const SceneSpec& spec, const RasterConfig& raster) {
    if (spec.num_objects < 1) throw Error(Errc::invalid_argument, "scene spec: num_objects must be >= 1");
    if (spec.gaussians_per_object < 1)
        throw Error(Errc::invalid_argument, "scene spec: gaussians_per_object must be >= 1");
    if (spec.d_instance < 1) throw Error(Errc::invalid_argument, "scene spec: d_I must be >= 1");
    if (spec.d_language < 4) throw Error(Errc::invalid_argument, "scene spec: d_L must be >= 4");
    if (spec.d_language < spec.num_objects)
        throw Error(Errc::invalid_argument,
                    "scene spec: d_L < num_objects, cannot build a near-orthogonal vocabulary");
    if (spec.num_views < 0 || spec.image_size < 1 || spec.background_gaussians < 0 ||
        !(spec.language_noise >= 0.0) || !(spec.cluster_radius > 0.0))
        throw Error(Errc::invalid_argument, "scene spec: invalid views/image_size/background/noise/radius");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = spec.cluster_radius;

    // Cluster centers with pairwise separation >= 4.5 r.
    const double separation = 4.5 * r;
    double half = separation * std::max(1.0, std::cbrt(static_cast<double>(spec.num_objects))) * 0.75;
    std::vector<Eigen::Vector3d> centers;
    int attempts = 0;
    while (static_cast<int>(centers.size()) < spec.num_objects) {
        const Eigen::Vector3d c(half * (2 * unit(rng) - 1), half * (2 * unit(rng) - 1), half * (2 * unit(rng) - 1));
        const bool ok = std::all_of(centers.begin(), centers.end(),
                                    [&](const Eigen::Vector3d& o) { return (o - c).norm() >= separation; });
        if (ok) {
            centers.push_back(c);
            attempts = 0;
        } else if (++attempts > 200) {
            half *= 1.1;
            attempts = 0;
        }
    }

    GaussianScene scene(spec.d_instance, spec.d_language);
    const std::size_t n_obj = static_cast<std::size_t>(spec.num_objects) * spec.gaussians_per_object;
    const std::size_t n = n_obj + static_cast<std::size_t>(spec.background_gaussians);
    scene.resize(n);
    scene.object_ids.assign(n, 0);

    std::size_t i = 0;
    for (int obj = 0; obj < spec.num_objects; ++obj) {
        const Eigen::Vector3d base_color(0.2 + 0.7 * unit(rng), 0.2 + 0.7 * unit(rng), 0.2 + 0.7 * unit(rng));
        for (int k = 0; k < spec.gaussians_per_object; ++k, ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const Eigen::Vector3d p = centers[static_cast<std::size_t>(obj)] + random_in_ball(rng, r);
            scene.positions.row(row) = p.cast<float>().transpose();
            for (int a = 0; a < 3; ++a) scene.scales(row, a) = static_cast<float>(r * (0.12 + 0.13 * unit(rng)));
            scene.rotations.row(row) = random_rotation(rng).transpose();
            scene.opacities[row] = static_cast<float>(0.3 + 0.4 * unit(rng));
            for (int a = 0; a < 3; ++a)
                scene.colors(row, a) = static_cast<float>(std::clamp(base_color[a] + 0.1 * (unit(rng) - 0.5), 0.0, 1.0));
            scene.object_ids[i] = static_cast<ObjectId>(obj + 1);
        }
    }
    const double clutter_half = half + 2.0 * r;
    for (int k = 0; k < spec.background_gaussians; ++k, ++i) {
        Eigen::Vector3d p;
        do {
            p = {clutter_half * (2 * unit(rng) - 1), clutter_half * (2 * unit(rng) - 1),
                 clutter_half * (2 * unit(rng) - 1)};
        } while (std::any_of(centers.begin(), centers.end(),
                             [&](const Eigen::Vector3d& c) { return (c - p).norm() < 1.5 * r; }));
        const auto row = static_cast<Eigen::Index>(i);
        scene.positions.row(row) = p.cast<float>().transpose();
        for (int a = 0; a < 3; ++a) scene.scales(row, a) = static_cast<float>(r * (0.1 + 0.1 * unit(rng)));
        scene.rotations.row(row) = random_rotation(rng).transpose();
        scene.opacities[row] = static_cast<float>(0.1 + 0.3 * unit(rng));
        scene.colors.row(row).setConstant(static_cast<float>(0.3 + 0.4 * unit(rng)));
        scene.object_ids[i] = 0;
    }

    const auto vocab = make_vocabulary(rng, spec.num_objects, spec.d_language);
    for (int obj = 0; obj < spec.num_objects; ++obj)
        scene.vocabulary[static_cast<ObjectId>(obj + 1)] = unit_floats(vocab[static_cast<std::size_t>(obj)]);

    // Cameras on a fibonacci sphere around the centroid.
    const Eigen::Vector3d centroid = scene.positions.cast<double>().colwise().mean().transpose();
    double bound = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
        const auto row = static_cast<Eigen::Index>(g);
        const double extent = (scene.positions.row(row).cast<double>().transpose() - centroid).norm() +
                              3.0 * scene.scales.row(row).maxCoeff();
        bound = std::max(bound, extent);
    }
    const double distance = 3.0 * bound;
    const double tan_half = bound / std::sqrt(distance * distance - bound * bound);
    const double focal = 0.5 * spec.image_size / (1.05 * tan_half);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < spec.num_views; ++k) {
        const double y = 1.0 - 2.0 * (k + 0.5) / spec.num_views;
        const double ring = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double theta = golden * k;
        const Eigen::Vector3d dir(std::cos(theta) * ring, y, std::sin(theta) * ring);

        ViewSupervision view;
        view.camera = Camera::look_at(centroid + distance * dir, centroid, spec.image_size, spec.image_size, focal);
        const BlendPlan plan = BlendPlan::build(scene, view.camera, raster);
        view.instance_mask = dominant_object_mask(plan, scene.object_ids, kMaskMinAlpha);
        for (SegmentId id : view.segment_ids()) {
            Eigen::VectorXd target = vocab[id - 1];
            if (spec.language_noise > 0.0) {
                const double scale = spec.language_noise / std::sqrt(static_cast<double>(spec.d_language));
                for (Eigen::Index d = 0; d < target.size(); ++d) target[d] += scale * normal(rng);
            }
            view.segment_language[id] = unit_floats(target);
        }
        scene.views.push_back(std::move(view));
    }

    init_instance_features(scene, spec.seed ^ 0x9e3779b97f4a7c15ULL);
    scene.validate();
    return scene;
}

} // namespace splatseg
