// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures and independent reference implementations for the tests.

#pragma once

#include "splatseg/error.hpp"
#include "splatseg/rasterizer.hpp"
#include "splatseg/scene.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

namespace splatseg::test {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("splatseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Square camera at the origin looking down +z.
inline Camera front_camera(int size, double focal) {
    Camera cam;
    cam.width = size;
    cam.height = size;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = 0.5 * (size - 1);
    cam.cy = 0.5 * (size - 1);
    return cam;
}

/// n random Gaussians in the frustum of front_camera(size, focal) with
/// `channels`-dimensional random instance features.
inline GaussianScene random_scene(std::uint64_t seed, int n, int channels, int size = 32, double focal = 30.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    GaussianScene scene(channels, 4);
    scene.resize(static_cast<std::size_t>(n));
    const double half_fov = 0.5 * size / focal;
    for (int i = 0; i < n; ++i) {
        const double z = 2.0 + 4.0 * u(rng);
        scene.positions(i, 0) = static_cast<float>((2 * u(rng) - 1) * half_fov * z);
        scene.positions(i, 1) = static_cast<float>((2 * u(rng) - 1) * half_fov * z);
        scene.positions(i, 2) = static_cast<float>(z);
        for (int a = 0; a < 3; ++a) scene.scales(i, a) = static_cast<float>(0.05 + 0.35 * u(rng));
        Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
        q.normalize();
        scene.rotations.row(i) = q.cast<float>().transpose();
        scene.opacities[i] = static_cast<float>(0.1 + 0.89 * u(rng));
        for (int a = 0; a < 3; ++a) scene.colors(i, a) = static_cast<float>(u(rng));
        for (int c = 0; c < channels; ++c) scene.instance(i, c) = static_cast<float>(normal(rng));
    }
    return scene;
}

/// Rotation matrix of a (w, x, y, z) quaternion, written out by hand.
inline Eigen::Matrix3d quat_matrix(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n, x /= n, y /= n, z /= n;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Eigen::Vector2d pinhole(const Camera& cam, const Eigen::Vector3d& world) {
    const Eigen::Vector3d p = cam.rotation * world + cam.translation;
    return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

/// Screen-space covariance with the projection Jacobian taken by central
/// differences of the pinhole map (with respect to world position).
inline Eigen::Matrix2d numeric_cov2d(const GaussianScene& scene, std::size_t i, const Camera& cam,
                                     double regularizer = 0.3) {
    const auto r = static_cast<Eigen::Index>(i);
    const Eigen::Vector3d mean = scene.positions.row(r).transpose().cast<double>();
    Eigen::Matrix<double, 2, 3> jac;
    const double h = 1e-5 * std::max(1.0, mean.norm());
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[a] = h;
        jac.col(a) = (pinhole(cam, mean + e) - pinhole(cam, mean - e)) / (2 * h);
    }
    const Eigen::Matrix3d rot = quat_matrix(scene.rotations(r, 0), scene.rotations(r, 1), scene.rotations(r, 2),
                                            scene.rotations(r, 3));
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    for (int a = 0; a < 3; ++a) s(a, a) = static_cast<double>(scene.scales(r, a)) * scene.scales(r, a);
    const Eigen::Matrix3d sigma = rot * s * rot.transpose();
    return jac * sigma * jac.transpose() + regularizer * Eigen::Matrix2d::Identity();
}

inline Eigen::Matrix2d inverse2(const Eigen::Matrix2d& m, double det) {
    Eigen::Matrix2d inv;
    inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return inv / det;
}

struct NaiveImage {
    RowMatrix<double> channels; // (H*W) x C
    std::vector<double> alpha;
};

/// Per-pixel O(N) blend over every Gaussian with no tiling, no precomputed
/// splats and no sparse structure.
inline NaiveImage naive_render(const GaussianScene& scene, const Camera& cam, const RowMatrix<double>& values,
                               const RasterConfig& cfg = {}) {
    struct Item {
        double depth;
        std::uint32_t index;
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
        double radius2;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Eigen::Vector3d p =
            cam.rotation * scene.positions.row(static_cast<Eigen::Index>(i)).transpose().cast<double>() +
            cam.translation;
        if (p.z() <= cfg.near_plane) continue;
        const Eigen::Matrix2d cov = numeric_cov2d(scene, i, cam, cfg.cov_regularizer);
        const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
        const double tr = cov(0, 0) + cov(1, 1);
        const double lmax = 0.5 * tr + std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
        const double radius = cfg.radius_sigmas * std::sqrt(lmax);
        items.push_back({p.z(), static_cast<std::uint32_t>(i), pinhole(cam, scene.positions.row(static_cast<Eigen::Index>(i)).transpose().cast<double>()),
                         inverse2(cov, det), radius * radius});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });
    NaiveImage out;
    out.channels = RowMatrix<double>::Zero(static_cast<Eigen::Index>(cam.pixel_count()), values.cols());
    out.alpha.assign(cam.pixel_count(), 0.0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
            double t = 1.0;
            for (const auto& it : items) {
                const Eigen::Vector2d d(x - it.mean.x(), y - it.mean.y());
                if (d.squaredNorm() > it.radius2) continue;
                const double a = std::min(cfg.alpha_clamp, scene.opacities[it.index] * std::exp(-0.5 * d.dot(it.inv * d)));
                if (!(a > 0.0)) continue;
                out.channels.row(static_cast<Eigen::Index>(pix)) += a * t * values.row(it.index);
                out.alpha[pix] += a * t;
                t *= 1.0 - a;
                if (t < cfg.min_transmittance) break;
            }
        }
    return out;
}

/// Tiny scene with one Gaussian centred on the optical axis.
inline GaussianScene single_gaussian(float opacity, const std::vector<float>& feature, double z = 5.0) {
    GaussianScene scene(static_cast<int>(feature.size()), 4);
    scene.resize(1);
    scene.positions.row(0) << 0.f, 0.f, static_cast<float>(z);
    scene.scales.row(0).setConstant(0.1f);
    scene.rotations.row(0) << 1.f, 0.f, 0.f, 0.f;
    scene.opacities[0] = opacity;
    scene.colors.row(0).setConstant(0.5f);
    for (std::size_t c = 0; c < feature.size(); ++c) scene.instance(0, static_cast<Eigen::Index>(c)) = feature[c];
    return scene;
}

/// Runs fn and reports the Error it throws; an empty code means nothing or
/// something else was thrown.
struct Caught {
    bool thrown = false;
    Errc code = Errc::invalid_argument;
    std::string message;
    bool is(Errc c) const { return thrown && code == c; }
    bool mentions(const std::string& s) const { return message.find(s) != std::string::npos; }
};

inline Caught catch_error(const std::function<void()>& fn) {
    Caught c;
    try {
        fn();
    } catch (const Error& e) {
        c.thrown = true;
        c.code = e.code();
        c.message = e.what();
    }
    return c;
}

inline std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Every regular file under dir (relative path -> bytes).
inline std::vector<std::pair<std::string, std::string>> tree_bytes(const std::filesystem::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            out.emplace_back(std::filesystem::relative(e.path(), dir).string(), file_bytes(e.path()));
    std::sort(out.begin(), out.end());
    return out;
}

inline double max_abs(const RowMatrix<double>& a, const RowMatrix<double>& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

} // namespace splatseg::test
