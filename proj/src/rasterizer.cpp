// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/rasterizer.hpp"

#include "splatseg/error.hpp"
#include "splatseg/parallel.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>

namespace splatseg {

Eigen::Matrix3d covariance3d(const GaussianScene& scene, std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Eigen::Quaterniond q(scene.rotations(r, 0), scene.rotations(r, 1), scene.rotations(r, 2),
                               scene.rotations(r, 3));
    const Eigen::Matrix3d rot = q.normalized().toRotationMatrix();
    const Eigen::Vector3d s = scene.scales.row(r).transpose().cast<double>();
    const Eigen::Matrix3d m = rot * s.asDiagonal();
    return m * m.transpose();
}

double splat_alpha(const Splat2D& splat, double opacity, double x, double y) {
    const Eigen::Vector2d d(x - splat.mean2d.x(), y - splat.mean2d.y());
    const double power = -0.5 * d.dot(splat.conic * d);
    return opacity * std::exp(power);
}

Projection project(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg,
                   std::span<const std::uint8_t> include) {
    camera.validate();
    if (!include.empty() && include.size() != scene.size())
        throw Error(Errc::shape_mismatch, "project: include mask length != n_gaussians");

    Projection out;
    out.splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!include.empty() && include[i] == 0) continue;
        const auto r = static_cast<Eigen::Index>(i);
        const Eigen::Vector3d p = camera.to_camera(scene.positions.row(r).transpose().cast<double>());
        if (!(p.z() > cfg.near_plane)) {
            ++out.culled_near;
            continue;
        }
        const double inv_z = 1.0 / p.z();
        Eigen::Matrix<double, 2, 3> jac;
        jac << camera.fx * inv_z, 0.0, -camera.fx * p.x() * inv_z * inv_z,
               0.0, camera.fy * inv_z, -camera.fy * p.y() * inv_z * inv_z;
        const Eigen::Matrix<double, 2, 3> t = jac * camera.rotation;
        Eigen::Matrix2d cov = t * covariance3d(scene, i) * t.transpose();
        cov += cfg.cov_regularizer * Eigen::Matrix2d::Identity();

        const double det = cov.determinant();
        if (!cov.allFinite() || !(det > 0.0) || !(cov(0, 0) > 0.0)) {
            ++out.dropped_degenerate;
            continue;
        }
        const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));

        Splat2D s;
        s.mean2d = {camera.fx * p.x() * inv_z + camera.cx, camera.fy * p.y() * inv_z + camera.cy};
        s.cov2d = cov;
        s.conic = cov.inverse();
        s.depth = p.z();
        s.gaussian_index = static_cast<std::uint32_t>(i);
        s.radius = cfg.radius_sigmas * std::sqrt(lambda_max);

        const bool outside = s.mean2d.x() + s.radius < 0.0 || s.mean2d.y() + s.radius < 0.0 ||
                             s.mean2d.x() - s.radius > camera.width - 1 ||
                             s.mean2d.y() - s.radius > camera.height - 1;
        if (outside || !s.mean2d.allFinite()) {
            ++out.culled_outside;
            continue;
        }
        out.splats.push_back(s);
    }
    std::sort(out.splats.begin(), out.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.gaussian_index < b.gaussian_index;
    });
    return out;
}

FeatureMatrix channel_values(const GaussianScene& scene, ChannelSelector selector) {
    switch (selector) {
    case ChannelSelector::color: return scene.colors;
    case ChannelSelector::instance: return scene.instance;
    case ChannelSelector::language:
        if (!scene.has_language())
            throw Error(Errc::stage_order, "render: language field not materialized");
        return scene.language;
    case ChannelSelector::object_id_onehot: {
        if (!scene.has_object_ids())
            throw Error(Errc::invalid_argument, "render: scene has no gt object ids");
        FeatureMatrix onehot = FeatureMatrix::Zero(static_cast<Eigen::Index>(scene.size()),
                                                   static_cast<Eigen::Index>(scene.max_object_id()) + 1);
        for (std::size_t i = 0; i < scene.size(); ++i)
            onehot(static_cast<Eigen::Index>(i), scene.object_ids[i]) = 1.f;
        return onehot;
    }
    }
    throw Error(Errc::invalid_argument, "render: unknown channel selector");
}

BlendPlan BlendPlan::build(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg,
                           std::span<const std::uint8_t> include) {
    if (cfg.tile_size < 1) throw Error(Errc::invalid_argument, "rasterizer: tile_size must be >= 1");
    BlendPlan plan;
    plan.width_ = camera.width;
    plan.height_ = camera.height;
    plan.num_gaussians_ = scene.size();
    plan.projection_ = project(scene, camera, cfg, include);
    const auto& splats = plan.projection_.splats;

    const int ts = cfg.tile_size;
    const int tiles_x = (camera.width + ts - 1) / ts;
    const int tiles_y = (camera.height + ts - 1) / ts;
    std::vector<std::vector<std::uint32_t>> tile_lists(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t s = 0; s < splats.size(); ++s) {
        const auto& sp = splats[s];
        const int x0 = std::max(0, static_cast<int>(std::ceil(sp.mean2d.x() - sp.radius)));
        const int x1 = std::min(camera.width - 1, static_cast<int>(std::floor(sp.mean2d.x() + sp.radius)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(sp.mean2d.y() - sp.radius)));
        const int y1 = std::min(camera.height - 1, static_cast<int>(std::floor(sp.mean2d.y() + sp.radius)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / ts; ty <= y1 / ts; ++ty)
            for (int tx = x0 / ts; tx <= x1 / ts; ++tx)
                tile_lists[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<std::uint32_t>(s));
    }

    const std::size_t npix = camera.pixel_count();
    plan.alpha_.assign(npix, 0.0);
    std::vector<std::size_t> counts(npix, 0);
    std::vector<std::vector<Contribution>> tile_entries(tile_lists.size());

    parallel_for(0, tile_lists.size(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % tiles_x);
        const int ty = static_cast<int>(t / tiles_x);
        const auto& list = tile_lists[t];
        auto& entries = tile_entries[t];
        for (int py = ty * ts; py < std::min(camera.height, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(camera.width, (tx + 1) * ts); ++px) {
                const std::size_t pixel = static_cast<std::size_t>(py) * camera.width + px;
                double transmittance = 1.0;
                double accumulated = 0.0;
                std::size_t n = 0;
                for (std::uint32_t s : list) {
                    const auto& sp = splats[s];
                    const double dx = px - sp.mean2d.x();
                    const double dy = py - sp.mean2d.y();
                    if (dx * dx + dy * dy > sp.radius * sp.radius) continue;
                    const double opacity = scene.opacities[sp.gaussian_index];
                    const double alpha = std::min(cfg.alpha_clamp, splat_alpha(sp, opacity, px, py));
                    if (!(alpha > 0.0)) continue;
                    const double w = alpha * transmittance;
                    entries.push_back({sp.gaussian_index, w});
                    accumulated += w;
                    ++n;
                    transmittance *= 1.0 - alpha;
                    if (transmittance < cfg.min_transmittance) break;
                }
                counts[pixel] = n;
                plan.alpha_[pixel] = accumulated;
            }
        }
    });

    plan.pixel_offsets_.assign(npix + 1, 0);
    for (std::size_t p = 0; p < npix; ++p) plan.pixel_offsets_[p + 1] = plan.pixel_offsets_[p] + counts[p];
    plan.entries_.resize(plan.pixel_offsets_[npix]);
    parallel_for(0, tile_lists.size(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % tiles_x);
        const int ty = static_cast<int>(t / tiles_x);
        std::size_t k = 0;
        const auto& entries = tile_entries[t];
        for (int py = ty * ts; py < std::min(camera.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(camera.width, (tx + 1) * ts); ++px) {
                const std::size_t pixel = static_cast<std::size_t>(py) * camera.width + px;
                std::copy_n(entries.begin() + static_cast<std::ptrdiff_t>(k), counts[pixel],
                            plan.entries_.begin() + static_cast<std::ptrdiff_t>(plan.pixel_offsets_[pixel]));
                k += counts[pixel];
            }
    });

    const std::size_t ng = plan.num_gaussians_;
    plan.gaussian_offsets_.assign(ng + 1, 0);
    for (const auto& e : plan.entries_) ++plan.gaussian_offsets_[e.gaussian_index + 1];
    for (std::size_t g = 0; g < ng; ++g) plan.gaussian_offsets_[g + 1] += plan.gaussian_offsets_[g];
    plan.transpose_pixels_.resize(plan.entries_.size());
    plan.transpose_weights_.resize(plan.entries_.size());
    std::vector<std::size_t> cursor(plan.gaussian_offsets_.begin(), plan.gaussian_offsets_.end() - 1);
    for (std::size_t p = 0; p < npix; ++p)
        for (std::size_t k = plan.pixel_offsets_[p]; k < plan.pixel_offsets_[p + 1]; ++k) {
            const auto& e = plan.entries_[k];
            const std::size_t slot = cursor[e.gaussian_index]++;
            plan.transpose_pixels_[slot] = static_cast<std::uint32_t>(p);
            plan.transpose_weights_[slot] = e.weight;
        }
    return plan;
}

std::span<const Contribution> BlendPlan::contributors(std::size_t pixel) const {
    return {entries_.data() + pixel_offsets_[pixel], pixel_offsets_[pixel + 1] - pixel_offsets_[pixel]};
}

template <class T>
RowMatrix<T> BlendPlan::forward(const RowMatrix<T>& values) const {
    if (static_cast<std::size_t>(values.rows()) != num_gaussians_)
        throw Error(Errc::shape_mismatch, "render: channel rows != n_gaussians");
    RowMatrix<T> out = RowMatrix<T>::Zero(static_cast<Eigen::Index>(pixel_count()), values.cols());
    parallel_for(0, pixel_count(), [&](std::size_t p) {
        auto row = out.row(static_cast<Eigen::Index>(p));
        for (const auto& c : contributors(p)) row += static_cast<T>(c.weight) * values.row(c.gaussian_index);
    });
    return out;
}

template <class T>
RowMatrix<T> BlendPlan::forward_pixels(const RowMatrix<T>& values, std::span<const std::uint32_t> pixels) const {
    if (static_cast<std::size_t>(values.rows()) != num_gaussians_)
        throw Error(Errc::shape_mismatch, "render: channel rows != n_gaussians");
    RowMatrix<T> out = RowMatrix<T>::Zero(static_cast<Eigen::Index>(pixels.size()), values.cols());
    for (std::size_t k = 0; k < pixels.size(); ++k) {
        auto row = out.row(static_cast<Eigen::Index>(k));
        for (const auto& c : contributors(pixels[k])) row += static_cast<T>(c.weight) * values.row(c.gaussian_index);
    }
    return out;
}

template <class T>
RowMatrix<T> BlendPlan::backward(const RowMatrix<T>& upstream) const {
    if (static_cast<std::size_t>(upstream.rows()) != pixel_count())
        throw Error(Errc::shape_mismatch, "render_backward: upstream rows != width*height");
    RowMatrix<T> grad = RowMatrix<T>::Zero(static_cast<Eigen::Index>(num_gaussians_), upstream.cols());
    parallel_for(0, num_gaussians_, [&](std::size_t g) {
        auto row = grad.row(static_cast<Eigen::Index>(g));
        for (std::size_t k = gaussian_offsets_[g]; k < gaussian_offsets_[g + 1]; ++k)
            row += static_cast<T>(transpose_weights_[k]) * upstream.row(transpose_pixels_[k]);
    });
    return grad;
}

template <class T>
RowMatrix<T> BlendPlan::backward_pixels(const RowMatrix<T>& upstream, std::span<const std::uint32_t> pixels) const {
    if (static_cast<std::size_t>(upstream.rows()) != pixels.size())
        throw Error(Errc::shape_mismatch, "render_backward: upstream rows != pixel list length");
    RowMatrix<T> grad = RowMatrix<T>::Zero(static_cast<Eigen::Index>(num_gaussians_), upstream.cols());
    for (std::size_t k = 0; k < pixels.size(); ++k)
        for (const auto& c : contributors(pixels[k]))
            grad.row(c.gaussian_index) += static_cast<T>(c.weight) * upstream.row(static_cast<Eigen::Index>(k));
    return grad;
}

template RowMatrix<float> BlendPlan::forward(const RowMatrix<float>&) const;
template RowMatrix<double> BlendPlan::forward(const RowMatrix<double>&) const;
template RowMatrix<float> BlendPlan::forward_pixels(const RowMatrix<float>&, std::span<const std::uint32_t>) const;
template RowMatrix<double> BlendPlan::forward_pixels(const RowMatrix<double>&, std::span<const std::uint32_t>) const;
template RowMatrix<float> BlendPlan::backward(const RowMatrix<float>&) const;
template RowMatrix<double> BlendPlan::backward(const RowMatrix<double>&) const;
template RowMatrix<float> BlendPlan::backward_pixels(const RowMatrix<float>&, std::span<const std::uint32_t>) const;
template RowMatrix<double> BlendPlan::backward_pixels(const RowMatrix<double>&, std::span<const std::uint32_t>) const;

RenderOutput render(const GaussianScene& scene, const Camera& camera, ChannelSelector selector,
                    const RasterConfig& cfg, bool keep_contributors) {
    const BlendPlan plan = BlendPlan::build(scene, camera, cfg);
    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    out.channels = plan.forward(channel_values(scene, selector));
    out.alpha.assign(plan.alpha().begin(), plan.alpha().end());
    if (keep_contributors) {
        std::vector<std::vector<Contribution>> lists(plan.pixel_count());
        for (std::size_t p = 0; p < plan.pixel_count(); ++p) {
            const auto c = plan.contributors(p);
            lists[p].assign(c.begin(), c.end());
        }
        out.contributors = std::move(lists);
    }
    return out;
}

FeatureMatrix render_backward(const GaussianScene& scene, const Camera& camera, ChannelSelector selector,
                              const FeatureMatrix& upstream, const RasterConfig& cfg) {
    const FeatureMatrix values = channel_values(scene, selector);
    if (static_cast<std::size_t>(upstream.rows()) != camera.pixel_count() || upstream.cols() != values.cols())
        throw Error(Errc::shape_mismatch, "render_backward: upstream shape [" + std::to_string(upstream.rows()) +
                                              "," + std::to_string(upstream.cols()) + "] does not match forward [" +
                                              std::to_string(camera.pixel_count()) + "," +
                                              std::to_string(values.cols()) + "]");
    const BlendPlan plan = BlendPlan::build(scene, camera, cfg);
    return plan.backward(upstream);
}

std::vector<std::uint32_t> dominant_object_mask(const BlendPlan& plan, const std::vector<ObjectId>& object_ids,
                                                double min_alpha) {
    std::vector<std::uint32_t> mask(plan.pixel_count(), 0);
    for (std::size_t p = 0; p < plan.pixel_count(); ++p) {
        if (plan.alpha()[p] < min_alpha) continue;
        double best = -1.0;
        std::uint32_t best_index = 0;
        for (const auto& c : plan.contributors(p))
            if (c.weight > best) {
                best = c.weight;
                best_index = c.gaussian_index;
            }
        if (best > 0.0) mask[p] = object_ids.at(best_index);
    }
    return mask;
}

} // namespace splatseg
