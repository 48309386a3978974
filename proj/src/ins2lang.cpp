// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/ins2lang.hpp"

#include "splatseg/error.hpp"
#include "splatseg/instance_field.hpp"
#include "splatseg/parallel.hpp"
#include "splatseg/scene_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace splatseg {

namespace fs = std::filesystem;
using nlohmann::json;

MappingPairSet build_training_pairs(const GaussianScene& scene, const PairConfig& cfg) {
    struct Pair {
        Eigen::VectorXd instance;
        Eigen::VectorXd language;
        PairSource source;
    };
    std::vector<std::vector<Pair>> per_view(scene.views.size());
    const RowMatrix<double> values = scene.instance.cast<double>();

    parallel_for(0, scene.views.size(), [&](std::size_t k) {
        const auto& view = scene.views[k];
        const BlendPlan plan = BlendPlan::build(scene, view.camera, cfg.raster);
        const RowMatrix<double> rendered = plan.forward(values);

        std::map<SegmentId, std::pair<Eigen::VectorXd, int>> sums;
        for (std::size_t p = 0; p < view.instance_mask.size(); ++p) {
            const SegmentId id = view.instance_mask[p];
            if (id == 0 || plan.alpha()[p] < cfg.min_alpha || view.segment_language.count(id) == 0) continue;
            auto [it, inserted] = sums.try_emplace(id, Eigen::VectorXd::Zero(scene.d_instance), 0);
            it->second.first += rendered.row(static_cast<Eigen::Index>(p)).transpose();
            ++it->second.second;
        }
        for (const auto& [id, acc] : sums) {
            if (acc.second < cfg.min_pixels) continue;
            const auto& lang = view.segment_language.at(id);
            Eigen::VectorXd l = Eigen::Map<const Eigen::VectorXf>(lang.data(), static_cast<Eigen::Index>(lang.size()))
                                    .cast<double>();
            const double norm = l.norm();
            if (!(norm > 0.0)) continue;
            per_view[k].push_back({acc.first / acc.second, l / norm, {static_cast<std::uint32_t>(k), id}});
        }
    });

    MappingPairSet out;
    std::size_t m = 0;
    for (const auto& v : per_view) m += v.size();
    if (m == 0)
        throw Error(Errc::no_supervision,
                    "ins2lang: zero training pairs (no labeled segment with a language entry reaches min_pixels "
                    "covered pixels)");
    out.instance.resize(static_cast<Eigen::Index>(m), scene.d_instance);
    out.language.resize(static_cast<Eigen::Index>(m), scene.d_language);
    Eigen::Index row = 0;
    for (const auto& v : per_view)
        for (const auto& pair : v) {
            out.instance.row(row) = pair.instance.cast<float>().transpose();
            out.language.row(row) = pair.language.cast<float>().transpose();
            out.source.push_back(pair.source);
            ++row;
        }
    return out;
}

KernelMapping make_kernel_mapping(const MappingPairSet& pairs, double sigma, std::size_t max_pairs,
                                  std::uint64_t seed) {
    if (!(sigma > 0.0)) throw Error(Errc::invalid_argument, "kernel mapping: sigma must be positive");
    if (pairs.size() == 0) throw Error(Errc::no_supervision, "kernel mapping: empty pair set");
    KernelMapping phi;
    phi.sigma = sigma;
    if (max_pairs == 0 || pairs.size() <= max_pairs) {
        phi.pairs = pairs;
        return phi;
    }
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_pairs);
    std::sort(idx.begin(), idx.end());
    phi.pairs.instance.resize(static_cast<Eigen::Index>(max_pairs), pairs.instance.cols());
    phi.pairs.language.resize(static_cast<Eigen::Index>(max_pairs), pairs.language.cols());
    for (std::size_t k = 0; k < max_pairs; ++k) {
        const auto src = static_cast<Eigen::Index>(idx[k]);
        phi.pairs.instance.row(static_cast<Eigen::Index>(k)) = pairs.instance.row(src);
        phi.pairs.language.row(static_cast<Eigen::Index>(k)) = pairs.language.row(src);
        phi.pairs.source.push_back(pairs.source[idx[k]]);
    }
    return phi;
}

Eigen::VectorXd kernel_regress_raw(const KernelMapping& phi, std::span<const float> instance) {
    const auto& pairs = phi.pairs;
    const Eigen::Index m = pairs.instance.rows();
    if (m == 0) throw Error(Errc::no_supervision, "kernel mapping: empty pair set");
    if (static_cast<Eigen::Index>(instance.size()) != pairs.instance.cols())
        throw Error(Errc::shape_mismatch, "kernel mapping: instance feature length != d_I");

    const Eigen::VectorXd x =
        Eigen::Map<const Eigen::VectorXf>(instance.data(), static_cast<Eigen::Index>(instance.size())).cast<double>();
    Eigen::VectorXd logits(m);
    const double inv_two_var = 1.0 / (2.0 * phi.sigma * phi.sigma);
    Eigen::Index nearest = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
        logits[k] = -(pairs.instance.row(k).cast<double>().transpose() - x).squaredNorm() * inv_two_var;
        if (logits[k] > logits[nearest]) nearest = k;
    }
    const double peak = logits[nearest];
    Eigen::VectorXd out = Eigen::VectorXd::Zero(pairs.language.cols());
    double total = 0.0;
    if (std::isfinite(peak)) {
        for (Eigen::Index k = 0; k < m; ++k) {
            const double w = std::exp(logits[k] - peak);
            if (w == 0.0) continue;
            out += w * pairs.language.row(k).cast<double>().transpose();
            total += w;
        }
    }
    if (!(total > 0.0) || !std::isfinite(total)) return pairs.language.row(nearest).cast<double>().transpose();
    return out / total;
}

Eigen::VectorXf kernel_regress(const KernelMapping& phi, std::span<const float> instance) {
    const Eigen::VectorXd raw = kernel_regress_raw(phi, instance);
    const double norm = raw.norm();
    if (norm > 0.0) return (raw / norm).cast<float>();
    // Targets cancelled exactly; use the nearest pair's language.
    const Eigen::VectorXf x =
        Eigen::Map<const Eigen::VectorXf>(instance.data(), static_cast<Eigen::Index>(instance.size()));
    Eigen::Index nearest = 0;
    (phi.pairs.instance.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
    return phi.pairs.language.row(nearest).transpose();
}

namespace {

template <class M>
M softplus(const M& z) {
    // log(1 + e^z) = max(z, 0) + log1p(e^-|z|)
    return z.unaryExpr([](float v) { return std::max(v, 0.f) + std::log1p(std::exp(-std::abs(v))); });
}

template <class M>
M sigmoid(const M& z) {
    return z.unaryExpr([](float v) {
        if (v >= 0.f) return 1.f / (1.f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.f + e);
    });
}

struct AdamSlot {
    RowMatrix<float> m, v;
    void init(Eigen::Index r, Eigen::Index c) {
        m = RowMatrix<float>::Zero(r, c);
        v = RowMatrix<float>::Zero(r, c);
    }
    template <class P, class G>
    void step(P& param, const G& grad, float lr, float c1, float c2) {
        m = 0.9f * m + 0.1f * grad;
        v = 0.999f * v + 0.001f * grad.cwiseAbs2();
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8f);
    }
};

} // namespace

Eigen::VectorXf MlpMapping::forward(std::span<const float> instance) const {
    if (widths.empty() || static_cast<int>(instance.size()) != widths.front())
        throw Error(Errc::shape_mismatch, "mlp mapping: instance feature length != input width");
    Eigen::VectorXf h = Eigen::Map<const Eigen::VectorXf>(instance.data(), static_cast<Eigen::Index>(instance.size()));
    for (std::size_t k = 0; k < weights.size(); ++k) {
        Eigen::VectorXf z = weights[k] * h + biases[k];
        h = (k + 1 < weights.size()) ? softplus(z) : z;
    }
    return h;
}

MlpFit fit_mlp(const MappingPairSet& pairs, const MlpConfig& cfg, const std::function<void(int, double)>& progress) {
    const Eigen::Index m = pairs.instance.rows();
    if (m < 2) throw Error(Errc::invalid_argument, "fit_mlp: need at least two pairs");
    if (cfg.steps < 0 || cfg.hidden < 1 || !(cfg.learning_rate > 0.0))
        throw Error(Errc::invalid_argument, "fit_mlp: invalid configuration");

    const int d_in = static_cast<int>(pairs.instance.cols());
    const int d_out = static_cast<int>(pairs.language.cols());
    MlpFit fit;
    auto& net = fit.mapping;
    net.widths = {d_in, cfg.hidden, cfg.hidden, d_out};

    std::mt19937_64 rng(cfg.seed);
    for (std::size_t k = 0; k + 1 < net.widths.size(); ++k) {
        const int in = net.widths[k];
        const int out = net.widths[k + 1];
        const float bound = 1.f / std::sqrt(static_cast<float>(in));
        std::uniform_real_distribution<float> init(-bound, bound);
        RowMatrix<float> w(out, in);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init(rng);
        Eigen::VectorXf b(out);
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = init(rng);
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }

    std::vector<AdamSlot> wslots(3), bslots(3);
    for (std::size_t k = 0; k < 3; ++k) {
        wslots[k].init(net.weights[k].rows(), net.weights[k].cols());
        bslots[k].init(1, net.biases[k].size());
    }

    const RowMatrix<float>& x = pairs.instance;
    const RowMatrix<float>& target = pairs.language;
    const float inv_count = 1.f / static_cast<float>(m * d_out);

    auto evaluate = [&](RowMatrix<float>& z1, RowMatrix<float>& h1, RowMatrix<float>& z2, RowMatrix<float>& h2,
                        RowMatrix<float>& y) {
        z1 = (x * net.weights[0].transpose()).rowwise() + net.biases[0].transpose();
        h1 = softplus(z1);
        z2 = (h1 * net.weights[1].transpose()).rowwise() + net.biases[1].transpose();
        h2 = softplus(z2);
        y = (h2 * net.weights[2].transpose()).rowwise() + net.biases[2].transpose();
        return static_cast<double>((y - target).cwiseAbs().sum()) * inv_count;
    };

    RowMatrix<float> z1, h1, z2, h2, y;
    fit.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const double loss = evaluate(z1, h1, z2, h2, y);
        if (!std::isfinite(loss))
            throw Error(Errc::non_finite, "fit_mlp: non-finite loss at step " + std::to_string(step));
        fit.loss_trace.push_back(loss);
        if (progress) progress(step, loss);

        const RowMatrix<float> dy = (y - target).unaryExpr([&](float v) {
            return v > 0.f ? inv_count : (v < 0.f ? -inv_count : 0.f);
        });
        const RowMatrix<float> dw2 = dy.transpose() * h2;
        const Eigen::RowVectorXf db2 = dy.colwise().sum();
        const RowMatrix<float> dz2 = (dy * net.weights[2]).cwiseProduct(sigmoid(z2));
        const RowMatrix<float> dw1 = dz2.transpose() * h1;
        const Eigen::RowVectorXf db1 = dz2.colwise().sum();
        const RowMatrix<float> dz1 = (dz2 * net.weights[1]).cwiseProduct(sigmoid(z1));
        const RowMatrix<float> dw0 = dz1.transpose() * x;
        const Eigen::RowVectorXf db0 = dz1.colwise().sum();

        const float t = static_cast<float>(step + 1);
        const float c1 = 1.f - std::pow(0.9f, t);
        const float c2 = 1.f - std::pow(0.999f, t);
        const float lr = static_cast<float>(cfg.learning_rate);
        wslots[0].step(net.weights[0], dw0, lr, c1, c2);
        wslots[1].step(net.weights[1], dw1, lr, c1, c2);
        wslots[2].step(net.weights[2], dw2, lr, c1, c2);
        auto b0 = net.biases[0].transpose();
        auto b1 = net.biases[1].transpose();
        auto b2 = net.biases[2].transpose();
        bslots[0].step(b0, db0, lr, c1, c2);
        bslots[1].step(b1, db1, lr, c1, c2);
        bslots[2].step(b2, db2, lr, c1, c2);
    }
    net.final_error = evaluate(z1, h1, z2, h2, y);
    for (const auto& w : net.weights)
        if (!w.allFinite()) throw Error(Errc::non_finite, "fit_mlp: non-finite weights after training");
    return fit;
}

std::string mapping_kind(const MappingFunction& phi) {
    return std::holds_alternative<KernelMapping>(phi) ? "kernel" : "mlp";
}

Eigen::VectorXf map_feature(const MappingFunction& phi, std::span<const float> instance) {
    if (const auto* kernel = std::get_if<KernelMapping>(&phi)) return kernel_regress(*kernel, instance);
    Eigen::VectorXf out = std::get<MlpMapping>(phi).forward(instance);
    const float norm = out.norm();
    if (norm > 0.f) out /= norm;
    return out;
}

void apply_mapping(GaussianScene& scene, const MappingFunction& phi) {
    const Eigen::Index n = static_cast<Eigen::Index>(scene.size());
    FeatureMatrix language(n, scene.d_language);
    parallel_for(0, scene.size(), [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        const Eigen::VectorXf l = map_feature(
            phi, std::span<const float>(scene.instance.row(row).data(), static_cast<std::size_t>(scene.d_instance)));
        if (l.size() != scene.d_language)
            throw Error(Errc::shape_mismatch, "apply_mapping: mapping output length != d_L");
        language.row(row) = l.transpose();
    });
    scene.language = std::move(language);
    scene.stage.mapped = mapping_kind(phi);
}

void save_mapping(const MappingFunction& phi, const fs::path& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["kind"] = mapping_kind(phi);
    if (const auto* kernel = std::get_if<KernelMapping>(&phi)) {
        const auto& pairs = kernel->pairs;
        manifest["sigma"] = kernel->sigma;
        manifest["M"] = pairs.size();
        manifest["d_I"] = pairs.instance.cols();
        manifest["d_L"] = pairs.language.cols();
        write_matrix(dir / "pairs_instance.f32", pairs.instance);
        write_matrix(dir / "pairs_language.f32", pairs.language);
        std::vector<std::uint32_t> src;
        for (const auto& s : pairs.source) {
            src.push_back(s.view_index);
            src.push_back(s.segment);
        }
        write_u32(dir / "pairs_source.u32", src);
    } else {
        const auto& mlp = std::get<MlpMapping>(phi);
        manifest["widths"] = mlp.widths;
        manifest["activation"] = mlp.activation;
        manifest["final_error"] = mlp.final_error;
        for (std::size_t k = 0; k < mlp.weights.size(); ++k) {
            write_matrix(dir / ("layer" + std::to_string(k) + "_weight.f32"), mlp.weights[k]);
            write_f32(dir / ("layer" + std::to_string(k) + "_bias.f32"),
                      std::span<const float>(mlp.biases[k].data(), static_cast<std::size_t>(mlp.biases[k].size())));
        }
    }
    write_text(dir / "mapping.json", manifest.dump(1) + "\n");
}

MappingFunction load_mapping(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "mapping.json", "mapping manifest"));
        const std::string kind = manifest.at("kind").get<std::string>();
        if (kind == "kernel") {
            KernelMapping phi;
            phi.sigma = manifest.at("sigma").get<double>();
            const auto m = manifest.at("M").get<std::size_t>();
            const auto di = manifest.at("d_I").get<std::size_t>();
            const auto dl = manifest.at("d_L").get<std::size_t>();
            phi.pairs.instance = read_matrix(dir / "pairs_instance.f32", m, di, "pairs_instance");
            phi.pairs.language = read_matrix(dir / "pairs_language.f32", m, dl, "pairs_language");
            const auto src = read_u32(dir / "pairs_source.u32", 2 * m, "pairs_source");
            for (std::size_t k = 0; k < m; ++k) phi.pairs.source.push_back({src[2 * k], src[2 * k + 1]});
            if (!(phi.sigma > 0.0)) throw Error(Errc::invalid_argument, "mapping: sigma must be positive");
            return phi;
        }
        if (kind == "mlp") {
            MlpMapping mlp;
            mlp.widths = manifest.at("widths").get<std::vector<int>>();
            mlp.activation = manifest.value("activation", "softplus");
            mlp.final_error = manifest.value("final_error", 0.0);
            if (mlp.widths.size() < 2) throw Error(Errc::invalid_argument, "mapping: mlp needs >= 2 widths");
            for (std::size_t k = 0; k + 1 < mlp.widths.size(); ++k) {
                const auto in = static_cast<std::size_t>(mlp.widths[k]);
                const auto out = static_cast<std::size_t>(mlp.widths[k + 1]);
                mlp.weights.push_back(read_matrix(dir / ("layer" + std::to_string(k) + "_weight.f32"), out, in,
                                                  "layer" + std::to_string(k) + " weight"));
                const auto b = read_f32(dir / ("layer" + std::to_string(k) + "_bias.f32"), out,
                                        "layer" + std::to_string(k) + " bias");
                mlp.biases.emplace_back(Eigen::Map<const Eigen::VectorXf>(b.data(), static_cast<Eigen::Index>(out)));
            }
            return mlp;
        }
        throw Error(Errc::invalid_argument, "mapping: unknown kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("mapping: malformed manifest (") + e.what() + ")");
    }
}

std::vector<double> train_language_direct(GaussianScene& scene, const DirectLanguageConfig& cfg) {
    if (cfg.steps < 0 || cfg.samples_per_segment < 1 || !(cfg.learning_rate > 0.0))
        throw Error(Errc::invalid_argument, "direct language training: invalid configuration");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 0.01);
    const Eigen::Index n = static_cast<Eigen::Index>(scene.size());
    RowMatrix<double> params(n, scene.d_language);
    for (Eigen::Index i = 0; i < params.size(); ++i) params.data()[i] = normal(rng);

    struct ViewData {
        std::size_t index;
        BlendPlan plan;
        std::map<SegmentId, std::vector<std::uint32_t>> segments;
    };
    std::vector<ViewData> views;
    for (std::size_t k = 0; k < scene.views.size(); ++k) {
        auto segments = segment_pixels(scene.views[k]);
        std::erase_if(segments, [&](const auto& kv) {
            return kv.second.size() < 2 || scene.views[k].segment_language.count(kv.first) == 0;
        });
        if (segments.empty()) continue;
        views.push_back({k, BlendPlan::build(scene, scene.views[k].camera, cfg.raster), std::move(segments)});
    }
    if (views.empty()) throw Error(Errc::no_supervision, "direct language training: no labeled segments");

    RowMatrix<double> m1 = RowMatrix<double>::Zero(n, scene.d_language);
    RowMatrix<double> m2 = m1;
    std::vector<double> trace;
    for (int step = 0; step < cfg.steps; ++step) {
        const ViewData& view = views[static_cast<std::size_t>(step) % views.size()];
        const PixelSampleBatch batch = sample_pixels(view.segments, view.index, cfg.samples_per_segment, rng);
        const auto pixels = batch.pixels();
        const RowMatrix<double> rendered = view.plan.forward_pixels(params, pixels);
        RowMatrix<double> upstream(rendered.rows(), rendered.cols());
        double loss = 0.0;
        const double inv = 1.0 / static_cast<double>(rendered.size());
        for (std::size_t k = 0; k < batch.samples.size(); ++k) {
            const auto& target = scene.views[view.index].segment_language.at(batch.samples[k].segment);
            for (Eigen::Index d = 0; d < rendered.cols(); ++d) {
                const double diff = rendered(static_cast<Eigen::Index>(k), d) - target[static_cast<std::size_t>(d)];
                loss += std::abs(diff) * inv;
                upstream(static_cast<Eigen::Index>(k), d) = diff > 0 ? inv : (diff < 0 ? -inv : 0.0);
            }
        }
        const RowMatrix<double> grad = view.plan.backward_pixels(upstream, pixels);
        const double t = step + 1.0;
        m1 = 0.9 * m1 + 0.1 * grad;
        m2 = 0.999 * m2 + 0.001 * grad.cwiseAbs2();
        params.array() -= cfg.learning_rate * (m1.array() / (1.0 - std::pow(0.9, t))) /
                          ((m2.array() / (1.0 - std::pow(0.999, t))).sqrt() + 1e-15);
        trace.push_back(loss);
    }
    scene.language.resize(n, scene.d_language);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = params.row(i).norm();
        const double inv = norm > 0 ? 1.0 / norm : 1.0;
        scene.language.row(i) = (params.row(i) * inv).cast<float>();
    }
    scene.stage.mapped = "parallel";
    return trace;
}

} // namespace splatseg
