// Copyright Contributors to the splatseg project
// SPDX-License-Identifier: Apache-2.0

#include "splatseg/scene_io.hpp"

#include "splatseg/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace splatseg {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

namespace {

template <class T>
void write_raw(const fs::path& path, std::span<const T> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw Error(Errc::io, "write failed: " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count, const std::string& field) {
    if (!fs::exists(path)) throw Error(Errc::missing_file, field + ": missing tensor file " + path.string());
    const auto bytes = fs::file_size(path);
    if (bytes != expected_count * sizeof(T))
        throw Error(Errc::shape_mismatch, field + ": file holds " + std::to_string(bytes / sizeof(T)) +
                                              " values, manifest implies " + std::to_string(expected_count));
    std::vector<T> values(expected_count);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, field + ": cannot open " + path.string());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error(Errc::io, field + ": short read from " + path.string());
    return values;
}

json float_array(std::span<const float> v) {
    json a = json::array();
    for (float x : v) a.push_back(x);
    return a;
}

std::vector<float> to_floats(const json& a, std::size_t expected, const std::string& field) {
    if (!a.is_array()) throw Error(Errc::invalid_argument, field + ": expected a float array");
    if (a.size() != expected)
        throw Error(Errc::shape_mismatch, field + ": has " + std::to_string(a.size()) + " values, expected " +
                                              std::to_string(expected));
    std::vector<float> out;
    out.reserve(a.size());
    for (const auto& x : a) {
        if (!x.is_number()) throw Error(Errc::non_finite, field + ": non-numeric value");
        const float f = x.get<float>();
        if (!std::isfinite(f)) throw Error(Errc::non_finite, field + ": non-finite value");
        out.push_back(f);
    }
    return out;
}

json camera_json(const Camera& c) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
    return {{"width", c.width}, {"height", c.height}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
            {"rotation", rot}, {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

Camera camera_from_json(const json& j, const std::string& field) {
    try {
        Camera c;
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        c.fx = j.at("fx").get<double>();
        c.fy = j.at("fy").get<double>();
        c.cx = j.at("cx").get<double>();
        c.cy = j.at("cy").get<double>();
        const auto& rot = j.at("rotation");
        const auto& tr = j.at("translation");
        if (rot.size() != 9 || tr.size() != 3) throw Error(Errc::shape_mismatch, field + ": bad camera extrinsics");
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[static_cast<std::size_t>(r * 3 + k)].get<double>();
        for (int k = 0; k < 3; ++k) c.translation[k] = tr[static_cast<std::size_t>(k)].get<double>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, field + ": malformed camera (" + e.what() + ")");
    }
}

std::string mask_name(std::size_t k) { return "mask_" + std::to_string(k) + ".u32"; }
std::string segments_name(std::size_t k) { return "segments_" + std::to_string(k) + ".json"; }

} // namespace

void write_f32(const fs::path& path, std::span<const float> values) { write_raw(path, values); }
void write_u32(const fs::path& path, std::span<const std::uint32_t> values) { write_raw(path, values); }

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count, const std::string& field) {
    auto v = read_raw<float>(path, expected_count, field);
    for (float x : v)
        if (!std::isfinite(x)) throw Error(Errc::non_finite, field + ": non-finite value in " + path.string());
    return v;
}

std::vector<std::uint32_t> read_u32(const fs::path& path, std::size_t expected_count, const std::string& field) {
    return read_raw<std::uint32_t>(path, expected_count, field);
}

void write_matrix(const fs::path& path, const FeatureMatrix& m) {
    write_f32(path, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
}

FeatureMatrix read_matrix(const fs::path& path, std::size_t rows, std::size_t cols, const std::string& field) {
    const auto v = read_f32(path, rows * cols, field);
    FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!v.empty()) std::memcpy(m.data(), v.data(), v.size() * sizeof(float));
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(Errc::io, "write failed: " + path.string());
}

std::string read_text(const fs::path& path, const std::string& field) {
    if (!fs::exists(path)) throw Error(Errc::missing_file, field + ": missing file " + path.string());
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_scene(const GaussianScene& scene, const fs::path& dir) {
    scene.validate();
    fs::create_directories(dir);
    const std::size_t n = scene.size();

    json manifest;
    manifest["version"] = kSceneFormatVersion;
    manifest["n_gaussians"] = n;
    manifest["d_I"] = scene.d_instance;
    manifest["d_L"] = scene.d_language;
    json shapes = {{"positions", {n, 3}}, {"scales", {n, 3}},     {"rotations", {n, 4}},
                   {"opacities", {n}},    {"colors", {n, 3}},     {"instance", {n, scene.d_instance}}};
    if (scene.has_language()) shapes["language"] = {n, scene.d_language};
    if (scene.has_object_ids()) shapes["object_ids"] = {n};
    manifest["shapes"] = shapes;

    json views = json::array();
    for (std::size_t k = 0; k < scene.views.size(); ++k) {
        const auto& v = scene.views[k];
        views.push_back({{"camera", camera_json(v.camera)}, {"mask", mask_name(k)}, {"segments", segments_name(k)}});
    }
    manifest["views"] = views;

    json vocab = json::object();
    for (const auto& [id, vec] : scene.vocabulary) vocab[std::to_string(id)] = float_array(vec);
    manifest["vocabulary"] = vocab;
    manifest["trained"] = scene.stage.trained;
    manifest["mapped"] = scene.stage.mapped.empty() ? json(nullptr) : json(scene.stage.mapped);

    write_matrix(dir / "positions.f32", scene.positions);
    write_matrix(dir / "scales.f32", scene.scales);
    write_matrix(dir / "rotations.f32", scene.rotations);
    write_f32(dir / "opacities.f32", std::span<const float>(scene.opacities.data(), n));
    write_matrix(dir / "colors.f32", scene.colors);
    write_matrix(dir / "instance.f32", scene.instance);
    if (scene.has_language())
        write_matrix(dir / "language.f32", scene.language);
    else
        fs::remove(dir / "language.f32");
    if (scene.has_object_ids())
        write_u32(dir / "object_ids.u32", scene.object_ids);
    else
        fs::remove(dir / "object_ids.u32");

    for (std::size_t k = 0; k < scene.views.size(); ++k) {
        const auto& v = scene.views[k];
        write_u32(dir / mask_name(k), v.instance_mask);
        json seg = json::object();
        for (const auto& [id, vec] : v.segment_language) seg[std::to_string(id)] = float_array(vec);
        for (SegmentId id : v.language_free) seg[std::to_string(id)] = nullptr;
        write_text(dir / segments_name(k), seg.dump(1) + "\n");
    }
    write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

GaussianScene load_scene(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json", "manifest"));
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("manifest: parse error (") + e.what() + ")");
    }

    GaussianScene scene;
    std::size_t n = 0;
    try {
        if (manifest.at("version").get<int>() != kSceneFormatVersion)
            throw Error(Errc::invalid_argument, "manifest: unsupported version");
        n = manifest.at("n_gaussians").get<std::size_t>();
        scene.d_instance = manifest.at("d_I").get<int>();
        scene.d_language = manifest.at("d_L").get<int>();
        scene.stage.trained = manifest.value("trained", false);
        const auto& mapped = manifest.value("mapped", json(nullptr));
        scene.stage.mapped = mapped.is_string() ? mapped.get<std::string>() : "";
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("manifest: malformed header (") + e.what() + ")");
    }
    if (scene.d_instance < 1 || scene.d_language < 1)
        throw Error(Errc::invalid_argument, "manifest: d_I and d_L must be positive");

    const json shapes = manifest.value("shapes", json::object());
    auto check_shape = [&](const char* field, std::vector<std::size_t> want) {
        if (!shapes.contains(field)) return;
        if (shapes[field].get<std::vector<std::size_t>>() != want)
            throw Error(Errc::shape_mismatch, std::string(field) + ": manifest shape inconsistent with n_gaussians/d");
    };
    const auto di = static_cast<std::size_t>(scene.d_instance);
    const auto dl = static_cast<std::size_t>(scene.d_language);
    check_shape("positions", {n, 3});
    check_shape("scales", {n, 3});
    check_shape("rotations", {n, 4});
    check_shape("opacities", {n});
    check_shape("colors", {n, 3});
    check_shape("instance", {n, di});
    check_shape("language", {n, dl});

    scene.positions = read_matrix(dir / "positions.f32", n, 3, "positions");
    scene.scales = read_matrix(dir / "scales.f32", n, 3, "scales");
    scene.rotations = read_matrix(dir / "rotations.f32", n, 4, "rotations");
    const auto op = read_f32(dir / "opacities.f32", n, "opacities");
    scene.opacities = Eigen::Map<const Eigen::VectorXf>(op.data(), static_cast<Eigen::Index>(n));
    scene.colors = read_matrix(dir / "colors.f32", n, 3, "colors");
    scene.instance = read_matrix(dir / "instance.f32", n, di, "instance");
    if (shapes.contains("language"))
        scene.language = read_matrix(dir / "language.f32", n, dl, "language");
    else
        scene.language.resize(0, scene.d_language);
    if (shapes.contains("object_ids")) scene.object_ids = read_u32(dir / "object_ids.u32", n, "object_ids");

    const json vocabulary = manifest.value("vocabulary", json::object());
    for (const auto& [key, vec] : vocabulary.items())
        scene.vocabulary[static_cast<ObjectId>(std::stoul(key))] = to_floats(vec, dl, "vocabulary." + key);

    const json views = manifest.value("views", json::array());
    for (std::size_t k = 0; k < views.size(); ++k) {
        const std::string field = "view " + std::to_string(k);
        ViewSupervision v;
        v.camera = camera_from_json(views[k].at("camera"), field);
        v.instance_mask = read_u32(dir / views[k].value("mask", mask_name(k)), v.camera.pixel_count(),
                                   field + " mask");
        json seg;
        try {
            seg = json::parse(read_text(dir / views[k].value("segments", segments_name(k)), field + " segments"));
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_argument, field + " segments: parse error (" + e.what() + ")");
        }
        for (const auto& [key, vec] : seg.items()) {
            const auto id = static_cast<SegmentId>(std::stoul(key));
            if (vec.is_null())
                v.language_free.insert(id);
            else
                v.segment_language[id] = to_floats(vec, dl, field + " segment " + key);
        }
        scene.views.push_back(std::move(v));
    }
    scene.validate();
    return scene;
}

} // namespace splatseg
