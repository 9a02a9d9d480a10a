#include "af3d/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "af3d/config.hpp"
#include "af3d/error.hpp"
#include "af3d/rng.hpp"

namespace af3d {

namespace {

constexpr std::array<const char*, 8> kLesionTypes = {"LU", "ME", "LV", "ST", "PV", "AB", "KD", "BN"};
constexpr int kPlacementRetries = 1000;

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Wave {
    double kx, ky, kz, phase, amplitude;
};

}  // namespace

void SynthConfig::validate() const {
    require(volume_dims.z >= 1 && volume_dims.y >= 1 && volume_dims.x >= 1, ErrorCode::Validation,
            "synth volume_dims must be >= 1");
    require(spacing_mm > 0.0, ErrorCode::Validation, "synth spacing_mm must be > 0");
    require(n_lesions_min >= 0 && n_lesions_min <= n_lesions_max, ErrorCode::Validation,
            "synth lesion count range must satisfy 0 <= min <= max");
    const double min_extent =
        std::min({volume_dims.z, volume_dims.y, volume_dims.x}) * spacing_mm;
    require(d_min_mm > 0.0 && d_min_mm <= d_max_mm && d_max_mm < min_extent, ErrorCode::Validation,
            "synth diameter range must be positive and below the smallest volume extent");
    require(noise_sigma >= 0.0, ErrorCode::Validation, "synth noise_sigma must be >= 0");
    require(lesion_contrast > 2.0 * noise_sigma, ErrorCode::Validation,
            "synth lesion_contrast must exceed 2 * noise_sigma");
    require(background_texture_scale > 0.0, ErrorCode::Validation, "synth background_texture_scale must be > 0");
}

std::string synth_scan_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scan_%04d", index);
    return buf;
}

std::pair<Volume, std::vector<Annotation>> generate_volume(const SynthConfig& cfg, int index) {
    cfg.validate();
    Rng rng(cfg.seed, {static_cast<std::uint64_t>(index)});
    const auto& dims = cfg.volume_dims;
    const double sp = cfg.spacing_mm;

    std::array<Wave, 3> waves{};
    for (auto& w : waves) {
        const double wavelength = rng.uniform(cfg.background_texture_scale, 3.0 * cfg.background_texture_scale);
        const double theta = std::acos(rng.uniform(-1.0, 1.0));
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double k = 2.0 * std::numbers::pi / wavelength;
        w = {k * std::sin(theta) * std::cos(phi), k * std::sin(theta) * std::sin(phi), k * std::cos(theta),
             rng.uniform(0.0, 2.0 * std::numbers::pi), cfg.background_amplitude / 3.0};
    }

    const int n_lesions = static_cast<int>(rng.uniform_int(cfg.n_lesions_min, cfg.n_lesions_max));
    std::vector<Annotation> annotations;
    for (int i = 0; i < n_lesions; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            const double d = rng.uniform(cfg.d_min_mm, cfg.d_max_mm);
            const double r = d / 2.0;
            BoxXYZD box{0.0, 0.0, 0.0, d};
            for (int a = 0; a < 3; ++a) {
                // Keep the soft edge (one voxel) inside the volume as well.
                const double lo = r + sp;
                const double hi = (dims[a] - 1) * sp - r - sp;
                box.set_axis(a, lo <= hi ? rng.uniform(lo, hi) : (dims[a] - 1) * sp / 2.0);
            }
            const bool clear = std::all_of(annotations.begin(), annotations.end(), [&](const Annotation& other) {
                const double dx = other.box.cx - box.cx;
                const double dy = other.box.cy - box.cy;
                const double dz = other.box.cz - box.cz;
                return std::sqrt(dx * dx + dy * dy + dz * dz) > (other.box.d + box.d) / 2.0 + 2.0 * sp;
            });
            const double lo_all = r + sp;
            bool fits = true;
            for (int a = 0; a < 3; ++a) {
                fits = fits && box.axis(a) >= lo_all - 1e-9 && box.axis(a) <= (dims[a] - 1) * sp - lo_all + 1e-9;
            }
            if (clear && fits) {
                Annotation ann;
                ann.scan_id = synth_scan_id(index);
                ann.box = box;
                ann.lesion_type = kLesionTypes[rng.uniform_int(0, static_cast<std::int64_t>(kLesionTypes.size()) - 1)];
                annotations.push_back(std::move(ann));
                placed = true;
            }
        }
        require(placed, ErrorCode::Validation,
                "could not place " + std::to_string(n_lesions) + " non-overlapping lesions in " + synth_scan_id(index));
    }

    Volume volume(dims, {sp, sp, sp});
    for (int z = 0; z < dims.z; ++z) {
        for (int y = 0; y < dims.y; ++y) {
            for (int x = 0; x < dims.x; ++x) {
                const double pz = z * sp;
                const double py = y * sp;
                const double px = x * sp;
                double v = cfg.background_level;
                for (const auto& w : waves) {
                    v += w.amplitude * std::cos(w.kx * px + w.ky * py + w.kz * pz + w.phase);
                }
                for (const auto& ann : annotations) {
                    const auto& b = ann.box;
                    const double dist = std::sqrt((px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy) +
                                                  (pz - b.cz) * (pz - b.cz));
                    // Soft edge: full contrast inside r - sp/2, none beyond r + sp/2.
                    v += cfg.lesion_contrast * smoothstep((b.d / 2.0 + sp / 2.0 - dist) / sp);
                }
                v += cfg.noise_sigma * rng.normal();
                volume.at(z, y, x) = static_cast<float>(kSynthHuOffset + kSynthHuScale * v);
            }
        }
    }
    return {std::move(volume), std::move(annotations)};
}

std::filesystem::path Manifest::volume_path(const std::string& scan_id) const {
    for (const auto& [id, path] : files) {
        if (id == scan_id) {
            return path;
        }
    }
    fail(ErrorCode::NotFound, "scan id not in manifest: " + scan_id);
}

Manifest generate_dataset(const SynthConfig& cfg, int n_train, int n_val, const std::filesystem::path& out_dir) {
    cfg.validate();
    require(n_train >= 0 && n_val >= 0, ErrorCode::InvalidArgument, "split sizes must be >= 0");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "volumes", ec);
    require(!ec, ErrorCode::Io, "cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    Manifest manifest;
    manifest.root = out_dir;
    std::vector<Annotation> all;
    std::vector<Annotation> train_anns;
    std::vector<Annotation> val_anns;
    nlohmann::json files = nlohmann::json::object();
    for (int index = 0; index < n_train + n_val; ++index) {
        auto [volume, anns] = generate_volume(cfg, index);
        const auto id = synth_scan_id(index);
        const auto rel = std::filesystem::path("volumes") / (id + ".vol3");
        write_volume(volume, out_dir / rel);
        files[id] = rel.generic_string();
        manifest.files.emplace_back(id, out_dir / rel);
        auto& split_anns = index < n_train ? train_anns : val_anns;
        (index < n_train ? manifest.train : manifest.val).push_back(id);
        split_anns.insert(split_anns.end(), anns.begin(), anns.end());
        all.insert(all.end(), anns.begin(), anns.end());
    }
    write_annotations(all, out_dir / "annotations.csv");
    write_annotations(train_anns, out_dir / "annotations_train.csv");
    write_annotations(val_anns, out_dir / "annotations_val.csv");
    manifest.annotations = out_dir / "annotations.csv";

    nlohmann::json j;
    j["config"] = to_json(cfg);
    j["seed"] = cfg.seed;
    j["splits"] = {{"train", manifest.train}, {"val", manifest.val}};
    j["files"] = files;
    j["annotations"] = "annotations.csv";
    std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write manifest in " + out_dir.string());
    out << j.dump(2) << '\n';
    return manifest;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "manifest not found: " + path.string());
    }
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    require(!j.is_discarded() && j.is_object(), ErrorCode::BadFormat, "manifest is not valid JSON: " + path.string());
    Manifest m;
    m.root = path.parent_path();
    try {
        m.train = j.at("splits").at("train").get<std::vector<std::string>>();
        m.val = j.at("splits").at("val").get<std::vector<std::string>>();
        for (const auto& [id, rel] : j.at("files").items()) {
            m.files.emplace_back(id, m.root / rel.get<std::string>());
        }
        m.annotations = m.root / j.value("annotations", std::string("annotations.csv"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadFormat, std::string("malformed manifest: ") + e.what());
    }
    return m;
}

}  // namespace af3d
