#include "af3d/volume_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace af3d {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound: return "not_found";
        case ErrorCode::BadFormat: return "bad_format";
        case ErrorCode::SizeMismatch: return "size_mismatch";
        case ErrorCode::Io: return "io";
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::Validation: return "validation";
        case ErrorCode::Numeric: return "numeric";
        case ErrorCode::Config: return "config";
        case ErrorCode::State: return "state";
    }
    return "unknown";
}

Volume::Volume(Dims3 d, Spacing3 s, float fill) : dims(d), spacing(s), voxels(d.count(), fill) {}

void Volume::validate() const {
    require(dims.z >= 1 && dims.y >= 1 && dims.x >= 1, ErrorCode::Validation, "volume dims must be >= 1");
    require(spacing.z > 0 && spacing.y > 0 && spacing.x > 0, ErrorCode::Validation,
            "volume spacing must be > 0");
    require(voxels.size() == dims.count(), ErrorCode::Validation, "voxel count does not match dims");
}

Volume read_volume(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "volume file not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open volume file: " + path.string());

    char magic[4] = {};
    in.read(magic, 4);
    require(in.gcount() == 4 && std::string_view(magic, 4) == "VOL3", ErrorCode::BadFormat,
            "bad magic in volume file: " + path.string());
    const auto version = detail::expect_u32(in, "version");
    require(version == kVol3Version, ErrorCode::BadFormat,
            "unsupported VOL3 version " + std::to_string(version));

    std::uint32_t raw_dims[3];
    for (auto& d : raw_dims) {
        d = detail::expect_u32(in, "dims");
    }
    float raw_spacing[3];
    for (auto& s : raw_spacing) {
        require(detail::get_f32(in, s), ErrorCode::BadFormat, "truncated VOL3 header");
    }
    char reserved[8];
    require(static_cast<bool>(in.read(reserved, 8)), ErrorCode::BadFormat, "truncated VOL3 header");

    Volume v;
    v.dims = {static_cast<int>(raw_dims[0]), static_cast<int>(raw_dims[1]), static_cast<int>(raw_dims[2])};
    v.spacing = {raw_spacing[0], raw_spacing[1], raw_spacing[2]};
    require(raw_dims[0] >= 1 && raw_dims[1] >= 1 && raw_dims[2] >= 1, ErrorCode::BadFormat,
            "VOL3 dims must be >= 1");
    require(v.spacing.z > 0 && v.spacing.y > 0 && v.spacing.x > 0, ErrorCode::BadFormat,
            "VOL3 spacing must be > 0");

    const auto expected_bytes = v.dims.count() * sizeof(float);
    const auto file_bytes = std::filesystem::file_size(path, ec);
    require(!ec && file_bytes == kVol3HeaderBytes + expected_bytes, ErrorCode::SizeMismatch,
            "VOL3 payload size does not match dims in " + path.string());

    v.voxels.resize(v.dims.count());
    in.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(expected_bytes));
    require(static_cast<bool>(in), ErrorCode::SizeMismatch, "VOL3 payload truncated in " + path.string());
    return v;
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
    volume.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open for writing: " + path.string());
    out.write("VOL3", 4);
    detail::put_u32(out, kVol3Version);
    detail::put_u32(out, static_cast<std::uint32_t>(volume.dims.z));
    detail::put_u32(out, static_cast<std::uint32_t>(volume.dims.y));
    detail::put_u32(out, static_cast<std::uint32_t>(volume.dims.x));
    detail::put_f32(out, static_cast<float>(volume.spacing.z));
    detail::put_f32(out, static_cast<float>(volume.spacing.y));
    detail::put_f32(out, static_cast<float>(volume.spacing.x));
    detail::put_u32(out, 0);
    detail::put_u32(out, 0);
    out.write(reinterpret_cast<const char*>(volume.voxels.data()),
              static_cast<std::streamsize>(volume.voxels.size() * sizeof(float)));
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path.string());
}

namespace {

struct AxisSample {
    int lo = 0;
    int hi = 0;
    double frac = 0.0;
};

// Output voxel i sits at i * target mm; voxel j of the input sits at j * spacing mm.
std::vector<AxisSample> axis_samples(int n_in, double spacing_in, int n_out, double target) {
    std::vector<AxisSample> samples(n_out);
    for (int i = 0; i < n_out; ++i) {
        double pos = static_cast<double>(i) * target / spacing_in;
        pos = std::clamp(pos, 0.0, static_cast<double>(n_in - 1));
        const int lo = static_cast<int>(std::floor(pos));
        const int hi = std::min(lo + 1, n_in - 1);
        samples[i] = {lo, hi, pos - lo};
    }
    return samples;
}

}  // namespace

Volume resample_isotropic(const Volume& volume, double target_spacing_mm) {
    require(target_spacing_mm > 0.0 && std::isfinite(target_spacing_mm), ErrorCode::InvalidArgument,
            "target spacing must be > 0");
    require(volume.dims.z >= 1 && volume.dims.y >= 1 && volume.dims.x >= 1, ErrorCode::InvalidArgument,
            "cannot resample a degenerate volume");
    volume.validate();

    Dims3 out_dims;
    for (int a = 0; a < 3; ++a) {
        const double extent = volume.dims[a] * volume.spacing[a];
        out_dims[a] = std::max(1, static_cast<int>(std::lround(extent / target_spacing_mm)));
    }
    Volume out(out_dims, {target_spacing_mm, target_spacing_mm, target_spacing_mm});
    out.origin = volume.origin;

    const auto sz = axis_samples(volume.dims.z, volume.spacing.z, out_dims.z, target_spacing_mm);
    const auto sy = axis_samples(volume.dims.y, volume.spacing.y, out_dims.y, target_spacing_mm);
    const auto sx = axis_samples(volume.dims.x, volume.spacing.x, out_dims.x, target_spacing_mm);

    for (int z = 0; z < out_dims.z; ++z) {
        for (int y = 0; y < out_dims.y; ++y) {
            for (int x = 0; x < out_dims.x; ++x) {
                const auto& [z0, z1, fz] = sz[z];
                const auto& [y0, y1, fy] = sy[y];
                const auto& [x0, x1, fx] = sx[x];
                auto lerp = [](double a, double b, double t) { return t == 0.0 ? a : a + (b - a) * t; };
                const double c00 = lerp(volume.at(z0, y0, x0), volume.at(z0, y0, x1), fx);
                const double c01 = lerp(volume.at(z0, y1, x0), volume.at(z0, y1, x1), fx);
                const double c10 = lerp(volume.at(z1, y0, x0), volume.at(z1, y0, x1), fx);
                const double c11 = lerp(volume.at(z1, y1, x0), volume.at(z1, y1, x1), fx);
                const double c0 = lerp(c00, c01, fy);
                const double c1 = lerp(c10, c11, fy);
                out.at(z, y, x) = static_cast<float>(lerp(c0, c1, fz));
            }
        }
    }
    return out;
}

Volume clip_and_normalize(const Volume& volume, double hu_min, double hu_max) {
    require(hu_min < hu_max, ErrorCode::InvalidArgument, "intensity window requires hu_min < hu_max");
    Volume out = volume;
    const double range = hu_max - hu_min;
    for (auto& v : out.voxels) {
        const double c = std::clamp(static_cast<double>(v), hu_min, hu_max);
        v = static_cast<float>(std::clamp((c - hu_min) / range, 0.0, 1.0));
    }
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

std::optional<double> parse_double(std::string_view s) {
    double value = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

}  // namespace

std::vector<Annotation> parse_annotations(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<Annotation> result;
    bool header_seen = false;
    int row = 0;
    while (std::getline(in, line)) {
        const auto trimmed = trim(line);
        if (trimmed.empty()) {
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            require(trimmed.substr(0, 7) == "scan_id", ErrorCode::BadFormat,
                    "annotation CSV must start with the header row");
            continue;
        }
        ++row;
        const auto prefix = "annotation row " + std::to_string(row) + ": ";
        auto fields = split_csv(trimmed);
        require(fields.size() >= 5 && fields.size() <= 7, ErrorCode::BadFormat,
                prefix + "expected 5 to 7 fields, got " + std::to_string(fields.size()));
        fields.resize(7);

        Annotation ann;
        ann.scan_id = std::string(fields[0]);
        require(!ann.scan_id.empty(), ErrorCode::Validation, prefix + "empty scan_id");
        double coords[4];
        const char* names[4] = {"x_mm", "y_mm", "z_mm", "diameter_mm"};
        for (int i = 0; i < 4; ++i) {
            const auto v = parse_double(fields[i + 1]);
            require(v.has_value(), ErrorCode::BadFormat, prefix + "cannot parse " + names[i]);
            coords[i] = *v;
        }
        ann.box = {coords[0], coords[1], coords[2], coords[3]};
        require(ann.box.d > 0.0, ErrorCode::Validation, prefix + "diameter_mm must be > 0");
        if (!fields[5].empty()) {
            ann.lesion_type = std::string(fields[5]);
        }
        if (!fields[6].empty()) {
            const auto v = parse_double(fields[6]);
            require(v.has_value(), ErrorCode::BadFormat, prefix + "cannot parse key_slice_z");
            ann.key_slice_z = *v;
        }
        result.push_back(std::move(ann));
    }
    require(header_seen, ErrorCode::BadFormat, "annotation CSV is empty (missing header)");
    return result;
}

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        fail(ErrorCode::NotFound, "annotation file not found: " + path.string());
    }
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open annotation file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_annotations(buffer.str());
}

void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open for writing: " + path.string());
    out.precision(17);
    out << kAnnotationHeader << '\n';
    for (const auto& a : annotations) {
        out << a.scan_id << ',' << a.box.cx << ',' << a.box.cy << ',' << a.box.cz << ',' << a.box.d << ','
            << a.lesion_type.value_or("") << ',';
        if (a.key_slice_z) {
            out << *a.key_slice_z;
        }
        out << '\n';
    }
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path.string());
}

BoxXYZD convert_2d_annotation(double x_min, double y_min, double x_max, double y_max, double key_slice_z) {
    require(x_max > x_min && y_max > y_min, ErrorCode::InvalidArgument,
            "2D annotation rectangle must have positive width and height");
    return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0, key_slice_z,
            ((x_max - x_min) + (y_max - y_min)) / 2.0};
}

std::vector<Annotation> filter_oversize(const std::vector<Annotation>& annotations, double max_d_mm) {
    std::vector<Annotation> kept;
    kept.reserve(annotations.size());
    std::copy_if(annotations.begin(), annotations.end(), std::back_inserter(kept),
                 [max_d_mm](const Annotation& a) { return a.box.d < max_d_mm; });
    return kept;
}

}  // namespace af3d
