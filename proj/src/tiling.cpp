#include "af3d/tiling.hpp"

#include <algorithm>
#include <cmath>

#include "af3d/error.hpp"
#include "af3d/rng.hpp"

namespace af3d {

CropRegion make_region(Dims3 volume_dims, Dims3 origin, Dims3 shape) {
    CropRegion r;
    r.origin = origin;
    r.shape = shape;
    for (int a = 0; a < 3; ++a) {
        r.pad_lo[a] = std::max(0, -origin[a]);
        r.pad_hi[a] = std::max(0, origin[a] + shape[a] - volume_dims[a]);
    }
    return r;
}

std::vector<float> extract_region(const Volume& volume, const CropRegion& region) {
    const auto& s = region.shape;
    std::vector<float> out(s.count(), 0.0f);
    const int z0 = std::max(0, -region.origin.z);
    const int z1 = std::min(s.z, volume.dims.z - region.origin.z);
    const int y0 = std::max(0, -region.origin.y);
    const int y1 = std::min(s.y, volume.dims.y - region.origin.y);
    const int x0 = std::max(0, -region.origin.x);
    const int x1 = std::min(s.x, volume.dims.x - region.origin.x);
    if (x1 <= x0) {
        return out;
    }
    for (int z = z0; z < z1; ++z) {
        for (int y = y0; y < y1; ++y) {
            const float* src = &volume.voxels[volume.index(z + region.origin.z, y + region.origin.y, x0 + region.origin.x)];
            float* dst = &out[(static_cast<std::size_t>(z) * s.y + y) * s.x + x0];
            std::copy(src, src + (x1 - x0), dst);
        }
    }
    return out;
}

namespace {

int sample_between(Rng& rng, int lo, int hi) {
    if (hi < lo) {
        std::swap(lo, hi);
    }
    return static_cast<int>(rng.uniform_int(lo, hi));
}

}  // namespace

Crop random_crop(const Volume& volume, const std::vector<Annotation>& annotations, const RandomCropConfig& cfg,
                 std::uint64_t rng_seed) {
    volume.validate();
    for (int a = 0; a < 3; ++a) {
        require(cfg.shape[a] >= 1, ErrorCode::InvalidArgument, "crop shape must be >= 1");
        require(cfg.shape[a] <= 4 * volume.dims[a], ErrorCode::InvalidArgument,
                "crop shape exceeds 4x the volume extent");
    }
    Rng rng(rng_seed);
    const bool lesion_centered = !annotations.empty() && rng.uniform() < cfg.p_lesion;

    Dims3 origin;
    if (lesion_centered) {
        const auto& target = annotations[rng.uniform_int(0, static_cast<std::int64_t>(annotations.size()) - 1)].box;
        for (int a = 0; a < 3; ++a) {
            const double c = target.axis(a) / volume.spacing[a];
            const double r = target.d / 2.0 / volume.spacing[a];
            // Whole lesion inside when it fits, otherwise at least the centroid.
            int lo = static_cast<int>(std::ceil(c + r)) - cfg.shape[a] + 1;
            int hi = static_cast<int>(std::floor(c - r));
            if (hi < lo) {
                lo = static_cast<int>(std::ceil(c)) - cfg.shape[a] + 1;
                hi = static_cast<int>(std::floor(c));
            }
            // Prefer windows that stay inside the volume when that is compatible.
            const int in_lo = std::min(0, volume.dims[a] - cfg.shape[a]);
            const int in_hi = std::max(0, volume.dims[a] - cfg.shape[a]);
            const int clo = std::max(lo, in_lo);
            const int chi = std::min(hi, in_hi);
            origin[a] = clo <= chi ? sample_between(rng, clo, chi) : sample_between(rng, lo, hi);
        }
    } else {
        for (int a = 0; a < 3; ++a) {
            origin[a] = sample_between(rng, std::min(0, volume.dims[a] - cfg.shape[a]),
                                       std::max(0, volume.dims[a] - cfg.shape[a]));
        }
    }

    Crop crop;
    crop.region = make_region(volume.dims, origin, cfg.shape);
    crop.voxels = extract_region(volume, crop.region);
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        BoxXYZD local = annotations[i].box;
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            const double v = local.axis(a) - origin[a] * volume.spacing[a];
            local.set_axis(a, v);
            inside = inside && v >= 0.0 && v <= (cfg.shape[a] - 1) * volume.spacing[a];
        }
        if (inside) {
            crop.boxes.push_back(local);
            crop.source.push_back(static_cast<int>(i));
        }
    }
    return crop;
}

std::vector<CropRegion> sliding_windows(Dims3 volume_dims, Dims3 shape, Dims3 overlap) {
    std::array<std::vector<int>, 3> origins;
    for (int a = 0; a < 3; ++a) {
        require(volume_dims[a] >= 1 && shape[a] >= 1, ErrorCode::InvalidArgument, "window dims must be >= 1");
        require(overlap[a] >= 0 && overlap[a] < shape[a], ErrorCode::InvalidArgument,
                "overlap must satisfy 0 <= overlap < shape");
        const int n = volume_dims[a];
        const int stride = shape[a] - overlap[a];
        if (n <= shape[a]) {
            origins[a] = {0};
            continue;
        }
        for (int o = 0; o + shape[a] < n; o += stride) {
            origins[a].push_back(o);
        }
        const int flush = n - shape[a];
        if (origins[a].back() != flush) {
            origins[a].push_back(flush);
        }
    }
    std::vector<CropRegion> regions;
    for (const int z : origins[0]) {
        for (const int y : origins[1]) {
            for (const int x : origins[2]) {
                regions.push_back(make_region(volume_dims, {z, y, x}, shape));
            }
        }
    }
    return regions;
}

std::vector<Detection> to_global(const std::vector<Detection>& dets, const CropRegion& region, double spacing_mm) {
    std::vector<Detection> out = dets;
    for (auto& d : out) {
        for (int a = 0; a < 3; ++a) {
            d.box.set_axis(a, d.box.axis(a) + region.origin[a] * spacing_mm);
        }
    }
    return out;
}

std::vector<Detection> assemble(const std::vector<std::pair<CropRegion, std::vector<Detection>>>& per_crop,
                                double nms_iou) {
    std::vector<Detection> all;
    for (const auto& [region, dets] : per_crop) {
        all.insert(all.end(), dets.begin(), dets.end());
    }
    return nms_3d(all, nms_iou);
}

}  // namespace af3d
