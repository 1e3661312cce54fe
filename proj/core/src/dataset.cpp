#include "flow4dsr/dataset.hpp"
#include "flow4dsr/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace flow4dsr {

using nlohmann::json;

void AugmentationPolicy::validate() const {
    if (venc_choices.empty())
        throw ValidationError("AugmentationPolicy: empty venc choices");
    if (!std::is_sorted(venc_choices.begin(), venc_choices.end()))
        throw ValidationError("AugmentationPolicy: venc choices must be ascending");
    for (double v : venc_choices)
        if (!(v > 0.0)) throw ValidationError("AugmentationPolicy: venc choices must be > 0");
    if (!(intensity_range[0] > 0.0) || !(intensity_range[1] >= intensity_range[0]))
        throw ValidationError("AugmentationPolicy: bad intensity range");
    if (!(snr_range_db[1] >= snr_range_db[0]))
        throw ValidationError("AugmentationPolicy: bad SNR range");
}

void PatchPair::validate() const {
    const Vec3i& ld = lr_velocity[0].dims();
    const Vec3i& hd = hr_velocity[0].dims();
    for (int a = 0; a < 3; ++a)
        if (hd[a] != 2 * ld[a])
            throw ValidationError("PatchPair: LR dims must be exactly half HR dims");
    for (auto& v : lr_velocity) require_same_shape(v.dims(), ld, "PatchPair lr_velocity");
    for (auto& v : lr_magnitude) require_same_shape(v.dims(), ld, "PatchPair lr_magnitude");
    for (auto& v : hr_velocity) require_same_shape(v.dims(), hd, "PatchPair hr_velocity");
}

FrameAugmentation sample_augmentation(const AugmentationPolicy& policy,
                                      const Vec3d& frame_max_speed,
                                      std::uint64_t draw_index) {
    policy.validate();
    Rng rng(mix_seed(policy.seed, draw_index));

    FrameAugmentation out{};
    for (int c = 0; c < 3; ++c) {
        std::vector<double> admissible;
        for (double v : policy.venc_choices)
            if (v > frame_max_speed[std::size_t(c)]) admissible.push_back(v);
        if (admissible.empty())
            throw ValidationError(
                "sample_augmentation: component " + std::to_string(c) + " max speed " +
                std::to_string(frame_max_speed[std::size_t(c)]) +
                " cm/s exceeds every VENC choice (unsatisfiable)");
        out.venc[std::size_t(c)] = admissible[std::size_t(rng.uniform_int(int(admissible.size())))];
    }
    out.intensity = rng.uniform(policy.intensity_range[0], policy.intensity_range[1]);
    out.snr_db = rng.uniform(policy.snr_range_db[0], policy.snr_range_db[1]);
    return out;
}

double fluid_fraction(const FluidMask& mask, const Vec3i& origin, int size) {
    std::int64_t inside = 0;
    for (int k = 0; k < size; ++k)
        for (int j = 0; j < size; ++j)
            for (int i = 0; i < size; ++i)
                inside += mask.inside(origin[0] + i, origin[1] + j, origin[2] + k) ? 1 : 0;
    return double(inside) / (double(size) * size * size);
}

PatchOrigins extract_patches(const FluidMask& lr_mask, int patch_size, int n_patches,
                             double min_fluid, Rng& rng, const std::string& frame_label,
                             bool allow_partial) {
    const Vec3i& dims = lr_mask.grid.dims;
    for (int a = 0; a < 3; ++a)
        if (dims[a] < patch_size)
            throw ValidationError("extract_patches: LR dim " + std::to_string(dims[a]) +
                                  " smaller than patch size " + std::to_string(patch_size));

    constexpr int kAttemptCap = 1000;
    PatchOrigins out;
    auto draw_origin = [&] {
        Vec3i o;
        for (int a = 0; a < 3; ++a) o[a] = rng.uniform_int(dims[a] - patch_size + 1);
        return o;
    };

    for (int p = 0; p < n_patches - 1; ++p) {
        bool accepted = false;
        for (int attempt = 0; attempt < kAttemptCap; ++attempt) {
            Vec3i o = draw_origin();
            if (fluid_fraction(lr_mask, o, patch_size) >= min_fluid) {
                out.origins.push_back(o);
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            ++out.failed_constrained;
            if (!allow_partial)
                throw ValidationError("extract_patches: frame '" + frame_label +
                                      "': no patch with fluid fraction >= " +
                                      std::to_string(min_fluid) + " found after " +
                                      std::to_string(kAttemptCap) + " attempts");
        }
    }
    out.origins.push_back(draw_origin()); // last patch is unconstrained
    return out;
}

namespace {

// 90-degree grid rotation about `axis`: dst(b,c) reads src(b=c_idx, c=m-b_idx)
// in the cyclic cross-axes (b, c) of the axis.
VolumeF rotate90_scalar(const VolumeF& vol, int axis) {
    const Vec3i d = vol.dims();
    const int n = d[0];
    const int m = n - 1;
    const int b = (axis + 1) % 3;
    const int c = (axis + 2) % 3;
    VolumeF out(d);
    Vec3i dst, src;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                dst = {i, j, k};
                src = dst;
                src[b] = dst[c];
                src[c] = m - dst[b];
                out(dst[0], dst[1], dst[2]) = vol(src[0], src[1], src[2]);
            }
    return out;
}

void rotate90_vector(std::array<VolumeF, 3>& v, int axis) {
    for (auto& comp : v) comp = rotate90_scalar(comp, axis);
    const int b = (axis + 1) % 3;
    const int c = (axis + 2) % 3;
    // unit_b -> unit_c under a +90 degree right-handed rotation about `axis`
    VolumeF old_b = std::move(v[std::size_t(b)]);
    v[std::size_t(b)] = std::move(v[std::size_t(c)]);
    for (std::int64_t n = 0; n < v[std::size_t(b)].size(); ++n)
        v[std::size_t(b)][n] = -v[std::size_t(b)][n];
    v[std::size_t(c)] = std::move(old_b);
}

} // namespace

PatchPair rotate_patch(const PatchPair& pair, Axis axis, int angle_deg) {
    if (angle_deg != 90 && angle_deg != 180 && angle_deg != 270)
        throw ValidationError("rotate_patch: angle must be 90, 180 or 270 degrees");
    const Vec3i& ld = pair.lr_velocity[0].dims();
    const Vec3i& hd = pair.hr_velocity[0].dims();
    if (ld[0] != ld[1] || ld[1] != ld[2] || hd[0] != hd[1] || hd[1] != hd[2])
        throw ValidationError("rotate_patch: patches must be cubic");

    PatchPair out = pair;
    const int a = int(axis);
    const int b = (a + 1) % 3;
    const int c = (a + 2) % 3;
    for (int turns = angle_deg / 90; turns > 0; --turns) {
        rotate90_vector(out.lr_velocity, a);
        rotate90_vector(out.hr_velocity, a);
        for (auto& mag : out.lr_magnitude) mag = rotate90_scalar(mag, a);
        std::swap(out.venc[std::size_t(b)], out.venc[std::size_t(c)]);
    }
    return out;
}

std::vector<PatchPair> rotation_variants(const PatchPair& original) {
    std::vector<PatchPair> out;
    out.reserve(9);
    for (Axis axis : {Axis::x, Axis::y, Axis::z})
        for (int angle : {90, 180, 270})
            out.push_back(rotate_patch(original, axis, angle));
    return out;
}

VolumeF crop(const VolumeD& vol, const Vec3i& origin, int size) {
    VolumeF out({size, size, size});
    for (int k = 0; k < size; ++k)
        for (int j = 0; j < size; ++j)
            for (int i = 0; i < size; ++i)
                out(i, j, k) = float(vol(origin[0] + i, origin[1] + j, origin[2] + k));
    return out;
}

PatchPair normalize_pair(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                         const std::array<VolumeD, 3>& lr_magnitude_raw,
                         const std::array<VolumeD, 3>& hr_velocity_cm_s,
                         const Vec3d& venc, double lr_fluid_fraction) {
    const double venc_max = std::max(venc[0], std::max(venc[1], venc[2]));
    if (!(venc_max > 0.0))
        throw ValidationError("normalize_pair: venc_max must be positive");
    const double limit = venc_max * (1.0 + 1e-12); // 1-ulp headroom for decode round trips

    PatchPair out;
    auto norm_velocity = [&](const VolumeD& v) {
        VolumeF o(v.dims());
        for (std::int64_t n = 0; n < v.size(); ++n) {
            if (std::abs(v[n]) > limit)
                throw ValidationError("normalize_pair: |v|=" + std::to_string(v[n]) +
                                      " exceeds venc_max=" + std::to_string(venc_max));
            o[n] = float(v[n] / venc_max);
        }
        return o;
    };
    auto norm_magnitude = [&](const VolumeD& m) {
        VolumeF o(m.dims());
        for (std::int64_t n = 0; n < m.size(); ++n)
            o[n] = float(std::clamp(m[n] / 255.0, 0.0, 1.0));
        return o;
    };
    for (int c = 0; c < 3; ++c) {
        out.lr_velocity[std::size_t(c)] = norm_velocity(lr_velocity_cm_s[std::size_t(c)]);
        out.lr_magnitude[std::size_t(c)] = norm_magnitude(lr_magnitude_raw[std::size_t(c)]);
        out.hr_velocity[std::size_t(c)] = norm_velocity(hr_velocity_cm_s[std::size_t(c)]);
        out.venc[std::size_t(c)] = float(venc[std::size_t(c)]);
    }
    out.fluid_fraction = float(lr_fluid_fraction);
    out.validate();
    return out;
}

// ---- persistence -----------------------------------------------------------

std::string policy_to_json(const AugmentationPolicy& policy) {
    json j;
    j["venc_choices"] = policy.venc_choices;
    j["intensity_range"] = policy.intensity_range;
    j["snr_range_db"] = policy.snr_range_db;
    j["seed"] = policy.seed;
    return j.dump();
}

AugmentationPolicy policy_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        AugmentationPolicy p;
        p.venc_choices = j.at("venc_choices").get<std::vector<double>>();
        p.intensity_range = j.at("intensity_range").get<std::array<double, 2>>();
        p.snr_range_db = j.at("snr_range_db").get<std::array<double, 2>>();
        p.seed = j.at("seed").get<std::uint64_t>();
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("policy_from_json: ") + e.what());
    }
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    json j;
    j["format_version"] = format_version;
    j["counts"] = counts;
    j["source_frames"] = source_frames;
    if (!policy_json.empty()) j["policy"] = json::parse(policy_json);
    std::ofstream out(path);
    if (!out) throw FormatError("manifest: cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("manifest: cannot read '" + path.string() + "'");
    try {
        json j = json::parse(in);
        DatasetManifest m;
        m.format_version = j.at("format_version").get<int>();
        m.counts = j.at("counts").get<std::map<std::string, std::uint64_t>>();
        m.source_frames = j.at("source_frames").get<std::vector<std::string>>();
        if (j.contains("policy")) m.policy_json = j["policy"].dump();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

DatasetManifest write_dataset(const std::vector<PatchPair>& records,
                              const std::filesystem::path& path, ContainerHeader header) {
    for (const auto& r : records) r.validate();
    ContainerHeader final_header = write_patch_container(path, std::move(header), records);
    DatasetManifest manifest;
    manifest.counts[final_header.split.empty() ? "records" : final_header.split] =
        final_header.count;
    manifest.policy_json = final_header.policy_json;
    return manifest;
}

std::vector<PatchPair> read_dataset(const std::filesystem::path& path) {
    return read_patch_container(path).second;
}

} // namespace flow4dsr
