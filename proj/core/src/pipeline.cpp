#include "flow4dsr/pipeline.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/infer.hpp"
#include "flow4dsr/kspace.hpp"
#include "flow4dsr/log.hpp"
#include "flow4dsr/mrencode.hpp"
#include "flow4dsr/threading.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace flow4dsr {

using nlohmann::json;

namespace {

// fixed sub-stream tags for derived seeds
constexpr std::uint64_t kSeedNoise = 0x6e6f697365ULL;
constexpr std::uint64_t kSeedOrigins = 0x6f726967ULL;
constexpr std::uint64_t kSeedInit = 0x696e6974ULL;
constexpr std::uint64_t kSeedEval = 0x6576616cULL;

Axis axis_from_string(const std::string& s) {
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    throw ConfigError("config: bad axis '" + s + "' (expected x, y or z)");
}

FlowKind kind_from_string(const std::string& s) {
    if (s == "poiseuille_tube") return FlowKind::poiseuille_tube;
    if (s == "helical_tube") return FlowKind::helical_tube;
    if (s == "stenosed_tube") return FlowKind::stenosed_tube;
    throw ConfigError("config: unknown flow kind '" + s + "'");
}

} // namespace

void PipelineConfig::validate() const {
    grid.validate();
    if (frames < 1) throw ConfigError("config: frames must be >= 1");
    if (sources.empty()) throw ConfigError("config: empty source list");
    int tests = 0;
    for (const auto& s : sources) {
        if (s.name.empty()) throw ConfigError("config: source with empty name");
        if (s.role != "train" && s.role != "test")
            throw ConfigError("config: source '" + s.name + "' has role '" + s.role +
                              "' (expected train or test)");
        if (s.role == "test") ++tests;
        try {
            s.flow.validate(grid);
        } catch (const std::exception& e) {
            throw ConfigError("config: source '" + s.name + "': " + e.what());
        }
    }
    if (tests > 1) throw ConfigError("config: at most one test source is supported");
    augmentation.validate();
    net.validate();
    train.validate();
    if (infer_patch_size < 8) throw ConfigError("config: infer patch size must be >= 8");
    if (!(metric.epsilon > 0.0)) throw ConfigError("config: metric epsilon must be > 0");
    if (bland_altman_samples < 2)
        throw ConfigError("config: bland_altman_samples must be >= 2");
}

const SourceSpec* PipelineConfig::test_source() const {
    for (const auto& s : sources)
        if (s.role == "test") return &s;
    return nullptr;
}

std::vector<const SourceSpec*> PipelineConfig::train_sources() const {
    std::vector<const SourceSpec*> out;
    for (const auto& s : sources)
        if (s.role == "train") out.push_back(&s);
    return out;
}

PipelineConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    try {
        PipelineConfig cfg;
        cfg.seed = j.value("seed", std::uint64_t{1});
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            cfg.grid.dims = g.at("dims").get<Vec3i>();
            if (g.contains("spacing_mm")) {
                if (g["spacing_mm"].is_number())
                    cfg.grid.spacing_mm.fill(g["spacing_mm"].get<double>());
                else
                    cfg.grid.spacing_mm = g["spacing_mm"].get<Vec3d>();
            }
        }
        cfg.frames = j.value("frames", 71);
        if (j.contains("sources")) {
            for (const auto& s : j["sources"]) {
                SourceSpec src;
                src.name = s.at("name").get<std::string>();
                src.role = s.value("role", "train");
                const auto& f = s.at("flow");
                src.flow.kind = kind_from_string(f.at("kind").get<std::string>());
                src.flow.axis = axis_from_string(f.value("axis", "z"));
                src.flow.radius_mm = f.value("radius_mm", 8.0);
                src.flow.peak_speed_cm_s = f.value("peak_speed_cm_s", 100.0);
                src.flow.swirl_ratio = f.value("swirl_ratio", 0.0);
                src.flow.stenosis_factor = f.value("stenosis_factor", 1.0);
                if (f.contains("waveform")) {
                    src.flow.waveform.clear();
                    for (const auto& knot : f["waveform"])
                        src.flow.waveform.emplace_back(knot.at(0).get<double>(),
                                                       knot.at(1).get<double>());
                }
                cfg.sources.push_back(std::move(src));
            }
        }
        if (j.contains("augmentation")) {
            const auto& a = j["augmentation"];
            if (a.contains("venc_choices"))
                cfg.augmentation.venc_choices = a["venc_choices"].get<std::vector<double>>();
            if (a.contains("intensity_range"))
                cfg.augmentation.intensity_range = a["intensity_range"].get<std::array<double, 2>>();
            if (a.contains("snr_range_db"))
                cfg.augmentation.snr_range_db = a["snr_range_db"].get<std::array<double, 2>>();
            cfg.augmentation.seed = a.value("seed", cfg.seed);
        } else {
            cfg.augmentation.seed = cfg.seed;
        }
        if (j.contains("net")) {
            const auto& n = j["net"];
            cfg.net.base_filters = n.value("base_filters", 64);
            cfg.net.lr_resblocks = n.value("lr_resblocks", 8);
            cfg.net.hr_resblocks = n.value("hr_resblocks", 4);
            cfg.net.leaky_slope = n.value("leaky_slope", 0.2);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            cfg.train.lr0 = t.value("lr0", 1e-4);
            cfg.train.decay_every = t.value("decay_every", 10000);
            cfg.train.batch = t.value("batch", 20);
            cfg.train.max_iters = t.value("max_iters", 1000);
            cfg.train.val_every = t.value("val_every", 500);
            cfg.train.seed = t.value("seed", cfg.seed);
        } else {
            cfg.train.seed = cfg.seed;
        }
        if (j.contains("infer")) cfg.infer_patch_size = j["infer"].value("patch_size", 32);
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            cfg.metric.epsilon = e.value("epsilon", 1e-5);
            cfg.bland_altman_samples = e.value("bland_altman_samples", std::int64_t{50000});
            if (e.contains("planes")) {
                for (const auto& p : e["planes"])
                    cfg.planes.emplace_back(axis_from_string(p.at("axis").get<std::string>()),
                                            p.at("index").get<int>());
            }
        }
        if (j.contains("paths") && j["paths"].contains("out_dir"))
            cfg.out_dir = j["paths"]["out_dir"].get<std::string>();
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

PipelineConfig load_config(const std::filesystem::path& path,
                           std::optional<std::uint64_t> seed_override,
                           std::optional<std::filesystem::path> out_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    PipelineConfig cfg = config_from_json_text(text);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.augmentation.seed = *seed_override;
        cfg.train.seed = *seed_override;
    }
    if (out_override) cfg.out_dir = *out_override;
    return cfg;
}

// ---- generate -----------------------------------------------------------------

namespace {

VolumeF to_float(const VolumeD& v) {
    VolumeF out(v.dims());
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
    return out;
}

VolumeF mask_to_float(const FluidMask& mask) {
    VolumeF out(mask.grid.dims);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = mask.inside[i] ? 1.0f : 0.0f;
    return out;
}

std::filesystem::path frames_path(const PipelineConfig& cfg, const std::string& name) {
    return cfg.out_dir / ("frames_" + name + ".f4d1");
}

} // namespace

std::vector<std::filesystem::path> run_generate(const PipelineConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec)
        throw FormatError("generate: cannot create output dir '" + cfg.out_dir.string() +
                          "': " + ec.message());

    std::vector<std::filesystem::path> written;
    for (const auto& src : cfg.sources) {
        FrameSequence seq = sample_frames(src.flow, cfg.grid, cfg.frames);
        ContainerHeader header;
        header.kind = "volume";
        header.split = "frames:" + src.name;
        header.seed = cfg.seed;
        header.spacing_mm = cfg.grid.spacing_mm;
        header.dims = cfg.grid.dims;
        header.arrays = {"vx", "vy", "vz", "mask"};

        const std::filesystem::path path = frames_path(cfg, src.name);
        ContainerWriter writer(path, header);
        VolumeF mask_f = mask_to_float(seq.mask);
        for (int f = 0; f < cfg.frames; ++f) {
            VolumeRecord rec;
            rec.arrays = {to_float(seq.frames[std::size_t(f)].v[0]),
                          to_float(seq.frames[std::size_t(f)].v[1]),
                          to_float(seq.frames[std::size_t(f)].v[2]), mask_f};
            rec.meta.aux = float(seq.times[std::size_t(f)]);
            writer.append(rec);
        }
        writer.close();
        written.push_back(path);
    }
    return written;
}

// ---- build-dataset ---------------------------------------------------------------

namespace {

struct FrameVolumes {
    std::array<VolumeD, 3> hr_velocity; // cm/s
    FluidMask hr_mask;
    std::vector<double> max_abs = {0, 0, 0}; // per component
};

FrameVolumes load_frame(const ContainerHeader& header, VolumeRecord&& rec, const Grid3& grid) {
    FrameVolumes out;
    out.hr_mask = FluidMask(grid);
    for (int c = 0; c < 3; ++c) {
        out.hr_velocity[std::size_t(c)] = VolumeD(grid.dims);
        const VolumeF& src = rec.arrays[std::size_t(c)];
        VolumeD& dst = out.hr_velocity[std::size_t(c)];
        double mx = 0.0;
        for (std::int64_t i = 0; i < src.size(); ++i) {
            dst[i] = double(src[i]);
            mx = std::max(mx, std::abs(dst[i]));
        }
        out.max_abs[std::size_t(c)] = mx;
    }
    const VolumeF& m = rec.arrays[3];
    for (std::int64_t i = 0; i < m.size(); ++i) out.hr_mask.inside[i] = m[i] > 0.5f ? 1 : 0;
    (void)header;
    return out;
}

struct EncodedFrame {
    std::array<VolumeD, 3> lr_velocity;  // cm/s, decoded from noisy phase
    std::array<VolumeD, 3> lr_magnitude; // signal units
    FluidMask lr_mask;
    Grid3 lr_grid;
    FrameAugmentation aug;
};

// per-component encode -> k-space downsample with noise -> decode
EncodedFrame encode_downsample(const FrameVolumes& frame, const Grid3& hr_grid,
                               const FrameAugmentation& aug, std::uint64_t noise_seed_base) {
    EncodedFrame out;
    out.aug = aug;

    MagnitudeSet mags = synth_magnitude(frame.hr_mask, aug.intensity);
    for (int c = 0; c < 3; ++c) {
        PhaseVolume phase =
            encode_phase(hr_grid, frame.hr_velocity[std::size_t(c)], aug.venc[std::size_t(c)]);
        ComplexVolume hr_c = to_complex(phase, mags.m[std::size_t(c)]);
        NoiseSpec noise{aug.snr_db, mix_seed(noise_seed_base, std::uint64_t(c))};
        ComplexVolume lr_c = downsample_with_noise(hr_c, noise);
        auto [lr_mag, lr_phase] = from_complex(lr_c);
        out.lr_velocity[std::size_t(c)] = decode_velocity(lr_phase, aug.venc[std::size_t(c)]);
        out.lr_magnitude[std::size_t(c)] = std::move(lr_mag);
        out.lr_grid = lr_c.grid;
    }

    // LR mask by even-sample decimation (matches the band-limited sampling
    // positions of the k-space truncation)
    out.lr_mask = FluidMask(out.lr_grid);
    for (int k = 0; k < out.lr_grid.dims[2]; ++k)
        for (int j = 0; j < out.lr_grid.dims[1]; ++j)
            for (int i = 0; i < out.lr_grid.dims[0]; ++i)
                out.lr_mask.inside(i, j, k) = frame.hr_mask.inside(2 * i, 2 * j, 2 * k);
    return out;
}

PatchPair assemble_patch(const EncodedFrame& enc, const FrameVolumes& frame,
                         const Vec3i& origin, int lr_patch) {
    std::array<VolumeD, 3> lr_vel, lr_mag, hr_vel;
    const Vec3i hr_origin{2 * origin[0], 2 * origin[1], 2 * origin[2]};
    for (int c = 0; c < 3; ++c) {
        lr_vel[std::size_t(c)] = VolumeD({lr_patch, lr_patch, lr_patch});
        lr_mag[std::size_t(c)] = VolumeD({lr_patch, lr_patch, lr_patch});
        hr_vel[std::size_t(c)] = VolumeD({2 * lr_patch, 2 * lr_patch, 2 * lr_patch});
        for (int k = 0; k < lr_patch; ++k)
            for (int j = 0; j < lr_patch; ++j)
                for (int i = 0; i < lr_patch; ++i) {
                    lr_vel[std::size_t(c)](i, j, k) = enc.lr_velocity[std::size_t(c)](
                        origin[0] + i, origin[1] + j, origin[2] + k);
                    lr_mag[std::size_t(c)](i, j, k) = enc.lr_magnitude[std::size_t(c)](
                        origin[0] + i, origin[1] + j, origin[2] + k);
                }
        for (int k = 0; k < 2 * lr_patch; ++k)
            for (int j = 0; j < 2 * lr_patch; ++j)
                for (int i = 0; i < 2 * lr_patch; ++i)
                    hr_vel[std::size_t(c)](i, j, k) = frame.hr_velocity[std::size_t(c)](
                        hr_origin[0] + i, hr_origin[1] + j, hr_origin[2] + k);
    }
    double ff = fluid_fraction(enc.lr_mask, origin, lr_patch);
    return normalize_pair(lr_vel, lr_mag, hr_vel, enc.aug.venc, ff);
}

constexpr int kLrPatch = 16;
constexpr int kPatchesPerFrame = 10;
constexpr double kMinFluid = 0.2;

} // namespace

BuildDatasetResult run_build_dataset(const PipelineConfig& cfg) {
    cfg.validate();
    const SourceSpec* test_src = cfg.test_source();
    auto train_srcs = cfg.train_sources();
    if (train_srcs.empty()) throw ConfigError("build-dataset: no train sources configured");
    if (!test_src) throw ConfigError("build-dataset: a test source is required");

    BuildDatasetResult result;
    result.train_path = cfg.out_dir / "train.f4d1";
    result.val_path = cfg.out_dir / "val.f4d1";
    result.test_lr_path = cfg.out_dir / "test_lr.f4d1";
    result.test_hr_path = cfg.out_dir / "test_hr.f4d1";

    const std::string policy_json = policy_to_json(cfg.augmentation);
    auto patch_header = [&](const std::string& split) {
        ContainerHeader h;
        h.kind = "patch_pair";
        h.split = split;
        h.seed = cfg.seed;
        h.spacing_mm = cfg.grid.spacing_mm;
        h.lr_dims = {kLrPatch, kLrPatch, kLrPatch};
        h.hr_dims = {2 * kLrPatch, 2 * kLrPatch, 2 * kLrPatch};
        h.policy_json = policy_json;
        return h;
    };

    DatasetManifest manifest;
    manifest.policy_json = policy_json;

    // ---- training split ----
    {
        ContainerWriter writer(result.train_path, patch_header("train"));
        for (std::size_t si = 0; si < train_srcs.size(); ++si) {
            const SourceSpec& src = *train_srcs[si];
            ContainerReader frames(frames_path(cfg, src.name));
            const int n_frames = int(frames.header().count);
            for (int f = 0; f < n_frames; ++f) {
                FrameVolumes frame = load_frame(frames.header(), frames.read_volume(), cfg.grid);
                manifest.source_frames.push_back(src.name + ":" + std::to_string(f));

                const std::uint64_t draw =
                    (std::uint64_t(si) << 32) | std::uint64_t(f);
                FrameAugmentation aug = sample_augmentation(
                    cfg.augmentation, {frame.max_abs[0], frame.max_abs[1], frame.max_abs[2]},
                    draw);
                EncodedFrame enc = encode_downsample(
                    frame, cfg.grid, aug, mix_seed(cfg.seed, kSeedNoise, draw));

                Rng origin_rng(mix_seed(cfg.seed, kSeedOrigins, draw));
                PatchOrigins origins =
                    extract_patches(enc.lr_mask, kLrPatch, kPatchesPerFrame, kMinFluid,
                                    origin_rng, src.name + ":" + std::to_string(f));

                // original + 9 rotations per origin, assembled in parallel
                const int n_origins = int(origins.origins.size());
                std::vector<std::vector<PatchPair>> per_origin(std::size_t(n_origins));
                parallel_for(n_origins, [&](int oi) {
                    PatchPair base = assemble_patch(enc, frame,
                                                    origins.origins[std::size_t(oi)], kLrPatch);
                    std::vector<PatchPair> group;
                    group.reserve(10);
                    group.push_back(base);
                    auto rots = rotation_variants(base);
                    for (auto& r : rots) group.push_back(std::move(r));
                    per_origin[std::size_t(oi)] = std::move(group);
                });
                for (auto& group : per_origin)
                    for (auto& p : group) writer.append(p);
            }
            frames.finish();
        }
        writer.close();
        manifest.counts["train"] = writer.count();
    }

    // ---- validation split + test volumes (held-out source) ----
    {
        ContainerWriter val_writer(result.val_path, patch_header("val"));

        ContainerReader frames(frames_path(cfg, test_src->name));
        const int n_frames = int(frames.header().count);

        ContainerHeader lr_header;
        lr_header.kind = "volume";
        lr_header.split = "test_lr";
        lr_header.seed = cfg.seed;
        lr_header.dims = {cfg.grid.dims[0] / 2, cfg.grid.dims[1] / 2, cfg.grid.dims[2] / 2};
        lr_header.spacing_mm = {cfg.grid.spacing_mm[0] * 2, cfg.grid.spacing_mm[1] * 2,
                                cfg.grid.spacing_mm[2] * 2};
        lr_header.arrays = {"vx", "vy", "vz", "mx", "my", "mz"};
        ContainerWriter lr_writer(result.test_lr_path, lr_header);

        ContainerHeader hr_header;
        hr_header.kind = "volume";
        hr_header.split = "test_hr";
        hr_header.seed = cfg.seed;
        hr_header.dims = cfg.grid.dims;
        hr_header.spacing_mm = cfg.grid.spacing_mm;
        hr_header.arrays = {"vx", "vy", "vz", "mask"};
        ContainerWriter hr_writer(result.test_hr_path, hr_header);

        for (int f = 0; f < n_frames; ++f) {
            VolumeRecord frame_rec = frames.read_volume();
            const float time_s = frame_rec.meta.aux;
            FrameVolumes frame = load_frame(frames.header(), std::move(frame_rec), cfg.grid);
            manifest.source_frames.push_back(test_src->name + ":" + std::to_string(f));

            const std::uint64_t draw = (std::uint64_t(0xFFFF) << 32) | std::uint64_t(f);
            FrameAugmentation aug = sample_augmentation(
                cfg.augmentation, {frame.max_abs[0], frame.max_abs[1], frame.max_abs[2]}, draw);
            EncodedFrame enc =
                encode_downsample(frame, cfg.grid, aug, mix_seed(cfg.seed, kSeedNoise, draw));

            // validation: 1 constrained origin per frame, 10 variants
            Rng origin_rng(mix_seed(cfg.seed, kSeedOrigins, draw));
            PatchOrigins origins =
                extract_patches(enc.lr_mask, kLrPatch, 2, kMinFluid, origin_rng,
                                test_src->name + ":" + std::to_string(f));
            PatchPair base = assemble_patch(enc, frame, origins.origins.front(), kLrPatch);
            val_writer.append(base);
            for (const auto& rot : rotation_variants(base)) val_writer.append(rot);

            // full LR volume (network input) and HR truth
            VolumeRecord lr_rec;
            lr_rec.arrays = {to_float(enc.lr_velocity[0]),  to_float(enc.lr_velocity[1]),
                             to_float(enc.lr_velocity[2]),  to_float(enc.lr_magnitude[0]),
                             to_float(enc.lr_magnitude[1]), to_float(enc.lr_magnitude[2])};
            lr_rec.meta.venc = {float(aug.venc[0]), float(aug.venc[1]), float(aug.venc[2])};
            lr_rec.meta.aux = time_s;
            lr_writer.append(lr_rec);

            VolumeRecord hr_rec;
            hr_rec.arrays = {to_float(frame.hr_velocity[0]), to_float(frame.hr_velocity[1]),
                             to_float(frame.hr_velocity[2]), mask_to_float(frame.hr_mask)};
            hr_rec.meta.venc = lr_rec.meta.venc;
            hr_rec.meta.aux = time_s;
            hr_writer.append(hr_rec);
        }
        frames.finish();
        val_writer.close();
        lr_writer.close();
        hr_writer.close();
        manifest.counts["val"] = val_writer.count();
        manifest.counts["test_lr"] = lr_writer.count();
        manifest.counts["test_hr"] = hr_writer.count();
    }

    manifest.save(cfg.out_dir / "manifest.json");
    result.manifest = manifest;
    return result;
}

// ---- train -----------------------------------------------------------------------

TrainCommandResult run_train(const PipelineConfig& cfg) {
    cfg.validate();
    std::vector<PatchPair> train_patches = read_dataset(cfg.out_dir / "train.f4d1");
    std::vector<PatchPair> val_patches = read_dataset(cfg.out_dir / "val.f4d1");

    Net<float> net(cfg.net, mix_seed(cfg.seed, kSeedInit));

    TrainCommandResult out;
    out.checkpoint_path = cfg.out_dir / "checkpoint.f4dw";
    std::ofstream step_log(cfg.out_dir / "train_log.tsv");
    std::ofstream val_log(cfg.out_dir / "val_log.tsv");
    out.result = train_loop(train_patches, val_patches, net, cfg.train, cfg.grid.spacing_mm,
                            out.checkpoint_path, &step_log, &val_log);
    return out;
}

// ---- predict -----------------------------------------------------------------------

std::filesystem::path run_predict(const PipelineConfig& cfg,
                                  const std::filesystem::path& input,
                                  const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& output) {
    cfg.validate();
    Checkpoint ckpt = load_checkpoint(checkpoint);
    Net<float> net(ckpt.config, std::move(ckpt.params));

    ContainerReader reader(input);
    if (reader.header().kind != "volume" || reader.header().arrays.size() != 6)
        throw FormatError("predict: input must be a volume container with vx..vz, mx..mz");
    const Grid3 lr_grid{reader.header().dims, reader.header().spacing_mm};

    ContainerHeader out_header;
    out_header.kind = "volume";
    out_header.split = "pred";
    out_header.seed = reader.header().seed;
    out_header.dims = {2 * lr_grid.dims[0], 2 * lr_grid.dims[1], 2 * lr_grid.dims[2]};
    out_header.spacing_mm = {lr_grid.spacing_mm[0] / 2, lr_grid.spacing_mm[1] / 2,
                             lr_grid.spacing_mm[2] / 2};
    out_header.arrays = {"vx", "vy", "vz"};
    ContainerWriter writer(output, out_header);

    PatchPredictor predictor = net_predictor(net);
    for (std::uint64_t f = 0; f < reader.header().count; ++f) {
        VolumeRecord rec = reader.read_volume();
        std::array<VolumeD, 3> vel, mag;
        for (int c = 0; c < 3; ++c) {
            vel[std::size_t(c)] = VolumeD(lr_grid.dims);
            mag[std::size_t(c)] = VolumeD(lr_grid.dims);
            for (std::int64_t i = 0; i < vel[std::size_t(c)].size(); ++i) {
                vel[std::size_t(c)][i] = double(rec.arrays[std::size_t(c)][i]);
                mag[std::size_t(c)][i] = double(rec.arrays[std::size_t(c) + 3][i]);
            }
        }
        Vec3d venc{double(rec.meta.venc[0]), double(rec.meta.venc[1]),
                   double(rec.meta.venc[2])};
        UpsampleResult sr =
            upsample_full(vel, mag, venc, lr_grid, predictor, cfg.infer_patch_size);

        VolumeRecord out_rec;
        out_rec.arrays = {to_float(sr.stitched.field.v[0]), to_float(sr.stitched.field.v[1]),
                          to_float(sr.stitched.field.v[2])};
        out_rec.meta = rec.meta;
        writer.append(out_rec);
    }
    reader.finish();
    writer.close();
    return output;
}

// ---- evaluate -----------------------------------------------------------------------

namespace {

VelocityField field_from_record(const VolumeRecord& rec, const Grid3& grid) {
    VelocityField f(grid);
    for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < f.v[std::size_t(c)].size(); ++i)
            f.v[std::size_t(c)][i] = double(rec.arrays[std::size_t(c)][i]);
    return f;
}

MetricReport evaluate_method(const PipelineConfig& cfg, int frame, const std::string& method,
                             const VelocityField& pred, const VelocityField& truth,
                             const FluidMask& mask, const std::vector<PlaneSpec>& planes,
                             const std::vector<double>& truth_rates) {
    MetricReport r;
    r.frame = frame;
    r.method = method;
    r.rel_speed_error_mean = rel_speed_error(pred, truth, mask, cfg.metric);
    for (std::size_t p = 0; p < planes.size(); ++p) {
        double rate = flow_rate(pred, planes[p]);
        r.flow_rates_ml_s.push_back(rate);
        r.truth_flow_rates_ml_s.push_back(truth_rates[p]);
        r.flow_rate_errors.push_back(flow_rate_error(rate, truth_rates[p]));
    }
    r.divergence = divergence_stats(pred, mask);

    auto samples = sample_mask_voxels(mask, cfg.bland_altman_samples,
                                      mix_seed(cfg.seed, kSeedEval, std::uint64_t(frame)));
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ps, ts;
        ps.reserve(samples.size());
        ts.reserve(samples.size());
        for (auto idx : samples) {
            ps.push_back(pred.v[std::size_t(c)][idx]);
            ts.push_back(truth.v[std::size_t(c)][idx]);
        }
        r.bland_altman_per_component[std::size_t(c)] = bland_altman(ps, ts);
    }
    return r;
}

} // namespace

std::vector<MetricReport> run_evaluate(const PipelineConfig& cfg,
                                       const std::filesystem::path& pred_path,
                                       const std::filesystem::path& truth_path,
                                       const std::optional<std::filesystem::path>& lr_path,
                                       const std::filesystem::path& report_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(report_dir, ec);

    ContainerReader pred_reader(pred_path);
    ContainerReader truth_reader(truth_path);
    std::optional<ContainerReader> lr_reader;
    if (lr_path) lr_reader.emplace(*lr_path);

    if (pred_reader.header().dims != truth_reader.header().dims)
        throw FormatError("evaluate: prediction and truth dims differ");
    if (pred_reader.header().count != truth_reader.header().count)
        throw FormatError("evaluate: prediction and truth frame counts differ");

    const Grid3 hr_grid{truth_reader.header().dims, truth_reader.header().spacing_mm};
    std::vector<MetricReport> reports;

    for (std::uint64_t f = 0; f < truth_reader.header().count; ++f) {
        VolumeRecord truth_rec = truth_reader.read_volume();
        VelocityField truth = field_from_record(truth_rec, hr_grid);
        FluidMask mask(hr_grid);
        for (std::int64_t i = 0; i < mask.inside.size(); ++i)
            mask.inside[i] = truth_rec.arrays[3][i] > 0.5f ? 1 : 0;

        std::vector<PlaneSpec> planes;
        for (auto& [axis, index] : cfg.planes) planes.push_back(make_plane(mask, axis, index));
        std::vector<double> truth_rates;
        for (auto& plane : planes) truth_rates.push_back(flow_rate(truth, plane));

        VolumeRecord pred_rec = pred_reader.read_volume();
        reports.push_back(evaluate_method(cfg, int(f), "4dflownet",
                                          field_from_record(pred_rec, hr_grid), truth, mask,
                                          planes, truth_rates));

        if (lr_reader) {
            VolumeRecord lr_rec = lr_reader->read_volume();
            const Grid3 lr_grid{lr_reader->header().dims, lr_reader->header().spacing_mm};
            VelocityField lr = field_from_record(lr_rec, lr_grid);
            reports.push_back(evaluate_method(cfg, int(f), "linear",
                                              upsample_trilinear_baseline(lr), truth, mask,
                                              planes, truth_rates));
            reports.push_back(evaluate_method(cfg, int(f), "cubic",
                                              upsample_tricubic_baseline(lr), truth, mask,
                                              planes, truth_rates));
            reports.push_back(evaluate_method(cfg, int(f), "sinc", sinc_upsample(lr, 2), truth,
                                              mask, planes, truth_rates));
        }
    }
    pred_reader.finish();
    truth_reader.finish();
    if (lr_reader) lr_reader->finish();

    // reports.json (one JSON array) + Fig-7-style per-frame TSV
    std::ofstream js(report_dir / "reports.json");
    js << "[\n";
    for (std::size_t i = 0; i < reports.size(); ++i)
        js << reports[i].to_json() << (i + 1 < reports.size() ? ",\n" : "\n");
    js << "]\n";

    std::ofstream tsv(report_dir / "frames.tsv");
    tsv << "frame\tmethod\trel_speed_error\n";
    for (const auto& r : reports)
        tsv << r.frame << '\t' << r.method << '\t' << r.rel_speed_error_mean << '\n';

    return reports;
}

} // namespace flow4dsr
