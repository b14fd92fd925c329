#pragma once

// Command implementations behind the mvmotion executable. Each returns the
// process exit code: 0 success, 1 runtime failure, 2 validation failure.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mvmotion/analysis.hpp"
#include "mvmotion/baselines.hpp"
#include "mvmotion/metrics.hpp"
#include "mvmotion/phantom.hpp"
#include "mvmotion/study_io.hpp"
#include "mvmotion/tracker.hpp"

namespace mvmotion::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char *version = "0.1.0";

enum exit_code : int { ok = 0, runtime_failure = 1, validation_failure = 2 };

/// Runs `fn`, mapping exceptions to exit codes and printing them to `err`.
inline int guarded(const std::function<int()> &fn, std::ostream &err = std::cerr) {
    try {
        return fn();
    } catch (const std::invalid_argument &e) {
        err << "error: " << e.what() << "\n";
        return validation_failure;
    } catch (const nlohmann::json::exception &e) {
        err << "error: malformed JSON: " << e.what() << "\n";
        return validation_failure;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return runtime_failure;
    }
}

inline std::string num(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

inline std::string num_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline json load_optional_json(const std::optional<fs::path> &p) {
    if (!p) return json::object();
    return io::read_json(*p);
}

// ------------------------------------------------------------ phantom

struct PhantomArgs {
    std::optional<fs::path> config;
    fs::path out;
    std::optional<std::uint64_t> seed;
};

inline int cmd_phantom(const PhantomArgs &a, std::ostream &log = std::cerr) {
    PhantomConfig cfg = phantom_config_from_json(load_optional_json(a.config));
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    PhantomStudy st = generate(cfg);
    if (cfg.misalignment_mm > 0.0) {
        st = apply_misalignment(st, cfg.misalignment_mm, cfg.seed ^ 0x6d6973616c69676eULL);
    } else {
        st.slice_offsets_mm.assign(static_cast<std::size_t>(cfg.dims.d), {0.0, 0.0});
    }
    io::write_study(a.out, st);
    log << "phantom: wrote " << st.frames() << " frames to " << a.out.string() << "\n";
    return ok;
}

// ------------------------------------------------------------ track / baseline

struct TrackArgs {
    fs::path study;
    std::optional<fs::path> config;
    fs::path out;
    int threads = 0;
};

inline void write_run_files(const fs::path &out, const json &run, const json &timing) {
    io::write_json(out / "run.json", run);
    io::write_json(out / "run_timing.json", timing);
}

inline int cmd_track(const TrackArgs &a, std::ostream &log = std::cerr) {
    TrackerConfig cfg = tracker_config_from_json(load_optional_json(a.config));
    if (a.threads < 0) throw std::invalid_argument("--threads must be >= 0");
    cfg.threads = a.threads;
    const auto loaded = io::load_study(a.study);
    const auto t0 = std::chrono::steady_clock::now();
    const TrackingResult res = track_sequence(loaded.study, cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    io::FieldSet set;
    set.method = "tracker";
    set.frames = loaded.study.frames();
    for (const auto &f : res.failures) set.failures.emplace_back(f.frame, f.message);
    for (int t = 1; t < set.frames; ++t) {
        const bool failed = std::any_of(res.failures.begin(), res.failures.end(), [t](const FrameFailure &f) { return f.frame == t; });
        if (!failed) set.fields.emplace(t, res.fields[static_cast<std::size_t>(t)]);
    }
    io::write_field_set(a.out, set);

    std::string trace = "frame,iteration,level,L_sim,L_smooth,L_shape,total\n";
    for (int t = 1; t < set.frames; ++t)
        for (const auto &r : res.traces[static_cast<std::size_t>(t)]) {
            trace += std::to_string(t) + "," + std::to_string(r.iteration) + "," + std::to_string(r.level) + "," +
                     num_g(r.loss.sim) + "," + num_g(r.loss.smooth) + "," + num_g(r.loss.shape) + "," + num_g(r.loss.total) + "\n";
        }
    io::write_text(a.out / "trace.csv", trace);

    const json cfg_json = tracker_config_to_json(cfg);
    json fails = json::array();
    for (const auto &f : res.failures) fails.push_back({{"frame", f.frame}, {"message", f.message}});
    write_run_files(a.out,
                    {{"method", "tracker"},
                     {"version", version},
                     {"subject", loaded.subject},
                     {"config", cfg_json},
                     {"config_hash", io::hex64(io::fnv1a64(cfg_json.dump()))},
                     {"frames", set.frames},
                     {"iterations", res.iterations},
                     {"failures", fails},
                     {"warnings", res.warnings}},
                    {{"seconds_total", seconds}, {"seconds_per_frame", res.seconds}, {"threads", cfg.threads}});
    for (const auto &w : res.warnings) log << "warning: " << w << "\n";
    for (const auto &f : res.failures) log << "frame " << f.frame << " failed: " << f.message << "\n";
    const bool any_ok = static_cast<int>(res.failures.size()) < set.frames - 1;
    log << "track: " << set.fields.size() << " of " << set.frames - 1 << " frames in " << num(seconds, 1) << " s\n";
    return any_ok ? ok : runtime_failure;
}

struct BaselineArgs {
    fs::path study;
    std::string method;
    std::optional<fs::path> config;
    fs::path out;
    int threads = 0;
};

inline int cmd_baseline(const BaselineArgs &a, std::ostream &log = std::cerr) {
    if (a.method != "demons" && a.method != "ffd") {
        throw std::invalid_argument("unknown baseline method '" + a.method + "' (expected demons or ffd)");
    }
    if (a.threads < 0) throw std::invalid_argument("--threads must be >= 0");
    const json cj = load_optional_json(a.config);
    DemonsConfig dcfg;
    FfdConfig fcfg;
    json cfg_json;
    if (a.method == "demons") {
        dcfg = demons_config_from_json(cj);
        cfg_json = demons_config_to_json(dcfg);
    } else {
        fcfg = ffd_config_from_json(cj);
        cfg_json = ffd_config_to_json(fcfg);
    }
    const auto loaded = io::load_study(a.study);
    const PhantomStudy &st = loaded.study;
    const int frames = st.frames();
    std::vector<std::optional<DisplacementField>> fields(static_cast<std::size_t>(frames));
    std::vector<std::string> errors(static_cast<std::size_t>(frames));
    std::vector<double> seconds(static_cast<std::size_t>(frames), 0.0);

    auto run = [&](int t) {
        const auto ut = static_cast<std::size_t>(t);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fields[ut] = a.method == "demons" ? register_demons(st.images[ut], st.images[0], dcfg)
                                              : register_ffd(st.images[ut], st.images[0], fcfg);
        } catch (const std::exception &e) {
            errors[ut] = e.what();
        }
        seconds[ut] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const auto t0 = std::chrono::steady_clock::now();
    if (a.threads <= 1) {
        for (int t = 1; t < frames; ++t) run(t);
    } else {
        std::atomic<int> next{1};
        std::vector<std::thread> pool;
        for (int w = 0; w < a.threads; ++w)
            pool.emplace_back([&] {
                for (int t = next++; t < frames; t = next++) run(t);
            });
        for (auto &th : pool) th.join();
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    io::FieldSet set;
    set.method = a.method;
    set.frames = frames;
    json fails = json::array();
    for (int t = 1; t < frames; ++t) {
        const auto ut = static_cast<std::size_t>(t);
        if (fields[ut]) {
            set.fields.emplace(t, std::move(*fields[ut]));
        } else {
            set.failures.emplace_back(t, errors[ut]);
            fails.push_back({{"frame", t}, {"message", errors[ut]}});
            log << "frame " << t << " failed: " << errors[ut] << "\n";
        }
    }
    io::write_field_set(a.out, set);
    write_run_files(a.out,
                    {{"method", a.method},
                     {"version", version},
                     {"subject", loaded.subject},
                     {"config", cfg_json},
                     {"config_hash", io::hex64(io::fnv1a64(cfg_json.dump()))},
                     {"frames", frames},
                     {"failures", fails},
                     {"warnings", json::array()}},
                    {{"seconds_total", total}, {"seconds_per_frame", seconds}, {"threads", a.threads}});
    log << "baseline " << a.method << ": " << set.fields.size() << " of " << frames - 1 << " frames in " << num(total, 1) << " s\n";
    return set.fields.empty() ? runtime_failure : ok;
}

// ------------------------------------------------------------ eval

struct EvalRow {
    std::string subject;
    std::string method;
    double dice = 0.0;
    double hd_mm = 0.0;
    double vd_pct = 0.0;
    double negjac_pct = 0.0;
    std::optional<double> epe_mm;
    std::optional<double> epe_z_mm;
};

inline const char *eval_header = "subject,method,dice,hd_mm,vd_pct,negjac_pct,epe_mm,epe_z_mm";

inline std::string eval_csv(const std::vector<EvalRow> &rows) {
    std::string s = std::string(eval_header) + "\n";
    for (const auto &r : rows) {
        s += r.subject + "," + r.method + "," + num(r.dice) + "," + num(r.hd_mm) + "," + num(r.vd_pct) + "," +
             num(r.negjac_pct) + "," + (r.epe_mm ? num(*r.epe_mm) : "NA") + "," + (r.epe_z_mm ? num(*r.epe_z_mm) : "NA") +
             "\n";
    }
    return s;
}

/// ED->ES evaluation of one field: S_0 warped to ES against S_ES.
inline EvalRow evaluate_es(const std::string &subject, const std::string &method, const PhantomStudy &st, int es,
                           const DisplacementField &field, bool have_truth) {
    const auto ues = static_cast<std::size_t>(es);
    const LabelVolume warped = warp_labels(st.labels[0], field);
    EvalRow r;
    r.subject = subject;
    r.method = method;
    r.dice = dice(warped, st.labels[ues], labels::myocardium).value;
    r.hd_mm = hausdorff_mm(warped, st.labels[ues], labels::myocardium);
    r.vd_pct = volume_difference(st.labels[0], warped, labels::myocardium);
    r.negjac_pct = negative_jacobian_fraction(field, label_mask(warped, labels::myocardium));
    if (have_truth) {
        const auto e = end_point_error(field, st.gt_fields[ues], label_mask(st.labels[ues], labels::myocardium));
        r.epe_mm = e.mean_mm;
        r.epe_z_mm = e.axis_mean_mm.z;
    }
    return r;
}

struct EvalArgs {
    fs::path study;
    std::vector<fs::path> fields;
    fs::path out;
};

inline int cmd_eval(const EvalArgs &a, std::ostream &log = std::cerr) {
    if (a.fields.empty()) throw std::invalid_argument("eval needs at least one --fields directory");
    const auto loaded = io::load_study(a.study);
    const PhantomStudy &st = loaded.study;
    const EsFrame es = find_es_frame(st.images, st.config.noise_sigma);
    if (es.low_confidence) log << "warning: ES frame " << es.index << " is low-confidence (max MSE " << es.max_mse << ")\n";
    std::vector<EvalRow> rows;
    for (const auto &dir : a.fields) {
        const io::FieldSet set = io::read_field_set(dir);
        if (set.frames != st.frames()) throw std::invalid_argument(dir.string() + ": frame count differs from the study");
        auto it = set.fields.find(es.index);
        if (it == set.fields.end()) {
            log << "error: " << dir.string() << " has no field for ES frame " << es.index << "\n";
            return runtime_failure;
        }
        rows.push_back(evaluate_es(loaded.subject, set.method, st, es.index, it->second, true));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const EvalRow &x, const EvalRow &y) { return x.method < y.method; });
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    io::write_text(a.out, eval_csv(rows));
    log << "eval: ES frame " << es.index << ", " << rows.size() << " rows\n";
    return ok;
}

// ------------------------------------------------------------ report

struct ReportArgs {
    fs::path study;
    fs::path fields;
    fs::path out;
};

inline int cmd_report(const ReportArgs &a, std::ostream &log = std::cerr) {
    const auto loaded = io::load_study(a.study);
    const PhantomStudy &st = loaded.study;
    const io::FieldSet set = io::read_field_set(a.fields);
    const auto &d = st.config.dims;
    const auto &s = st.config.spacing;
    std::vector<DisplacementField> fields;
    for (int t = 0; t < st.frames(); ++t) fields.push_back(set.at(t, d, s));  // throws when a frame is missing
    const auto [point, dir] = io::study_lv_axis(a.study);
    const LvAxis axis{point, dir};
    fs::create_directories(a.out);
    int failures = 0;
    auto attempt = [&](const std::string &what, const std::function<void()> &fn) {
        try {
            fn();
        } catch (const std::exception &e) {
            ++failures;
            log << "error: " << what << ": " << e.what() << "\n";
        }
    };

    attempt("volume curve", [&] {
        const VolumeCurve c = lv_volume_curve(st.labels[0], fields);
        const EjectionFraction ef = ejection_fraction(c.volume_ml);
        std::string csv = "t,volume_mL,volume_norm,ef_pct\n";
        for (std::size_t t = 0; t < c.volume_ml.size(); ++t) {
            csv += std::to_string(t) + "," + num(c.volume_ml[t]) + "," + num(c.normalized[t]) + "," + num(ef.per_frame_pct[t]) + "\n";
        }
        io::write_text(a.out / "volume.csv", csv);
    });

    attempt("strain", [&] {
        const LabelVolume myo = label_mask(st.labels[0], labels::myocardium);
        std::string csv = "t,radial,circ,long\n";
        for (int t = 0; t < st.frames(); ++t) {
            const DisplacementField fwd = invert_field(fields[static_cast<std::size_t>(t)], &myo);
            const Strains e = global_strains(fwd, myo, axis);
            csv += std::to_string(t) + "," + num(e.radial) + "," + num(e.circumferential) + "," + num(e.longitudinal) + "\n";
        }
        io::write_text(a.out / "strain.csv", csv);
    });

    attempt("wall thickness", [&] {
        const EsFrame es = find_es_frame(st.images, st.config.noise_sigma);
        const WallThickness ed = wall_thickness_global(st.labels[0], axis);
        const WallThickness esw = wall_thickness_global(warp_labels(st.labels[0], fields[static_cast<std::size_t>(es.index)]), axis);
        io::write_json(a.out / "wall_thickness.json", {{"es_index", es.index},
                                                       {"ed_mm", ed.global_mm},
                                                       {"es_mm", esw.global_mm},
                                                       {"thickening_pct", fractional_wall_thickening(ed.global_mm, esw.global_mm)},
                                                       {"ed_slices", ed.slices.size()},
                                                       {"ed_skipped_slices", ed.skipped},
                                                       {"es_slices", esw.slices.size()},
                                                       {"es_skipped_slices", esw.skipped}});
    });
    log << "report: " << (3 - failures) << " of 3 artifacts written to " << a.out.string() << "\n";
    return failures ? runtime_failure : ok;
}

}  // namespace mvmotion::cli
