#pragma once

// Multi-resolution Adam descent on the tracking objective. The displacement
// field itself is the parameter vector (one 3-vector per voxel).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"
#include "mvmotion/multiview.hpp"
#include "mvmotion/objective.hpp"
#include "mvmotion/phantom.hpp"
#include "mvmotion/pyramid.hpp"

namespace mvmotion {

struct TrackerConfig {
    LossWeights weights;
    std::vector<std::int64_t> factors{4, 2, 1};  // coarse to fine
    std::vector<int> iterations{100, 100, 150};
    double step = 0.25;  // coarsest-level step in that level's voxels; halved per level
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_floor = 1e-8;
    double convergence_tol = 1e-5;  // relative decrease over `convergence_window` iterations
    int convergence_window = 10;
    bool warm_start = false;
    bool use_lax = true;
    double edge_sigma = 0.5;  // softening of the ED edge map, voxels
    int threads = 0;          // 0 or 1: sequential

    void validate() const {
        weights.validate();
        if (factors.empty()) throw std::invalid_argument("tracker config 'factors' needs at least one level");
        if (factors.size() != iterations.size()) {
            throw std::invalid_argument("tracker config 'factors' and 'iterations' differ in length");
        }
        for (auto f : factors)
            if (f < 1) throw std::invalid_argument("tracker config 'factors' entries must be >= 1");
        if (factors.back() != 1) throw std::invalid_argument("tracker config: the last level must have factor 1");
        for (std::size_t i = 1; i < factors.size(); ++i)
            if (factors[i - 1] % factors[i] != 0) {
                throw std::invalid_argument("tracker config 'factors' must divide each other coarse to fine");
            }
        for (int it : iterations)
            if (it < 1) throw std::invalid_argument("tracker config 'iterations' entries must be >= 1");
        if (!(step > 0.0)) throw std::invalid_argument("tracker config 'step' must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw std::invalid_argument("tracker config moment coefficients must lie in [0,1)");
        }
        if (!(adam_floor > 0.0)) throw std::invalid_argument("tracker config 'adam_floor' must be > 0");
        if (convergence_window < 1) throw std::invalid_argument("tracker config 'convergence_window' must be >= 1");
        if (!(edge_sigma >= 0.0)) throw std::invalid_argument("tracker config 'edge_sigma' must be >= 0");
        if (threads < 0) throw std::invalid_argument("tracker config 'threads' must be >= 0");
    }
};

inline nlohmann::json tracker_config_to_json(const TrackerConfig &c) {
    return {{"weights", weights_to_json(c.weights)},
            {"factors", c.factors},
            {"iterations", c.iterations},
            {"step", c.step},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_floor", c.adam_floor},
            {"convergence_tol", c.convergence_tol},
            {"convergence_window", c.convergence_window},
            {"warm_start", c.warm_start},
            {"use_lax", c.use_lax},
            {"edge_sigma", c.edge_sigma}};
}

inline TrackerConfig tracker_config_from_json(const nlohmann::json &j) {
    TrackerConfig c;
    try {
        if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
        if (j.contains("factors")) c.factors = j.at("factors").get<std::vector<std::int64_t>>();
        if (j.contains("iterations")) c.iterations = j.at("iterations").get<std::vector<int>>();
        if (j.contains("step")) c.step = j.at("step").get<double>();
        if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
        if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
        if (j.contains("adam_floor")) c.adam_floor = j.at("adam_floor").get<double>();
        if (j.contains("convergence_tol")) c.convergence_tol = j.at("convergence_tol").get<double>();
        if (j.contains("convergence_window")) c.convergence_window = j.at("convergence_window").get<int>();
        if (j.contains("warm_start")) c.warm_start = j.at("warm_start").get<bool>();
        if (j.contains("use_lax")) c.use_lax = j.at("use_lax").get<bool>();
        if (j.contains("edge_sigma")) c.edge_sigma = j.at("edge_sigma").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw std::invalid_argument(std::string("tracker config: ") + e.what());
    }
    c.validate();
    return c;
}

struct TraceRow {
    int iteration = 0;
    int level = 0;
    LossBreakdown loss;
};

struct PairResult {
    DisplacementField field;
    std::vector<TraceRow> trace;
    int iterations = 0;
    LossBreakdown initial_finest;  // loss of the zero field at the finest level
    LossBreakdown final_finest;
    std::vector<std::string> warnings;
};

class TrackingError : public std::runtime_error {
  public:
    TrackingError(const std::string &msg, std::vector<TraceRow> trace)
        : std::runtime_error(msg), trace_(std::move(trace)) {}
    const std::vector<TraceRow> &trace() const { return trace_; }

  private:
    std::vector<TraceRow> trace_;
};

/// Builds the objective context of one level from the finest one.
inline ObjectiveContext downsample_context(const ObjectiveContext &ctx, std::int64_t f) {
    if (f == 1) return ctx;
    ObjectiveContext out;
    out.source = downsample_mean(ctx.source, f);
    out.target = downsample_mean(ctx.target, f);
    if (ctx.ed_edges) out.ed_edges = downsample_mean(*ctx.ed_edges, f);
    for (const auto &v : ctx.views) {
        ViewTerm cv{v.kind, {}};
        for (const auto &p : v.planes) {
            cv.planes.push_back({downsample_any(p.mask, f), downsample_masked_mean(p.target, p.mask, f)});
        }
        out.views.push_back(std::move(cv));
    }
    return out;
}

inline PairResult track_pair(const ObjectiveContext &ctx, const TrackerConfig &cfg,
                             const DisplacementField *init = nullptr) {
    cfg.validate();
    PairResult res;
    if (init) require_same_dims(ctx.source, *init, "track_pair initial field");

    DisplacementField field;
    // a warm start already carries the large motion, so only the finest level refines it
    const std::size_t first = init ? cfg.factors.size() - 1 : 0;
    double step = std::ldexp(cfg.step, -static_cast<int>(first));
    for (std::size_t level = first; level < cfg.factors.size(); ++level) {
        const std::int64_t f = cfg.factors[level];
        const bool finest = level + 1 == cfg.factors.size();
        const Objective obj(downsample_context(ctx, f));
        if (level == first) {
            for (const auto &w : obj.warnings()) res.warnings.push_back(w);
        }
        const auto &dims = obj.context().source.dims();
        const auto &spacing = obj.context().source.spacing();

        if (level == first) {
            field = init ? *init : DisplacementField(dims, spacing);
        } else {
            field = upsample_field(field, dims, spacing, cfg.factors[level - 1] / f);
        }

        DisplacementField grad, m(dims, spacing), v(dims, spacing);
        DisplacementField best;
        double best_total = std::numeric_limits<double>::infinity();
        if (finest) {
            const DisplacementField zero(dims, spacing);
            res.initial_finest = obj.loss(zero, cfg.weights);
            best = zero;
            best_total = res.initial_finest.total;
            res.final_finest = res.initial_finest;
        }

        std::vector<double> history;
        double b1t = 1.0, b2t = 1.0;
        const int iters = cfg.iterations[level];
        for (int it = 0; it <= iters; ++it) {
            const LossBreakdown b = obj.loss_and_gradient(field, cfg.weights, grad);
            res.trace.push_back({it, static_cast<int>(level), b});
            if (!std::isfinite(b.total) || !all_finite(grad)) {
                throw TrackingError("non-finite loss at level " + std::to_string(level) + ", iteration " +
                                        std::to_string(it),
                                    res.trace);
            }
            if (finest && b.total < best_total) {
                best_total = b.total;
                best = field;
                res.final_finest = b;
            }
            history.push_back(b.total);
            const auto n = history.size();
            const auto win = static_cast<std::size_t>(cfg.convergence_window);
            if (it == iters) break;
            if (n > win) {
                const double prev = history[n - 1 - win];
                if ((prev - b.total) < cfg.convergence_tol * std::abs(prev)) break;
            }

            b1t *= cfg.beta1;
            b2t *= cfg.beta2;
            const double c1 = 1.0 / (1.0 - b1t), c2 = 1.0 / (1.0 - b2t);
            for (std::size_t i = 0; i < field.size(); ++i) {
                for (int c = 0; c < 3; ++c) {
                    const double g = grad[i][c];
                    double &mi = m[i][c];
                    double &vi = v[i][c];
                    mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * g;
                    vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * g * g;
                    field[i][c] -= step * (mi * c1) / (std::sqrt(vi * c2) + cfg.adam_floor);
                }
            }
            ++res.iterations;
        }
        if (finest) field = std::move(best);
        step *= 0.5;
    }
    res.field = std::move(field);
    return res;
}

/// Objective context pairing ED (frame 0) with frame t of a study.
inline ObjectiveContext make_frame_context(const PhantomStudy &study, int t, const TrackerConfig &cfg,
                                           std::vector<std::string> *warnings = nullptr) {
    ObjectiveContext ctx;
    ctx.source = study.images.at(0);
    ctx.target = study.images.at(static_cast<std::size_t>(t));
    if (cfg.weights.beta > 0.0) {
        const auto edge = extract_edge_map(study.labels.at(0), labels::myocardium);
        if (edge.label_absent && warnings) warnings->push_back("ED segmentation has no myocardium");
        ctx.ed_edges = soften_edges(edge.edge, cfg.edge_sigma);
        const bool lax_present = study.masks.two_chamber.has_value() || study.masks.four_chamber.has_value();
        if (cfg.use_lax && !lax_present && warnings) {
            warnings->push_back("no LAX planes in the study; shape term uses SAX planes only");
        }
        ctx.views = make_view_terms(study.masks, study.edges.at(static_cast<std::size_t>(t)), cfg.use_lax);
    }
    return ctx;
}

struct FrameFailure {
    int frame;
    std::string message;
};

struct TrackingResult {
    std::vector<DisplacementField> fields;  // fields[0] is zero
    std::vector<std::vector<TraceRow>> traces;
    std::vector<int> iterations;
    std::vector<double> seconds;
    std::vector<FrameFailure> failures;
    std::vector<std::string> warnings;
};

inline TrackingResult track_sequence(const PhantomStudy &study, const TrackerConfig &cfg) {
    cfg.validate();
    const int frames = study.frames();
    if (frames < 2) throw std::invalid_argument("track_sequence needs at least 2 frames");
    const auto &d = study.images[0].dims();
    const auto &s = study.images[0].spacing();
    TrackingResult out;
    out.fields.assign(static_cast<std::size_t>(frames), DisplacementField(d, s));
    out.traces.resize(static_cast<std::size_t>(frames));
    out.iterations.assign(static_cast<std::size_t>(frames), 0);
    out.seconds.assign(static_cast<std::size_t>(frames), 0.0);
    std::vector<std::vector<std::string>> frame_warnings(static_cast<std::size_t>(frames));
    std::vector<std::optional<std::string>> frame_error(static_cast<std::size_t>(frames));

    auto run_frame = [&](int t, const DisplacementField *init) {
        const auto ut = static_cast<std::size_t>(t);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto ctx = make_frame_context(study, t, cfg, &frame_warnings[ut]);
            PairResult r = track_pair(ctx, cfg, init);
            out.fields[ut] = std::move(r.field);
            out.traces[ut] = std::move(r.trace);
            out.iterations[ut] = r.iterations;
            for (auto &w : r.warnings) frame_warnings[ut].push_back(std::move(w));
        } catch (const TrackingError &e) {
            out.traces[ut] = e.trace();
            frame_error[ut] = e.what();
        } catch (const std::exception &e) {
            frame_error[ut] = e.what();
        }
        out.seconds[ut] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    const int workers = cfg.warm_start ? 1 : std::max(1, cfg.threads);
    if (workers <= 1) {
        for (int t = 1; t < frames; ++t) {
            const bool warm = cfg.warm_start && t > 1 && !frame_error[static_cast<std::size_t>(t - 1)];
            run_frame(t, warm ? &out.fields[static_cast<std::size_t>(t - 1)] : nullptr);
        }
    } else {
        std::atomic<int> next{1};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int t = next++; t < frames; t = next++) run_frame(t, nullptr);
            });
        }
        for (auto &th : pool) th.join();
    }

    for (int t = 1; t < frames; ++t) {
        const auto ut = static_cast<std::size_t>(t);
        for (const auto &w : frame_warnings[ut]) {
            if (std::find(out.warnings.begin(), out.warnings.end(), w) == out.warnings.end()) out.warnings.push_back(w);
        }
        if (frame_error[ut]) out.failures.push_back({t, *frame_error[ut]});
    }
    return out;
}

struct EsFrame {
    int index = 0;
    double max_mse = 0.0;
    bool low_confidence = false;
};

/// Frame with the largest intensity MSE to frame 0 (ties: smallest index).
/// Flagged low-confidence when that MSE is below 2 sigma^2.
inline EsFrame find_es_frame(const std::vector<ScalarVolume> &images, double noise_sigma) {
    if (images.size() < 2) throw std::invalid_argument("find_es_frame needs at least 2 frames");
    EsFrame es;
    es.max_mse = -1.0;
    for (std::size_t t = 1; t < images.size(); ++t) {
        require_same_dims(images[0], images[t], "find_es_frame");
        double sum = 0.0;
        for (std::size_t i = 0; i < images[0].size(); ++i) {
            const double r = images[t][i] - images[0][i];
            sum += r * r;
        }
        const double mse = sum / static_cast<double>(images[0].size());
        if (mse > es.max_mse) {
            es.max_mse = mse;
            es.index = static_cast<int>(t);
        }
    }
    es.low_confidence = es.max_mse < 2.0 * noise_sigma * noise_sigma;
    return es;
}

}  // namespace mvmotion
