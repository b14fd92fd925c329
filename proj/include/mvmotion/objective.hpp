#pragma once

// Tracking objective: total = L_sim + lambda * L_smooth + beta * L_shape, and
// its exact gradient with respect to every displacement component.
//
//   L_sim    = mean over all voxels of (I_t - I_0 o phi)^2
//   L_smooth = sqrt(eps + sum of squared forward differences of phi)
//   L_shape  = sum over views of the masked cross-entropy between the warped
//              soft ED edge map (clamped to [delta, 1 - delta]) and the
//              target-frame 2D edge maps. SAX averages its slice planes.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmotion/grid.hpp"
#include "mvmotion/multiview.hpp"

namespace mvmotion {

struct LossWeights {
    double lambda = 0.005;
    double beta = 5.0;
    double epsilon = 0.01;
    double delta = 1e-6;

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("loss weight 'lambda' must be >= 0");
        if (!(beta >= 0.0)) throw std::invalid_argument("loss weight 'beta' must be >= 0");
        if (!(epsilon > 0.0)) throw std::invalid_argument("loss weight 'epsilon' must be > 0");
        if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("loss weight 'delta' must lie in (0, 0.5)");
    }
};

inline nlohmann::json weights_to_json(const LossWeights &w) {
    return {{"lambda", w.lambda}, {"beta", w.beta}, {"epsilon", w.epsilon}, {"delta", w.delta}};
}

inline LossWeights weights_from_json(const nlohmann::json &j) {
    LossWeights w;
    if (j.contains("lambda")) w.lambda = j.at("lambda").get<double>();
    if (j.contains("beta")) w.beta = j.at("beta").get<double>();
    if (j.contains("epsilon")) w.epsilon = j.at("epsilon").get<double>();
    if (j.contains("delta")) w.delta = j.at("delta").get<double>();
    w.validate();
    return w;
}

struct LossBreakdown {
    double sim = 0.0;
    double smooth = 0.0;
    double shape = 0.0;
    double total = 0.0;
};

/// One acquisition plane of a view: its mask M^i and the target edge map E_t^i.
struct PlaneTerm {
    PlaneMask mask;
    ScalarVolume target;
};

struct ViewTerm {
    ViewKind kind = ViewKind::sax;
    std::vector<PlaneTerm> planes;
};

struct ObjectiveContext {
    ScalarVolume source;                    // I_0^sa
    ScalarVolume target;                    // I_t^sa
    std::optional<ScalarVolume> ed_edges;   // softened ED 3D edge map
    std::vector<ViewTerm> views;

    void validate() const {
        require_same_dims(source, target, "objective context (target image)");
        if (ed_edges) require_same_dims(source, *ed_edges, "objective context (ED edge map)");
        for (const auto &v : views)
            for (const auto &p : v.planes) {
                require_same_dims(source, p.mask, "objective context (plane mask)");
                require_same_dims(source, p.target, "objective context (edge target)");
            }
        auto in_unit = [](const ScalarVolume &v) {
            for (double x : v.data())
                if (!(x >= 0.0 && x <= 1.0)) return false;
            return true;
        };
        if (ed_edges && !in_unit(*ed_edges)) throw std::invalid_argument("ED edge map must lie in [0,1]");
        for (const auto &v : views)
            for (const auto &p : v.planes)
                if (!in_unit(p.target)) throw std::invalid_argument("edge targets must lie in [0,1]");
    }
};

/// Builds SAX/2CH/4CH view terms from rasterized masks and per-view target
/// volumes (sax, 2ch, 4ch). LAX views are skipped when `use_lax` is false or
/// their mask is absent.
inline std::vector<ViewTerm> make_view_terms(const ViewMasks &masks, const std::array<ScalarVolume, 3> &targets,
                                             bool use_lax = true) {
    std::vector<ViewTerm> views;
    ViewTerm sax{ViewKind::sax, {}};
    for (const auto &m : masks.sax) sax.planes.push_back({m, slice_volume(targets[0], m)});
    if (!sax.planes.empty()) views.push_back(std::move(sax));
    if (use_lax && masks.two_chamber) {
        views.push_back({ViewKind::two_chamber, {{*masks.two_chamber, slice_volume(targets[1], *masks.two_chamber)}}});
    }
    if (use_lax && masks.four_chamber) {
        views.push_back({ViewKind::four_chamber, {{*masks.four_chamber, slice_volume(targets[2], *masks.four_chamber)}}});
    }
    return views;
}

/// Masked CE terms flattened to one entry per voxel. Because CE is linear in
/// the target, overlapping planes merge exactly into a total weight and a
/// weighted-mean target.
struct ShapeVoxel {
    std::size_t index;
    double weight;
    double target;
};

struct CompiledShape {
    std::vector<ShapeVoxel> voxels;
    std::vector<std::string> warnings;
};

inline CompiledShape compile_shape(const ObjectiveContext &ctx) {
    CompiledShape out;
    const std::size_t n = ctx.source.size();
    std::vector<double> weight(n, 0.0), weighted_target(n, 0.0);
    for (const auto &view : ctx.views) {
        std::vector<std::size_t> counts;
        std::size_t nonempty = 0;
        for (const auto &p : view.planes) {
            counts.push_back(mask_count(p.mask));
            if (counts.back() > 0) ++nonempty;
        }
        if (nonempty == 0) {
            out.warnings.push_back("view " + view_name(view.kind) + " has an empty mask and contributes 0");
            continue;
        }
        for (std::size_t k = 0; k < view.planes.size(); ++k) {
            if (counts[k] == 0) {
                out.warnings.push_back("a " + view_name(view.kind) + " plane has an empty mask");
                continue;
            }
            const double w = 1.0 / (static_cast<double>(nonempty) * static_cast<double>(counts[k]));
            const auto &p = view.planes[k];
            for (std::size_t i = 0; i < n; ++i) {
                if (!p.mask[i]) continue;
                weight[i] += w;
                weighted_target[i] += w * p.target[i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] > 0.0) out.voxels.push_back({i, weight[i], weighted_target[i] / weight[i]});
    }
    return out;
}

inline double loss_smooth(const DisplacementField &field, double epsilon = 0.01) {
    const auto &d = field.dims();
    double sum = 0.0;
    std::size_t i = 0;
    const std::size_t sy = static_cast<std::size_t>(d.w), sz = static_cast<std::size_t>(d.w * d.h);
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                const Vec3 &v = field[i];
                if (x + 1 < d.w) { const Vec3 g = field[i + 1] - v; sum += dot(g, g); }
                if (y + 1 < d.h) { const Vec3 g = field[i + sy] - v; sum += dot(g, g); }
                if (z + 1 < d.d) { const Vec3 g = field[i + sz] - v; sum += dot(g, g); }
            }
    return std::sqrt(epsilon + sum);
}

/// grad += scale * d L_smooth / d phi. Returns L_smooth.
inline double add_smooth_gradient(const DisplacementField &field, double epsilon, double scale,
                                  DisplacementField &grad) {
    const double value = loss_smooth(field, epsilon);
    const auto &d = field.dims();
    const double k = scale / value;  // d sqrt(eps + S) = dS / (2 sqrt), dS = 2 * diff
    const std::size_t sy = static_cast<std::size_t>(d.w), sz = static_cast<std::size_t>(d.w * d.h);
    std::size_t i = 0;
    for (std::int64_t z = 0; z < d.d; ++z)
        for (std::int64_t y = 0; y < d.h; ++y)
            for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                const Vec3 &v = field[i];
                Vec3 g{};
                if (x + 1 < d.w) g -= field[i + 1] - v;
                if (x > 0) g += v - field[i - 1];
                if (y + 1 < d.h) g -= field[i + sy] - v;
                if (y > 0) g += v - field[i - sy];
                if (z + 1 < d.d) g -= field[i + sz] - v;
                if (z > 0) g += v - field[i - sz];
                grad[i] += g * k;
            }
    return value;
}

inline double cross_entropy(double target, double pred) {
    return -(target * std::log(pred) + (1.0 - target) * std::log(1.0 - pred));
}

/// Evaluates the objective on one context. Compiles the shape masks once.
class Objective {
  public:
    explicit Objective(ObjectiveContext ctx) : ctx_(std::move(ctx)) {
        ctx_.validate();
        shape_ = compile_shape(ctx_);
        if (!ctx_.ed_edges && !shape_.voxels.empty()) {
            throw std::invalid_argument("shape term needs an ED edge map");
        }
    }

    const ObjectiveContext &context() const { return ctx_; }
    const std::vector<std::string> &warnings() const { return shape_.warnings; }
    bool has_shape_term() const { return ctx_.ed_edges.has_value() && !shape_.voxels.empty(); }

    double sim(const DisplacementField &field) const {
        require_same_dims(ctx_.source, field, "loss_sim");
        const auto &d = field.dims();
        double sum = 0.0;
        std::size_t i = 0;
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                    const double r = ctx_.target[i] - sample_trilinear(ctx_.source, voxel_point(x, y, z) + field[i]);
                    sum += r * r;
                }
        return sum / static_cast<double>(field.size());
    }

    double shape(const DisplacementField &field, double delta) const {
        require_same_dims(ctx_.source, field, "loss_shape");
        if (!has_shape_term()) return 0.0;
        const auto &d = field.dims();
        double sum = 0.0;
        for (const auto &sv : shape_.voxels) {
            const auto [x, y, z] = unravel(d, sv.index);
            const double raw = sample_trilinear(*ctx_.ed_edges, voxel_point(x, y, z) + field[sv.index]);
            sum += sv.weight * cross_entropy(sv.target, std::clamp(raw, delta, 1.0 - delta));
        }
        return sum;
    }

    LossBreakdown loss(const DisplacementField &field, const LossWeights &w) const {
        LossBreakdown b;
        b.sim = sim(field);
        b.smooth = loss_smooth(field, w.epsilon);
        b.shape = shape(field, w.delta);
        b.total = b.sim + w.lambda * b.smooth + w.beta * b.shape;
        return b;
    }

    /// Loss and d total / d phi (written into `grad`, resized as needed).
    LossBreakdown loss_and_gradient(const DisplacementField &field, const LossWeights &w,
                                    DisplacementField &grad) const {
        require_same_dims(ctx_.source, field, "total_loss_gradient");
        if (!grad.same_geometry(field)) grad = DisplacementField(field.dims(), field.spacing());
        grad.fill(Vec3{});
        LossBreakdown b;
        const auto &d = field.dims();
        const double n = static_cast<double>(field.size());

        double sum = 0.0;
        std::size_t i = 0;
        for (std::int64_t z = 0; z < d.d; ++z)
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x, ++i) {
                    const auto s = sample_trilinear_grad(ctx_.source, voxel_point(x, y, z) + field[i]);
                    const double r = ctx_.target[i] - s.value;
                    sum += r * r;
                    grad[i] = s.grad * (-2.0 * r / n);
                }
        b.sim = sum / n;

        b.smooth = w.lambda > 0.0 ? add_smooth_gradient(field, w.epsilon, w.lambda, grad)
                                  : loss_smooth(field, w.epsilon);

        if (has_shape_term()) {
            double ssum = 0.0;
            for (const auto &sv : shape_.voxels) {
                const auto [x, y, z] = unravel(d, sv.index);
                const auto s = sample_trilinear_grad(*ctx_.ed_edges, voxel_point(x, y, z) + field[sv.index]);
                const double pred = std::clamp(s.value, w.delta, 1.0 - w.delta);
                ssum += sv.weight * cross_entropy(sv.target, pred);
                if (w.beta > 0.0 && s.value > w.delta && s.value < 1.0 - w.delta) {
                    const double dce = -sv.target / pred + (1.0 - sv.target) / (1.0 - pred);
                    grad[sv.index] += s.grad * (w.beta * sv.weight * dce);
                }
            }
            b.shape = ssum;
        }
        b.total = b.sim + w.lambda * b.smooth + w.beta * b.shape;
        return b;
    }

  private:
    static std::array<std::int64_t, 3> unravel(const GridDims &d, std::size_t idx) {
        const auto i = static_cast<std::int64_t>(idx);
        return {i % d.w, (i / d.w) % d.h, i / (d.w * d.h)};
    }

    ObjectiveContext ctx_;
    CompiledShape shape_;
};

inline double loss_sim(const ObjectiveContext &ctx, const DisplacementField &field) {
    return Objective(ctx).sim(field);
}

struct ShapeLoss {
    double value = 0.0;
    std::vector<std::string> warnings;
};

inline ShapeLoss loss_shape(const ObjectiveContext &ctx, const DisplacementField &field, double delta = 1e-6) {
    Objective obj(ctx);
    return {obj.shape(field, delta), obj.warnings()};
}

inline LossBreakdown total_loss(const ObjectiveContext &ctx, const DisplacementField &field, const LossWeights &w) {
    w.validate();
    return Objective(ctx).loss(field, w);
}

inline DisplacementField total_loss_gradient(const ObjectiveContext &ctx, const DisplacementField &field,
                                             const LossWeights &w) {
    w.validate();
    DisplacementField grad;
    Objective(ctx).loss_and_gradient(field, w, grad);
    return grad;
}

}  // namespace mvmotion
