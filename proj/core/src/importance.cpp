#include "clbench/importance.hpp"

#include <algorithm>
#include <cmath>

#include "clbench/errors.hpp"

namespace clbench {

const char* method_name(Method m) {
    switch (m) {
        case Method::MasGlobal: return "mas";
        case Method::MasVector: return "mas-vector";
        case Method::LMas: return "l-mas";
        case Method::Ewc: return "ewc";
        case Method::Si: return "si";
        case Method::L2: return "l2";
        case Method::Finetune: return "finetune";
        case Method::Joint: return "joint";
    }
    return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
    for (Method m : {Method::MasGlobal, Method::MasVector, Method::LMas, Method::Ewc,
                     Method::Si, Method::L2, Method::Finetune, Method::Joint})
        if (name == method_name(m)) return m;
    if (name == "mas-global") return Method::MasGlobal;
    return std::nullopt;
}

bool method_estimates_importance(Method m) {
    switch (m) {
        case Method::MasGlobal:
        case Method::MasVector:
        case Method::LMas:
        case Method::Ewc:
        case Method::Si:
            return true;
        default:
            return false;
    }
}

ImportanceMap ImportanceMap::zero(Method m, const FlatParams& layout_like) {
    ImportanceMap map;
    map.method = m;
    map.sum = layout_like.zeros_like();
    return map;
}

FlatParams ImportanceMap::omega() const {
    if (merged || samples_seen == 0) return sum;
    FlatParams mean = sum;
    const double inv = 1.0 / static_cast<double>(samples_seen);
    for (double& v : mean.values) v *= inv;
    return mean;
}

namespace {

void check_layout(const ImportanceMap& map, const FlatParams& like) {
    if (!map.sum.same_layout(like))
        throw ShapeError("importance map layout does not match network");
}

// Adds f(delta_kj) * f(input_ki) summed over points k, trunk segments only.
// f = abs for MAS, square for Fisher.
enum class Accum { Abs, Square };

void accumulate_tapes(ImportanceMap& map, const std::vector<LayerTape>& tapes,
                      Accum kind, std::int64_t n_points) {
    for (const auto& tape : tapes) {
        if (!tape.trunk) continue;  // heads are unshared: no importance
        const ParamSegment* ws = map.sum.find_segment(tape.weight_segment);
        const ParamSegment* bs = map.sum.find_segment(tape.bias_segment);
        Matrix d, in;
        if (kind == Accum::Abs) {
            d = tape.delta.cwiseAbs();
            in = tape.input->cwiseAbs();
        } else {
            d = tape.delta.cwiseProduct(tape.delta);
            in = tape.input->cwiseProduct(*tape.input);
        }
        const Matrix gw = d.transpose() * in;         // out x in, summed over points
        const Vector gb = d.colwise().sum();
        for (Eigen::Index i = 0; i < gw.size(); ++i)
            map.sum.values[ws->offset + static_cast<std::size_t>(i)] += gw.data()[i];
        for (Eigen::Index i = 0; i < gb.size(); ++i)
            map.sum.values[bs->offset + static_cast<std::size_t>(i)] += gb[i];
    }
    map.samples_seen += n_points;
}

}  // namespace

void mas_update(ImportanceMap& map, Network& net, const Matrix& x,
                std::optional<int> head) {
    if (map.method != Method::MasGlobal)
        throw ArgumentError("mas_update expects a mas map");
    check_layout(map, net.flatten());
    const auto tapes = backward_tape(net, x, head, Objective::SquaredL2Output);
    accumulate_tapes(map, tapes, Accum::Abs, x.rows());
}

void mas_update_vector_output(ImportanceMap& map, Network& net, const Matrix& x,
                              std::optional<int> head) {
    if (map.method != Method::MasVector)
        throw ArgumentError("mas_update_vector_output expects a mas-vector map");
    check_layout(map, net.flatten());
    const Eigen::Index out_dim = net.output_dim(head);
    ObjectiveAux aux;
    for (Eigen::Index o = 0; o < out_dim; ++o) {
        aux.component = static_cast<int>(o);
        const auto tapes = backward_tape(net, x, head, Objective::OutputComponent, aux);
        accumulate_tapes(map, tapes, Accum::Abs, o + 1 == out_dim ? x.rows() : 0);
    }
}

void hebbian_update(ImportanceMap& map, Network& net, const Matrix& x) {
    if (map.method != Method::LMas)
        throw ArgumentError("hebbian_update expects an l-mas map");
    check_layout(map, net.flatten());
    net.forward(x, std::nullopt);
    const auto& cache = net.cache();
    if (!cache.valid) throw StateError("hebbian_update: no cached forward pass");
    for (std::size_t l = 0; l < net.trunk.size(); ++l) {
        const Matrix& in = net.trunk_layer_input(l).cwiseAbs();
        const Matrix& post = cache.trunk_post[l].cwiseAbs();
        const std::string prefix = "trunk." + std::to_string(l);
        const ParamSegment* ws = map.sum.find_segment(prefix + ".w");
        const ParamSegment* bs = map.sum.find_segment(prefix + ".b");
        const Matrix gw = post.transpose() * in;   // out x in
        const Vector gb = post.colwise().sum();    // bias input activation is 1
        for (Eigen::Index i = 0; i < gw.size(); ++i)
            map.sum.values[ws->offset + static_cast<std::size_t>(i)] += gw.data()[i];
        for (Eigen::Index i = 0; i < gb.size(); ++i)
            map.sum.values[bs->offset + static_cast<std::size_t>(i)] += gb[i];
    }
    map.samples_seen += x.rows();
}

void ewc_fisher_update(ImportanceMap& map, Network& net, const Matrix& x,
                       const std::vector<int>& labels, std::optional<int> head) {
    if (map.method != Method::Ewc)
        throw ArgumentError("ewc_fisher_update expects an ewc map");
    check_layout(map, net.flatten());
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
        throw ArgumentError("ewc_fisher_update: one label per row required");
    ObjectiveAux aux;
    aux.labels = labels;
    const auto tapes = backward_tape(net, x, head, Objective::LogProbLabel, aux);
    accumulate_tapes(map, tapes, Accum::Square, x.rows());
}

SiAccumulator SiAccumulator::start(const FlatParams& theta, double xi) {
    if (xi <= 0.0) throw ArgumentError("SI damping xi must be > 0");
    SiAccumulator acc;
    acc.path_omega = theta.zeros_like();
    acc.theta_start = theta;
    acc.xi = xi;
    return acc;
}

void si_step(SiAccumulator& acc, const FlatParams& grad_before,
             const FlatParams& delta_theta) {
    if (!acc.path_omega.same_layout(grad_before) ||
        !acc.path_omega.same_layout(delta_theta))
        throw ShapeError("si_step: layout mismatch");
    for (std::size_t i = 0; i < acc.path_omega.values.size(); ++i)
        acc.path_omega.values[i] -= grad_before.values[i] * delta_theta.values[i];
}

ImportanceMap si_finalize(const SiAccumulator& acc, const FlatParams& theta_end) {
    if (!acc.path_omega.same_layout(theta_end))
        throw ShapeError("si_finalize: layout mismatch");
    ImportanceMap map = ImportanceMap::zero(Method::Si, theta_end);
    for (std::size_t i = 0; i < theta_end.values.size(); ++i) {
        if (!theta_end.trunk_mask[i]) continue;
        const double path = std::max(0.0, acc.path_omega.values[i]);
        const double d = theta_end.values[i] - acc.theta_start.values[i];
        map.sum.values[i] = path / (d * d + acc.xi);
    }
    map.merged = false;
    map.samples_seen = 1;  // already finalized per task; omega() divides by 1
    return map;
}

ImportanceMap merge_across_tasks(const ImportanceMap& old_map,
                                 const ImportanceMap& new_map) {
    if (old_map.method != new_map.method)
        throw ArgumentError("merge_across_tasks: method mismatch");
    if (!old_map.sum.same_layout(new_map.sum))
        throw ShapeError("merge_across_tasks: layout mismatch");
    ImportanceMap out;
    out.method = old_map.method;
    out.merged = true;
    const FlatParams a = old_map.omega();
    const FlatParams b = new_map.omega();
    out.sum = a;
    for (std::size_t i = 0; i < out.sum.values.size(); ++i)
        out.sum.values[i] += b.values[i];
    out.task_samples = old_map.task_samples;
    if (old_map.task_samples.empty() && old_map.samples_seen > 0)
        out.task_samples.push_back(old_map.samples_seen);
    if (new_map.task_samples.empty())
        out.task_samples.push_back(new_map.samples_seen);
    else
        out.task_samples.insert(out.task_samples.end(), new_map.task_samples.begin(),
                                new_map.task_samples.end());
    return out;
}

}  // namespace clbench
