#include "clbench/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "clbench/errors.hpp"
#include "clbench/rng.hpp"

namespace clbench {

const char* importance_source_name(ImportanceSource s) {
    switch (s) {
        case ImportanceSource::Train: return "train";
        case ImportanceSource::Test: return "test";
        case ImportanceSource::TrainPlusTest: return "train+test";
        case ImportanceSource::CustomSubset: return "custom-subset";
        case ImportanceSource::None: return "none";
    }
    return "?";
}

std::optional<ImportanceSource> importance_source_from_name(const std::string& name) {
    for (ImportanceSource s :
         {ImportanceSource::Train, ImportanceSource::Test, ImportanceSource::TrainPlusTest,
          ImportanceSource::CustomSubset, ImportanceSource::None})
        if (name == importance_source_name(s)) return s;
    return std::nullopt;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << "epoch,loss\n";
    for (const auto& e : log.epochs) out << e.epoch << ',' << e.loss << '\n';
}

LossAndGrad regularized_loss(Network& net, const Matrix& x, const ObjectiveAux& aux,
                             std::optional<int> head, LossKind loss,
                             const PenaltyState& penalty) {
    const Objective obj = loss == LossKind::SoftmaxClassification
                              ? Objective::CrossEntropy
                              : Objective::L2Regression;
    LossAndGrad out;
    out.loss = objective_value(net, x, head, obj, aux);
    out.grad = grad_scalar(net, x, head, obj, aux);
    if (penalty.active && penalty.lambda > 0.0) {
        const FlatParams theta = net.flatten();
        if (!theta.same_layout(penalty.theta_star) || !theta.same_layout(penalty.omega))
            throw ShapeError("regularized_loss: penalty layout mismatch");
        double pen = 0.0;
        for (std::size_t i = 0; i < theta.values.size(); ++i) {
            if (!theta.trunk_mask[i]) continue;
            const double d = theta.values[i] - penalty.theta_star.values[i];
            const double w = penalty.omega.values[i];
            pen += w * d * d;
            out.grad.values[i] += 2.0 * penalty.lambda * w * d;
        }
        out.loss += penalty.lambda * pen;
    }
    return out;
}

namespace {

ObjectiveAux batch_aux(const Dataset& ds, const std::vector<std::size_t>& idx,
                       std::size_t begin, std::size_t end, Matrix& x_out) {
    const Eigen::Index bn = static_cast<Eigen::Index>(end - begin);
    x_out.resize(bn, ds.dim());
    ObjectiveAux aux;
    if (ds.has_labels()) aux.labels.resize(static_cast<std::size_t>(bn));
    if (ds.has_targets()) aux.targets.resize(bn, ds.targets.cols());
    for (std::size_t k = begin; k < end; ++k) {
        const Eigen::Index r = static_cast<Eigen::Index>(k - begin);
        const Eigen::Index src = static_cast<Eigen::Index>(idx[k]);
        x_out.row(r) = ds.inputs.row(src);
        if (ds.has_labels()) aux.labels[static_cast<std::size_t>(r)] = ds.labels[idx[k]];
        if (ds.has_targets()) aux.targets.row(r) = ds.targets.row(src);
    }
    return aux;
}

// Zero the gradient of every head except the active one; the trunk and the
// active head train, frozen heads stay bit-identical.
void mask_frozen_heads(FlatParams& grad, std::optional<int> active_head) {
    const std::string keep =
        active_head ? "head." + std::to_string(*active_head) + "." : "";
    for (const auto& seg : grad.layout) {
        if (seg.trunk) continue;
        if (active_head && seg.name.rfind(keep, 0) == 0) continue;
        std::fill(grad.values.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                  grad.values.begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.length),
                  0.0);
    }
}

Dataset concat(const Dataset& a, const Dataset& b) {
    Dataset out;
    out.name = a.name + "+" + b.name;
    out.inputs.resize(a.size() + b.size(), a.dim());
    out.inputs.topRows(a.size()) = a.inputs;
    out.inputs.bottomRows(b.size()) = b.inputs;
    if (a.has_labels() && b.has_labels()) {
        out.labels = a.labels;
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    }
    if (a.has_targets() && b.has_targets()) {
        out.targets.resize(a.size() + b.size(), a.targets.cols());
        out.targets.topRows(a.size()) = a.targets;
        out.targets.bottomRows(b.size()) = b.targets;
    }
    return out;
}

}  // namespace

TrainLog train_task(Network& net, const TaskSpec& task, const TrainConfig& cfg,
                    const PenaltyState& penalty, SiAccumulator* si,
                    std::uint64_t shuffle_seed_offset) {
    if (task.train.size() == 0) throw ConfigError("train_task: empty training set");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw ConfigError("train_task: epochs and batch_size must be >= 1");
    if (cfg.lr <= 0.0) throw ConfigError("train_task: lr must be > 0");

    Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ULL * (shuffle_seed_offset + 1));
    std::vector<std::size_t> idx(static_cast<std::size_t>(task.train.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    TrainLog log;
    const std::size_t n = idx.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(idx);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            Matrix x;
            const ObjectiveAux aux = batch_aux(task.train, idx, start, end, x);
            // Split step: explicit SGD on the task loss, then the exact
            // minimizer of the trailing quadratic penalty sub-step. Stable
            // for any lambda*omega; identical to plain SGD when the penalty
            // is inactive.
            LossAndGrad lg =
                regularized_loss(net, x, aux, task.head_id, task.loss, PenaltyState::none());
            mask_frozen_heads(lg.grad, task.head_id);

            FlatParams theta = net.flatten();
            const FlatParams theta_before = theta;
            double pen_loss = 0.0;
            sgd_step(theta, lg.grad, cfg.lr);
            if (penalty.active && penalty.lambda > 0.0) {
                for (std::size_t i = 0; i < theta.values.size(); ++i) {
                    if (!theta.trunk_mask[i]) continue;
                    const double w = penalty.omega.values[i];
                    const double d0 = theta_before.values[i] - penalty.theta_star.values[i];
                    pen_loss += w * d0 * d0;
                    const double a = 2.0 * cfg.lr * penalty.lambda * w;
                    if (a == 0.0) continue;
                    theta.values[i] = (theta.values[i] + a * penalty.theta_star.values[i]) /
                                      (1.0 + a);
                }
            }
            net.unflatten(theta);

            if (si) {
                // Path integral over the actual displacement, with the full
                // regularized gradient at the pre-step point.
                FlatParams g_full = lg.grad;
                if (penalty.active && penalty.lambda > 0.0)
                    for (std::size_t i = 0; i < g_full.values.size(); ++i)
                        if (theta.trunk_mask[i])
                            g_full.values[i] +=
                                2.0 * penalty.lambda * penalty.omega.values[i] *
                                (theta_before.values[i] - penalty.theta_star.values[i]);
                FlatParams delta = theta;
                for (std::size_t i = 0; i < delta.values.size(); ++i)
                    delta.values[i] -= theta_before.values[i];
                si_step(*si, g_full, delta);
            }

            epoch_loss += lg.loss + penalty.lambda * pen_loss;
            ++batches;
        }
        log.epochs.push_back({epoch, epoch_loss / static_cast<double>(batches)});
    }
    return log;
}

ImportanceMap estimate_importance_phase(Network& net, const TaskSpec& task,
                                        const TrainConfig& cfg) {
    const FlatParams layout = net.flatten();
    ImportanceMap map = ImportanceMap::zero(
        method_estimates_importance(cfg.method) ? cfg.method : Method::MasGlobal, layout);

    Dataset selected;
    switch (cfg.importance_source) {
        case ImportanceSource::Train: selected = task.train; break;
        case ImportanceSource::Test: selected = task.eval; break;
        case ImportanceSource::TrainPlusTest: selected = concat(task.train, task.eval); break;
        case ImportanceSource::CustomSubset:
            if (!task.importance_set || task.importance_set->size() == 0)
                throw ConfigError("importance_source=custom-subset but the task has no subset");
            selected = *task.importance_set;
            break;
        case ImportanceSource::None:
            return map;
    }

    if (cfg.method == Method::L2) {
        // uniform trunk importance
        for (std::size_t i = 0; i < map.sum.values.size(); ++i)
            if (map.sum.trunk_mask[i]) map.sum.values[i] = 1.0;
        map.samples_seen = 1;
        return map;
    }
    if (!method_estimates_importance(cfg.method)) return map;  // finetune / joint

    // Labels are stripped for the unsupervised estimators; EWC keeps them.
    const std::vector<int> labels = selected.labels;
    selected.labels.clear();

    constexpr Eigen::Index kChunk = 512;
    for (Eigen::Index start = 0; start < selected.size(); start += kChunk) {
        const Eigen::Index len = std::min<Eigen::Index>(kChunk, selected.size() - start);
        const Matrix x = selected.inputs.middleRows(start, len);
        switch (cfg.method) {
            case Method::MasGlobal:
                mas_update(map, net, x, task.head_id);
                break;
            case Method::MasVector:
                mas_update_vector_output(map, net, x, task.head_id);
                break;
            case Method::LMas:
                hebbian_update(map, net, x);
                break;
            case Method::Ewc: {
                if (labels.empty())
                    throw ArgumentError("ewc importance requires a labeled classification set");
                std::vector<int> chunk_labels(
                    labels.begin() + start, labels.begin() + start + len);
                ewc_fisher_update(map, net, x, chunk_labels, task.head_id);
                break;
            }
            default:
                throw ArgumentError("estimate_importance_phase: method has no estimator");
        }
    }
    return map;
}

double evaluate_accuracy(Network& net, const TaskSpec& task) {
    const Matrix out = net.forward(task.eval.inputs, task.head_id);
    if (task.loss == LossKind::SoftmaxClassification) {
        std::size_t correct = 0;
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            Eigen::Index arg;
            out.row(r).maxCoeff(&arg);
            if (static_cast<int>(arg) == task.eval.labels[static_cast<std::size_t>(r)])
                ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(out.rows());
    }
    // Embedding: retrieval accuracy, prediction must be nearest to its own target.
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        Eigen::Index best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < task.eval.targets.rows(); ++t) {
            const double d = (out.row(r) - task.eval.targets.row(t)).squaredNorm();
            if (d < best_d) { best_d = d; best = t; }
        }
        if (best == r) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(out.rows());
}

double evaluate_loss(Network& net, const TaskSpec& task) {
    ObjectiveAux aux;
    Objective obj;
    if (task.loss == LossKind::SoftmaxClassification) {
        aux.labels = task.eval.labels;
        obj = Objective::CrossEntropy;
    } else {
        aux.targets = task.eval.targets;
        obj = Objective::L2Regression;
    }
    return objective_value(net, task.eval.inputs, task.head_id, obj, aux);
}

namespace {

FlatParams merged_penalty_omega(const ImportanceMap& merged, bool merge_mean) {
    FlatParams omega = merged.omega();
    if (merge_mean && !merged.task_samples.empty()) {
        const double inv = 1.0 / static_cast<double>(merged.task_samples.size());
        for (double& v : omega.values) v *= inv;
    }
    return omega;
}

bool method_uses_penalty(Method m) {
    return m == Method::MasGlobal || m == Method::MasVector || m == Method::LMas ||
           m == Method::Ewc || m == Method::Si || m == Method::L2;
}

}  // namespace

SequenceResult run_sequence(Network net, const std::vector<TaskSpec>& tasks,
                            const TrainConfig& cfg, const TaskObserver& on_task_done) {
    if (tasks.empty()) throw ConfigError("run_sequence: need at least one task");
    SequenceResult result;
    result.report.method = method_name(cfg.method);
    result.report.seed = cfg.seed;
    result.report.lambda = cfg.lambda;

    ImportanceMap merged;
    bool have_merged = false;
    FlatParams theta_star;

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TaskSpec& task = tasks[t];
        result.report.task_names.push_back(task.name);

        PenaltyState penalty = PenaltyState::none();
        if (t > 0 && method_uses_penalty(cfg.method)) {
            penalty.theta_star = theta_star;
            penalty.omega = merged_penalty_omega(merged, cfg.merge_mean);
            penalty.lambda = cfg.lambda;
            penalty.active = true;
        }

        SiAccumulator si = SiAccumulator::start(net.flatten(), cfg.si_xi);
        SiAccumulator* si_ptr = cfg.method == Method::Si ? &si : nullptr;
        result.logs.push_back(train_task(net, task, cfg, penalty, si_ptr, t));

        result.report.acc_after_training.push_back(evaluate_accuracy(net, task));
        if (on_task_done) on_task_done(t, net);

        if (method_estimates_importance(cfg.method) || cfg.method == Method::L2) {
            ImportanceMap task_map = cfg.method == Method::Si
                                         ? si_finalize(si, net.flatten())
                                         : estimate_importance_phase(net, task, cfg);
            merged = have_merged ? merge_across_tasks(merged, task_map) : task_map;
            have_merged = true;
        }
        theta_star = net.flatten();
    }

    for (const TaskSpec& task : tasks)
        result.report.acc_at_end.push_back(evaluate_accuracy(net, task));
    compute_forgetting(result.report);

    result.report.memory =
        memory_account(cfg.method, net_shape(net.flatten()), static_cast<int>(tasks.size()));
    if (have_merged) {
        result.report.omega_stats = omega_stats(merged);
        result.merged_omega = merged;
    }
    result.net = std::move(net);
    return result;
}

SequenceResult joint_train(Network net, const std::vector<TaskSpec>& tasks,
                           const TrainConfig& cfg) {
    if (tasks.empty()) throw ConfigError("joint_train: need at least one task");
    for (const auto& task : tasks)
        if (task.train.size() == 0) throw ConfigError("joint_train: empty training set");

    SequenceResult result;
    result.report.method = method_name(Method::Joint);
    result.report.seed = cfg.seed;
    result.report.lambda = 0.0;

    Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
    std::vector<std::vector<std::size_t>> idx(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        idx[t].resize(static_cast<std::size_t>(tasks[t].train.size()));
        std::iota(idx[t].begin(), idx[t].end(), std::size_t{0});
    }
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::size_t max_batches = 0;
    for (const auto& v : idx)
        max_batches = std::max(max_batches, (v.size() + bs - 1) / bs);

    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (auto& v : idx) shuffle_rng.shuffle(v);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        // Interleave: one batch from each task in turn.
        for (std::size_t b = 0; b < max_batches; ++b) {
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                const std::size_t start = b * bs;
                if (start >= idx[t].size()) continue;
                const std::size_t end = std::min(idx[t].size(), start + bs);
                Matrix x;
                const ObjectiveAux aux = batch_aux(tasks[t].train, idx[t], start, end, x);
                LossAndGrad lg = regularized_loss(net, x, aux, tasks[t].head_id,
                                                  tasks[t].loss, PenaltyState::none());
                mask_frozen_heads(lg.grad, tasks[t].head_id);
                FlatParams theta = net.flatten();
                sgd_step(theta, lg.grad, cfg.lr);
                net.unflatten(theta);
                epoch_loss += lg.loss;
                ++batches;
            }
        }
        log.epochs.push_back({epoch, epoch_loss / static_cast<double>(batches)});
    }
    result.logs.push_back(std::move(log));

    for (const TaskSpec& task : tasks) {
        const double acc = evaluate_accuracy(net, task);
        result.report.task_names.push_back(task.name);
        result.report.acc_after_training.push_back(acc);
        result.report.acc_at_end.push_back(acc);
    }
    compute_forgetting(result.report);
    result.report.memory =
        memory_account(Method::Joint, net_shape(net.flatten()), static_cast<int>(tasks.size()));
    result.net = std::move(net);
    return result;
}

Network make_net_for_tasks(const std::vector<Eigen::Index>& trunk_widths,
                           std::vector<TaskSpec>& tasks, std::uint64_t seed) {
    const bool classification =
        !tasks.empty() && tasks.front().loss == LossKind::SoftmaxClassification;
    Network net = make_mlp(trunk_widths, Activation::ReLU,
                           classification ? Activation::ReLU : Activation::Identity, seed);
    Rng rng(seed + 1);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        TaskSpec& task = tasks[t];
        if (task.loss != LossKind::SoftmaxClassification) continue;
        if (!task.head_id) task.head_id = static_cast<int>(t);
        if (!net.heads.count(*task.head_id))
            add_linear_head(net, *task.head_id, task.classes, rng);
    }
    return net;
}

}  // namespace clbench
