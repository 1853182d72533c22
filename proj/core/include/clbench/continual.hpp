#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clbench/analysis.hpp"
#include "clbench/importance.hpp"
#include "clbench/tasks.hpp"

namespace clbench {

enum class ImportanceSource { Train, Test, TrainPlusTest, CustomSubset, None };

const char* importance_source_name(ImportanceSource s);
std::optional<ImportanceSource> importance_source_from_name(const std::string& name);

// Quadratic drift penalty anchored at the previous task's parameters:
// lambda * sum_trunk omega_ij (theta_ij - theta*_ij)^2.
struct PenaltyState {
    FlatParams theta_star;
    FlatParams omega;  // head entries are zero
    double lambda = 0.0;
    bool active = false;

    static PenaltyState none() { return {}; }
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double lr = 0.05;
    std::uint64_t seed = 0;
    ImportanceSource importance_source = ImportanceSource::Train;
    Method method = Method::Finetune;
    double lambda = 1.0;
    double si_xi = 0.1;
    bool merge_mean = false;  // cross-task omega: sum by default, mean if set
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

void write_train_log_csv(const TrainLog& log, const std::string& path);

struct LossAndGrad {
    double loss = 0.0;
    FlatParams grad;
};

// Task loss plus the penalty and its exact gradient (2*lambda*omega*(theta-theta*)
// on trunk indices only).
LossAndGrad regularized_loss(Network& net, const Matrix& x, const ObjectiveAux& aux,
                             std::optional<int> head, LossKind loss,
                             const PenaltyState& penalty);

// SGD over regularized batches; previous-task heads stay frozen. When `si`
// is given, si_step runs every SGD step with the gradient that produced it.
TrainLog train_task(Network& net, const TaskSpec& task, const TrainConfig& cfg,
                    const PenaltyState& penalty, SiAccumulator* si = nullptr,
                    std::uint64_t shuffle_seed_offset = 0);

// Runs the configured estimator over the unlabeled points selected by
// cfg.importance_source (labels are consulted only by EWC, which is
// supervised by construction).
ImportanceMap estimate_importance_phase(Network& net, const TaskSpec& task,
                                        const TrainConfig& cfg);

// Classification: top-1 accuracy. Embedding: nearest-target retrieval
// accuracy over the eval set.
double evaluate_accuracy(Network& net, const TaskSpec& task);
double evaluate_loss(Network& net, const TaskSpec& task);

struct SequenceResult {
    SequenceReport report;
    Network net;
    ImportanceMap merged_omega;
    std::vector<TrainLog> logs;
};

// Tasks learned one after the other: train with the penalty from the
// merged omega of all previous tasks, evaluate, estimate importance,
// merge, snapshot theta*. The network must already carry every head the
// sequence needs so the flat layout is stable across tasks. `on_task_done`
// (if set) observes the network right after each task finishes training.
using TaskObserver = std::function<void(std::size_t task_index, Network& net)>;

SequenceResult run_sequence(Network net, const std::vector<TaskSpec>& tasks,
                            const TrainConfig& cfg,
                            const TaskObserver& on_task_done = {});

// Upper-bound reference: trains on all tasks simultaneously with
// interleaved batches, one head per task.
SequenceResult joint_train(Network net, const std::vector<TaskSpec>& tasks,
                           const TrainConfig& cfg);

// Builds an MLP with one linear head per classification task and binds
// head ids into the tasks (head id = task index unless the task pins one).
Network make_net_for_tasks(const std::vector<Eigen::Index>& trunk_widths,
                           std::vector<TaskSpec>& tasks, std::uint64_t seed);

}  // namespace clbench
