#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clbench/continual.hpp"

namespace clbench {

// Declarative experiment grid: every (method, lambda, seed) cell runs the
// same task sequence and writes one report.
struct ExperimentConfig {
    std::string name = "experiment";

    // task construction
    std::string task_kind = "synth-classification";  // permuted-mnist |
                                                     // synth-classification |
                                                     // synth-embedding
    int num_tasks = 2;
    int classes = 4;
    int dim = 16;
    int per_class = 200;
    double spread = 4.0;
    int dim_in = 16;
    int dim_out = 8;
    int n_points = 800;
    double noise = 0.1;
    Eigen::Index mnist_subsample = 5000;
    bool identity_first_permutation = true;
    bool allow_synthetic_mnist = true;  // use a generated IDX corpus when
                                        // the real files are absent
    std::vector<int> adaptation_labels;  // non-empty enables the subset protocol

    std::vector<Eigen::Index> hidden = {128, 128};

    std::vector<Method> methods = {Method::Finetune, Method::MasGlobal};
    std::vector<double> lambdas = {1.0};
    std::vector<std::uint64_t> seeds = {1};
    TrainConfig train;  // epochs / batch_size / lr / importance_source / merge

    std::string data_dir = "data";
    std::string out_dir = "out";
    bool parallel_cells = false;
};

// Named built-ins mirroring the benchmark grid; fields remain overridable.
std::vector<std::string> preset_names();
ExperimentConfig make_preset(const std::string& name);

// Parses JSON (optionally starting from its "preset") without running.
ExperimentConfig load_config(const std::string& path);

// Dry run: every violation found in the file, empty when valid.
std::vector<std::string> validate_config_file(const std::string& path);
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

// Builds the per-seed task sequence described by the config.
std::vector<TaskSpec> build_tasks(const ExperimentConfig& cfg, std::uint64_t seed);

struct CellResult {
    SequenceReport report;
    // adaptation protocol extras (subset vs complement on the first task)
    double acc_subset_after = 0.0, acc_subset_end = 0.0;
    double acc_complement_after = 0.0, acc_complement_end = 0.0;
    bool has_adaptation = false;
};

CellResult run_cell(const ExperimentConfig& cfg, Method method, double lambda,
                    std::uint64_t seed);

// Executes the full grid and writes per-cell JSON/CSV plus an aggregate
// table of mean and stddev per (method, lambda). Returns 0 on success.
int run_experiment(const ExperimentConfig& cfg);

}  // namespace clbench
