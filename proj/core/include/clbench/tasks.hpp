#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clbench/matrix.hpp"

namespace clbench {

struct Dataset {
    Matrix inputs;                 // n x d
    std::vector<int> labels;       // classification; empty otherwise
    Matrix targets;                // regression; 0x0 otherwise
    std::string name;

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dim() const { return inputs.cols(); }
    bool has_labels() const { return !labels.empty(); }
    bool has_targets() const { return targets.rows() > 0; }
};

enum class LossKind { SoftmaxClassification, L2Embedding };

struct TaskSpec {
    Dataset train;
    Dataset eval;
    LossKind loss = LossKind::SoftmaxClassification;
    std::optional<int> head_id;
    std::optional<Dataset> importance_set;
    int classes = 0;  // classification only
    std::string name;
};

// IDX (big-endian) ingestion, magic 0x00000803 for images and 0x00000801
// for labels. Pixels scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path);

struct Permutation {
    std::vector<std::size_t> mapping;  // new[i] = old[mapping[i]]
    std::uint64_t seed = 0;

    bool is_bijection() const;
};

Permutation identity_permutation(std::size_t d);
Permutation random_permutation(std::size_t d, std::uint64_t seed);

// Re-indexes every input row by perm; labels unchanged.
Dataset permuted_task(const Dataset& base, const Permutation& perm);

// Seeded Gaussian blobs, means on the unit sphere scaled by spread,
// 80/20 train/eval split.
TaskSpec synth_classification(std::uint64_t seed, int classes, int dim,
                              int per_class, double spread);

// Targets are a fixed seeded random linear map of the inputs plus bounded
// noise; headless l2-embedding regime.
TaskSpec synth_embedding(std::uint64_t seed, int dim_in, int dim_out, int n,
                         double noise = 0.0);

// Digit-like image classification corpus in MNIST shape (d pixels in [0,1],
// labels 0..classes-1): smooth seeded class prototypes plus per-sample
// noise. Stands in for MNIST where the IDX files are not on disk.
Dataset synth_digits(std::uint64_t seed, int n, int classes = 10, int dim = 784,
                     double noise = 0.25);

// Filter by label set or explicit row indices.
Dataset select_subset(const Dataset& ds, const std::vector<int>& label_set);
Dataset select_subset_indices(const Dataset& ds, const std::vector<std::size_t>& idx);

// Class-stratified seeded subsample of a labeled dataset.
Dataset stratified_subsample(const Dataset& ds, Eigen::Index n, std::uint64_t seed);

}  // namespace clbench
