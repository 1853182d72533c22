#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clbench/grad.hpp"
#include "clbench/network.hpp"

namespace clbench {

enum class Method {
    MasGlobal,
    MasVector,
    LMas,
    Ewc,
    Si,
    L2,
    Finetune,
    Joint,
};

const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);
bool method_estimates_importance(Method m);

// Per-parameter nonnegative importance. Contributions accumulate as a sum;
// omega() reports the running mean over samples_seen, per-task. Merged maps
// carry pre-finalized values instead.
struct ImportanceMap {
    Method method = Method::MasGlobal;
    FlatParams sum;                 // per-point contributions, head entries stay 0
    std::int64_t samples_seen = 0;
    std::vector<std::int64_t> task_samples;  // populated for merged maps
    bool merged = false;

    static ImportanceMap zero(Method m, const FlatParams& layout_like);

    // The current omega values: sum / samples_seen for a streaming map,
    // the stored values for a merged one. All-zero before any update.
    FlatParams omega() const;
};

// MAS, squared-l2-of-output variant: adds |d l2^2(F(x_k)) / d theta| per
// point in one backward pass. Labels never consulted. Head parameters are
// unshared and receive no importance.
void mas_update(ImportanceMap& map, Network& net, const Matrix& x,
                std::optional<int> head = std::nullopt);

// MAS, exact vector-output variant: sum_o |dF_o/dtheta|, one backward pass
// per output component.
void mas_update_vector_output(ImportanceMap& map, Network& net, const Matrix& x,
                              std::optional<int> head = std::nullopt);

// Local Hebbian variant: per trunk layer adds |y_in_i * y_out_j| for the
// connecting parameter, input activation 1 for biases. Uses the cached
// activations of a fresh forward pass over x. The magnitude matches the
// layer-local squared-norm gradient (x2) for ReLU layers; for Identity
// layers the same product rule is applied to post-activations.
void hebbian_update(ImportanceMap& map, Network& net, const Matrix& x);

// EWC diagonal empirical Fisher with ground-truth labels:
// adds (d log p(label|x) / d theta)^2 per point.
void ewc_fisher_update(ImportanceMap& map, Network& net, const Matrix& x,
                       const std::vector<int>& labels, std::optional<int> head);

// SI path integral state for one task.
struct SiAccumulator {
    FlatParams path_omega;   // running sum of -g * delta_theta
    FlatParams theta_start;
    double xi = 0.1;

    static SiAccumulator start(const FlatParams& theta, double xi = 0.1);
};

// Called once per SGD step with the gradient that produced the step.
void si_step(SiAccumulator& acc, const FlatParams& grad_before,
             const FlatParams& delta_theta);

// omega = max(0, path) / ((theta_end - theta_start)^2 + xi), trunk only.
ImportanceMap si_finalize(const SiAccumulator& acc, const FlatParams& theta_end);

// Cross-task accumulation: elementwise sum of the two per-task maps.
ImportanceMap merge_across_tasks(const ImportanceMap& old_map,
                                 const ImportanceMap& new_map);

}  // namespace clbench
