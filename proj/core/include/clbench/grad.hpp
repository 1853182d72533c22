#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clbench/network.hpp"

namespace clbench {

enum class Objective {
    SquaredL2Output,   // sum_o F_o(x)^2
    CrossEntropy,      // -log softmax(F(x))[label]
    L2Regression,      // sum_o (F_o(x) - t_o)^2
    LogProbLabel,      // +log softmax(F(x))[label]
    OutputComponent,   // F_c(x)
};

const char* objective_name(Objective o);

// Labels / targets / component index, as the objective requires.
struct ObjectiveAux {
    std::vector<int> labels;
    Matrix targets;
    int component = -1;
};

// Batch objectives are the mean over rows of x.
double objective_value(Network& net, const Matrix& x, std::optional<int> head,
                       Objective obj, const ObjectiveAux& aux = {});

// Per-layer backward tape: the delta matrix is d(objective-sum)/d(pre-activation),
// one row per batch point, and `input` the activations feeding the layer.
// Per-point parameter gradients are the outer products delta_k ⊗ input_k.
struct LayerTape {
    Matrix delta;          // batch x out
    const Matrix* input;   // batch x in (borrowed from the forward cache)
    std::string weight_segment;
    std::string bias_segment;
    bool trunk = false;
};

// Runs forward + backward; caches activations in `net`. Tapes are ordered
// trunk first, then active-head layers.
std::vector<LayerTape> backward_tape(Network& net, const Matrix& x,
                                     std::optional<int> head, Objective obj,
                                     const ObjectiveAux& aux = {});

// Exact reverse-mode gradient of the mean batch objective w.r.t. every
// parameter, FlatParams-shaped. Inactive heads get zero gradient.
FlatParams grad_scalar(Network& net, const Matrix& x, std::optional<int> head,
                       Objective obj, const ObjectiveAux& aux = {});

// Central finite differences against grad_scalar; returns the worst
// relative error over all parameters.
double fd_check(Network& net, const Matrix& x, std::optional<int> head,
                Objective obj, const ObjectiveAux& aux, double step);

// values <- values - lr * grad
void sgd_step(FlatParams& params, const FlatParams& grad, double lr);

Matrix softmax_rows(const Matrix& logits);

}  // namespace clbench
