#include "clbench/grad.hpp"

#include <cmath>

#include "clbench/errors.hpp"

namespace clbench {

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::SquaredL2Output: return "squared-l2-of-output";
        case Objective::CrossEntropy: return "cross-entropy";
        case Objective::L2Regression: return "l2-regression";
        case Objective::LogProbLabel: return "log-prob-of-label";
        case Objective::OutputComponent: return "single-output-component";
    }
    return "?";
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

namespace {

void require_aux(const ObjectiveAux& aux, Objective obj, Eigen::Index n) {
    switch (obj) {
        case Objective::CrossEntropy:
        case Objective::LogProbLabel:
            if (static_cast<Eigen::Index>(aux.labels.size()) != n)
                throw ArgumentError(std::string(objective_name(obj)) +
                                    " requires one label per batch row");
            break;
        case Objective::L2Regression:
            if (aux.targets.rows() != n)
                throw ArgumentError("l2-regression requires one target row per batch row");
            break;
        case Objective::OutputComponent:
            if (aux.component < 0)
                throw ArgumentError("single-output-component requires a component index");
            break;
        case Objective::SquaredL2Output:
            break;
    }
}

}  // namespace

double objective_value(Network& net, const Matrix& x, std::optional<int> head,
                       Objective obj, const ObjectiveAux& aux) {
    require_aux(aux, obj, x.rows());
    const Matrix out = net.forward(x, head);
    const Eigen::Index n = x.rows();
    double total = 0.0;
    switch (obj) {
        case Objective::SquaredL2Output:
            total = out.array().square().sum();
            break;
        case Objective::CrossEntropy: {
            const Matrix p = softmax_rows(out);
            for (Eigen::Index r = 0; r < n; ++r)
                total -= std::log(std::max(p(r, aux.labels[static_cast<std::size_t>(r)]),
                                           1e-300));
            break;
        }
        case Objective::L2Regression:
            total = (out - aux.targets).array().square().sum();
            break;
        case Objective::LogProbLabel: {
            const Matrix p = softmax_rows(out);
            for (Eigen::Index r = 0; r < n; ++r)
                total += std::log(std::max(p(r, aux.labels[static_cast<std::size_t>(r)]),
                                           1e-300));
            break;
        }
        case Objective::OutputComponent:
            total = out.col(aux.component).sum();
            break;
    }
    return total / static_cast<double>(n);
}

namespace {

// d(sum of per-point objectives)/d(output), batch x out.
Matrix output_delta(const Matrix& out, Objective obj, const ObjectiveAux& aux) {
    switch (obj) {
        case Objective::SquaredL2Output:
            return 2.0 * out;
        case Objective::CrossEntropy: {
            Matrix d = softmax_rows(out);
            for (Eigen::Index r = 0; r < d.rows(); ++r)
                d(r, aux.labels[static_cast<std::size_t>(r)]) -= 1.0;
            return d;
        }
        case Objective::L2Regression:
            return 2.0 * (out - aux.targets);
        case Objective::LogProbLabel: {
            Matrix d = -softmax_rows(out);
            for (Eigen::Index r = 0; r < d.rows(); ++r)
                d(r, aux.labels[static_cast<std::size_t>(r)]) += 1.0;
            return d;
        }
        case Objective::OutputComponent: {
            Matrix d = Matrix::Zero(out.rows(), out.cols());
            d.col(aux.component).setOnes();
            return d;
        }
    }
    throw ArgumentError("unknown objective");
}

// ReLU'(0) is defined as 0, so post > 0 is the exact mask.
void mask_by_activation(Matrix& delta, const DenseLayer& layer, const Matrix& post) {
    if (layer.activation == Activation::ReLU)
        delta = delta.cwiseProduct((post.array() > 0.0).cast<double>().matrix());
}

}  // namespace

std::vector<LayerTape> backward_tape(Network& net, const Matrix& x,
                                     std::optional<int> head, Objective obj,
                                     const ObjectiveAux& aux) {
    require_aux(aux, obj, x.rows());
    const Matrix out = net.forward(x, head);
    const auto& cache = net.cache();

    std::vector<LayerTape> tapes(net.trunk.size() + cache.head_post.size());
    Matrix delta = output_delta(out, obj, aux);

    const std::vector<DenseLayer>* head_layers = nullptr;
    if (head) head_layers = &net.heads.at(*head);

    // Head layers, last to first.
    if (head_layers) {
        for (std::size_t l = head_layers->size(); l-- > 0;) {
            const DenseLayer& layer = (*head_layers)[l];
            mask_by_activation(delta, layer, cache.head_post[l]);
            LayerTape& tape = tapes[net.trunk.size() + l];
            tape.input = (l == 0) ? &cache.trunk_post.back() : &cache.head_post[l - 1];
            tape.delta = delta;
            const std::string prefix =
                "head." + std::to_string(*head) + "." + std::to_string(l);
            tape.weight_segment = prefix + ".w";
            tape.bias_segment = prefix + ".b";
            tape.trunk = false;
            if (l > 0 || !net.trunk.empty()) delta = delta * layer.weights;
        }
    }

    // Trunk, last to first.
    for (std::size_t l = net.trunk.size(); l-- > 0;) {
        const DenseLayer& layer = net.trunk[l];
        mask_by_activation(delta, layer, cache.trunk_post[l]);
        LayerTape& tape = tapes[l];
        tape.input = &net.trunk_layer_input(l);
        tape.delta = delta;
        const std::string prefix = "trunk." + std::to_string(l);
        tape.weight_segment = prefix + ".w";
        tape.bias_segment = prefix + ".b";
        tape.trunk = true;
        if (l > 0) delta = delta * layer.weights;
    }
    return tapes;
}

FlatParams grad_scalar(Network& net, const Matrix& x, std::optional<int> head,
                       Objective obj, const ObjectiveAux& aux) {
    const auto tapes = backward_tape(net, x, head, obj, aux);
    FlatParams grad = net.flatten().zeros_like();
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (const auto& tape : tapes) {
        const ParamSegment* ws = grad.find_segment(tape.weight_segment);
        const ParamSegment* bs = grad.find_segment(tape.bias_segment);
        if (!ws || !bs) throw StateError("segment missing: " + tape.weight_segment);
        const Matrix gw = (tape.delta.transpose() * (*tape.input)) * inv_n;  // out x in
        const Vector gb = tape.delta.colwise().sum() * inv_n;
        std::copy(gw.data(), gw.data() + gw.size(),
                  grad.values.begin() + static_cast<std::ptrdiff_t>(ws->offset));
        std::copy(gb.data(), gb.data() + gb.size(),
                  grad.values.begin() + static_cast<std::ptrdiff_t>(bs->offset));
    }
    return grad;
}

double fd_check(Network& net, const Matrix& x, std::optional<int> head,
                Objective obj, const ObjectiveAux& aux, double step) {
    if (step <= 0.0) throw ArgumentError("fd_check: step must be > 0");
    const FlatParams grad = grad_scalar(net, x, head, obj, aux);
    FlatParams theta = net.flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta.values[i];
        theta.values[i] = saved + step;
        net.unflatten(theta);
        const double up = objective_value(net, x, head, obj, aux);
        theta.values[i] = saved - step;
        net.unflatten(theta);
        const double down = objective_value(net, x, head, obj, aux);
        theta.values[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(grad.values[i]), 1.0});
        worst = std::max(worst, std::abs(fd - grad.values[i]) / denom);
    }
    net.unflatten(theta);
    return worst;
}

void sgd_step(FlatParams& params, const FlatParams& grad, double lr) {
    if (!params.same_layout(grad)) throw ShapeError("sgd_step: layout mismatch");
    for (std::size_t i = 0; i < params.values.size(); ++i)
        params.values[i] -= lr * grad.values[i];
}

}  // namespace clbench
