#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clbench/matrix.hpp"
#include "clbench/rng.hpp"

namespace clbench {

enum class Activation { ReLU, Identity };

struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;     // out
    Activation activation = Activation::Identity;

    Eigen::Index in_dim() const { return weights.cols(); }
    Eigen::Index out_dim() const { return weights.rows(); }
};

DenseLayer make_dense_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng);

// One flat indexed view over all parameters. A segment covers one weight
// matrix (row-major) or one bias vector; segments are disjoint and cover
// the value vector exactly.
struct ParamSegment {
    std::string name;  // e.g. "trunk.0.w", "head.2.1.b"
    std::size_t offset = 0;
    std::size_t length = 0;
    bool trunk = false;
};

struct FlatParams {
    std::vector<double> values;
    std::vector<ParamSegment> layout;
    std::vector<std::uint8_t> trunk_mask;  // per index

    std::size_t size() const { return values.size(); }
    std::size_t trunk_size() const;
    bool same_layout(const FlatParams& other) const;
    FlatParams zeros_like() const;
    const ParamSegment* find_segment(const std::string& name) const;
};

// Shared trunk plus zero or more unshared heads. A headless network
// (embedding mode) is valid. The last forward pass caches post-activation
// values per layer for gradient and Hebbian use.
class Network {
public:
    std::vector<DenseLayer> trunk;
    std::map<int, std::vector<DenseLayer>> heads;

    Eigen::Index input_dim() const;
    Eigen::Index output_dim(std::optional<int> head) const;

    Matrix forward(const Matrix& x, std::optional<int> head = std::nullopt);

    // Cache of the last forward pass.
    struct ForwardCache {
        Matrix input;
        std::vector<Matrix> trunk_post;        // post-activation per trunk layer
        std::vector<Matrix> head_post;         // per active-head layer
        std::optional<int> head;
        bool valid = false;
    };
    const ForwardCache& cache() const { return cache_; }

    // Activation feeding trunk layer l (input for l = 0).
    const Matrix& trunk_layer_input(std::size_t l) const;

    FlatParams flatten() const;
    void unflatten(const FlatParams& flat);

private:
    ForwardCache cache_;
};

// Trunk widths [in, h1, ..., hk]; hidden layers use `hidden_act`, the
// final trunk layer `out_act`. Heads are added separately.
Network make_mlp(const std::vector<Eigen::Index>& widths, Activation hidden_act,
                 Activation out_act, std::uint64_t seed);

// Appends a single linear head (Identity activation) of the given width.
void add_linear_head(Network& net, int head_id, Eigen::Index out, Rng& rng);

}  // namespace clbench
