#include "clbench/network.hpp"

#include <algorithm>
#include <cmath>

#include "clbench/errors.hpp"

namespace clbench {

DenseLayer make_dense_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
    DenseLayer layer;
    layer.weights.resize(out, in);
    layer.bias = Vector::Zero(out);
    layer.activation = act;
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c)
            layer.weights(r, c) = rng.uniform(-a, a);
    return layer;
}

std::size_t FlatParams::trunk_size() const {
    std::size_t n = 0;
    for (const auto& s : layout)
        if (s.trunk) n += s.length;
    return n;
}

bool FlatParams::same_layout(const FlatParams& other) const {
    if (values.size() != other.values.size()) return false;
    if (layout.size() != other.layout.size()) return false;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& a = layout[i];
        const auto& b = other.layout[i];
        if (a.name != b.name || a.offset != b.offset || a.length != b.length ||
            a.trunk != b.trunk)
            return false;
    }
    return true;
}

FlatParams FlatParams::zeros_like() const {
    FlatParams z = *this;
    std::fill(z.values.begin(), z.values.end(), 0.0);
    return z;
}

const ParamSegment* FlatParams::find_segment(const std::string& name) const {
    for (const auto& s : layout)
        if (s.name == name) return &s;
    return nullptr;
}

Eigen::Index Network::input_dim() const {
    if (trunk.empty()) throw StateError("network has no trunk layers");
    return trunk.front().in_dim();
}

Eigen::Index Network::output_dim(std::optional<int> head) const {
    if (head) {
        auto it = heads.find(*head);
        if (it == heads.end()) throw LookupError("unknown head " + std::to_string(*head));
        return it->second.back().out_dim();
    }
    return trunk.back().out_dim();
}

namespace {

Matrix apply_layer(const DenseLayer& layer, const Matrix& x) {
    Matrix z = x * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (layer.activation == Activation::ReLU) z = z.cwiseMax(0.0);
    return z;
}

}  // namespace

Matrix Network::forward(const Matrix& x, std::optional<int> head) {
    if (trunk.empty()) throw StateError("network has no trunk layers");
    if (x.cols() != input_dim())
        throw ShapeError("forward: input has " + std::to_string(x.cols()) +
                         " cols, trunk expects " + std::to_string(input_dim()));
    const std::vector<DenseLayer>* head_layers = nullptr;
    if (head) {
        auto it = heads.find(*head);
        if (it == heads.end()) throw LookupError("unknown head " + std::to_string(*head));
        head_layers = &it->second;
    }

    cache_.input = x;
    cache_.trunk_post.clear();
    cache_.head_post.clear();
    cache_.head = head;

    Matrix y = x;
    for (const auto& layer : trunk) {
        y = apply_layer(layer, y);
        cache_.trunk_post.push_back(y);
    }
    if (head_layers) {
        for (const auto& layer : *head_layers) {
            y = apply_layer(layer, y);
            cache_.head_post.push_back(y);
        }
    }
    cache_.valid = true;
    return y;
}

const Matrix& Network::trunk_layer_input(std::size_t l) const {
    if (!cache_.valid) throw StateError("no forward pass cached");
    return l == 0 ? cache_.input : cache_.trunk_post[l - 1];
}

namespace {

void append_layer_segments(FlatParams& flat, const DenseLayer& layer,
                           const std::string& prefix, bool trunk) {
    ParamSegment w{prefix + ".w", flat.values.size(),
                   static_cast<std::size_t>(layer.weights.size()), trunk};
    flat.values.insert(flat.values.end(), layer.weights.data(),
                       layer.weights.data() + layer.weights.size());
    flat.layout.push_back(w);
    ParamSegment b{prefix + ".b", flat.values.size(),
                   static_cast<std::size_t>(layer.bias.size()), trunk};
    flat.values.insert(flat.values.end(), layer.bias.data(),
                       layer.bias.data() + layer.bias.size());
    flat.layout.push_back(b);
}

}  // namespace

FlatParams Network::flatten() const {
    FlatParams flat;
    for (std::size_t l = 0; l < trunk.size(); ++l)
        append_layer_segments(flat, trunk[l], "trunk." + std::to_string(l), true);
    for (const auto& [id, layers] : heads)
        for (std::size_t l = 0; l < layers.size(); ++l)
            append_layer_segments(flat, layers[l],
                                  "head." + std::to_string(id) + "." + std::to_string(l),
                                  false);
    flat.trunk_mask.resize(flat.values.size());
    for (const auto& s : flat.layout)
        std::fill(flat.trunk_mask.begin() + static_cast<std::ptrdiff_t>(s.offset),
                  flat.trunk_mask.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length),
                  s.trunk ? std::uint8_t{1} : std::uint8_t{0});
    return flat;
}

void Network::unflatten(const FlatParams& flat) {
    const FlatParams own = flatten();
    if (!own.same_layout(flat)) throw ShapeError("unflatten: layout mismatch");
    std::size_t seg = 0;
    auto read_layer = [&](DenseLayer& layer) {
        const auto& w = flat.layout[seg++];
        std::copy(flat.values.begin() + static_cast<std::ptrdiff_t>(w.offset),
                  flat.values.begin() + static_cast<std::ptrdiff_t>(w.offset + w.length),
                  layer.weights.data());
        const auto& b = flat.layout[seg++];
        std::copy(flat.values.begin() + static_cast<std::ptrdiff_t>(b.offset),
                  flat.values.begin() + static_cast<std::ptrdiff_t>(b.offset + b.length),
                  layer.bias.data());
    };
    for (auto& layer : trunk) read_layer(layer);
    for (auto& [id, layers] : heads)
        for (auto& layer : layers) read_layer(layer);
    cache_.valid = false;
}

Network make_mlp(const std::vector<Eigen::Index>& widths, Activation hidden_act,
                 Activation out_act, std::uint64_t seed) {
    if (widths.size() < 2) throw ArgumentError("make_mlp: need at least two widths");
    Rng rng(seed);
    Network net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = (i + 2 == widths.size());
        net.trunk.push_back(
            make_dense_layer(widths[i], widths[i + 1], last ? out_act : hidden_act, rng));
    }
    return net;
}

void add_linear_head(Network& net, int head_id, Eigen::Index out, Rng& rng) {
    if (net.heads.count(head_id))
        throw ArgumentError("head " + std::to_string(head_id) + " already exists");
    const Eigen::Index in = net.trunk.back().out_dim();
    net.heads[head_id] = {make_dense_layer(in, out, Activation::Identity, rng)};
}

}  // namespace clbench
