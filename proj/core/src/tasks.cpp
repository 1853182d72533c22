#include "clbench/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "clbench/errors.hpp"
#include "clbench/rng.hpp"

namespace clbench {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in)
        throw ParseError(path + ": truncated header at offset " +
                         std::to_string(in.tellg()));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw ParseError("cannot open " + images_path);
    const std::uint32_t img_magic = read_u32_be(img, images_path);
    if (img_magic != kIdxImagesMagic)
        throw ParseError(images_path + ": bad magic " + std::to_string(img_magic) +
                         ", expected " + std::to_string(kIdxImagesMagic));
    const std::uint32_t n = read_u32_be(img, images_path);
    const std::uint32_t rows = read_u32_be(img, images_path);
    const std::uint32_t cols = read_u32_be(img, images_path);
    const std::size_t d = std::size_t(rows) * cols;

    std::vector<unsigned char> buf(std::size_t(n) * d);
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(img.gcount()) != buf.size())
        throw ParseError(images_path + ": truncated, expected " +
                         std::to_string(buf.size()) + " pixel bytes, got " +
                         std::to_string(img.gcount()));

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError("cannot open " + labels_path);
    const std::uint32_t lab_magic = read_u32_be(lab, labels_path);
    if (lab_magic != kIdxLabelsMagic)
        throw ParseError(labels_path + ": bad magic " + std::to_string(lab_magic) +
                         ", expected " + std::to_string(kIdxLabelsMagic));
    const std::uint32_t n_lab = read_u32_be(lab, labels_path);
    if (n_lab != n)
        throw ParseError(labels_path + ": label count " + std::to_string(n_lab) +
                         " does not match image count " + std::to_string(n));
    std::vector<unsigned char> lbuf(n_lab);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()));
    if (static_cast<std::size_t>(lab.gcount()) != lbuf.size())
        throw ParseError(labels_path + ": truncated, expected " +
                         std::to_string(lbuf.size()) + " label bytes, got " +
                         std::to_string(lab.gcount()));

    Dataset ds;
    ds.name = images_path;
    ds.inputs.resize(n, static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                buf[i * d + j] / 255.0;
    ds.labels.assign(lbuf.begin(), lbuf.end());
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path) {
    if (!ds.has_labels()) throw ArgumentError("write_idx: dataset has no labels");
    const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
    const std::uint32_t d = static_cast<std::uint32_t>(ds.dim());
    std::uint32_t rows = static_cast<std::uint32_t>(std::lround(std::sqrt(double(d))));
    std::uint32_t cols = rows;
    if (rows * cols != d) { rows = 1; cols = d; }

    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw ParseError("cannot open " + images_path + " for writing");
    write_u32_be(img, kIdxImagesMagic);
    write_u32_be(img, n);
    write_u32_be(img, rows);
    write_u32_be(img, cols);
    for (Eigen::Index i = 0; i < ds.size(); ++i)
        for (Eigen::Index j = 0; j < ds.dim(); ++j) {
            const double v = std::clamp(ds.inputs(i, j), 0.0, 1.0);
            img.put(static_cast<char>(std::lround(v * 255.0)));
        }

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw ParseError("cannot open " + labels_path + " for writing");
    write_u32_be(lab, kIdxLabelsMagic);
    write_u32_be(lab, n);
    for (int l : ds.labels) lab.put(static_cast<char>(l));
}

bool Permutation::is_bijection() const {
    std::vector<std::size_t> sorted = mapping;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != i) return false;
    return true;
}

Permutation identity_permutation(std::size_t d) {
    Permutation p;
    p.mapping.resize(d);
    std::iota(p.mapping.begin(), p.mapping.end(), std::size_t{0});
    return p;
}

Permutation random_permutation(std::size_t d, std::uint64_t seed) {
    Permutation p = identity_permutation(d);
    p.seed = seed;
    Rng rng(seed);
    rng.shuffle(p.mapping);
    return p;
}

Dataset permuted_task(const Dataset& base, const Permutation& perm) {
    if (static_cast<Eigen::Index>(perm.mapping.size()) != base.dim())
        throw ShapeError("permuted_task: permutation size " +
                         std::to_string(perm.mapping.size()) + " vs dim " +
                         std::to_string(base.dim()));
    Dataset out = base;
    for (Eigen::Index j = 0; j < base.dim(); ++j)
        out.inputs.col(j) = base.inputs.col(
            static_cast<Eigen::Index>(perm.mapping[static_cast<std::size_t>(j)]));
    return out;
}

namespace {

// Interleaved 80/20 split keeps classes balanced across train and eval.
void split_80_20(const Dataset& all, Dataset& train, Dataset& eval) {
    std::vector<std::size_t> tr, ev;
    for (Eigen::Index i = 0; i < all.size(); ++i)
        (i % 5 == 4 ? ev : tr).push_back(static_cast<std::size_t>(i));
    train = select_subset_indices(all, tr);
    eval = select_subset_indices(all, ev);
}

}  // namespace

TaskSpec synth_classification(std::uint64_t seed, int classes, int dim,
                              int per_class, double spread) {
    if (classes < 2) throw ArgumentError("synth_classification: classes must be >= 2");
    if (per_class < 1) throw ArgumentError("synth_classification: per_class must be >= 1");
    Rng rng(seed);
    Matrix means(classes, dim);
    for (int c = 0; c < classes; ++c) {
        Vector m(dim);
        for (int j = 0; j < dim; ++j) m[j] = rng.gaussian();
        const double norm = m.norm();
        if (norm > 0) m /= norm;
        means.row(c) = m.transpose() * spread;
    }
    Dataset all;
    const int n = classes * per_class;
    all.inputs.resize(n, dim);
    all.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        all.labels[static_cast<std::size_t>(i)] = c;
        for (int j = 0; j < dim; ++j)
            all.inputs(i, j) = means(c, j) + rng.gaussian();
    }
    all.name = "synth-classification-" + std::to_string(seed);

    TaskSpec task;
    split_80_20(all, task.train, task.eval);
    task.loss = LossKind::SoftmaxClassification;
    task.classes = classes;
    task.name = all.name;
    return task;
}

TaskSpec synth_embedding(std::uint64_t seed, int dim_in, int dim_out, int n,
                         double noise) {
    if (dim_in < 1 || dim_out < 1) throw ArgumentError("synth_embedding: dims must be >= 1");
    Rng rng(seed);
    Matrix map(dim_out, dim_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_in));
    for (int r = 0; r < dim_out; ++r)
        for (int c = 0; c < dim_in; ++c) map(r, c) = rng.gaussian() * scale;

    Dataset all;
    all.inputs.resize(n, dim_in);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim_in; ++j) all.inputs(i, j) = rng.gaussian();
    all.targets = all.inputs * map.transpose();
    if (noise > 0.0)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dim_out; ++j)
                all.targets(i, j) += rng.uniform(-noise, noise);
    all.name = "synth-embedding-" + std::to_string(seed);

    TaskSpec task;
    split_80_20(all, task.train, task.eval);
    task.loss = LossKind::L2Embedding;
    task.name = all.name;
    return task;
}

Dataset synth_digits(std::uint64_t seed, int n, int classes, int dim, double noise) {
    Rng rng(seed);
    const int side = static_cast<int>(std::lround(std::sqrt(double(dim))));
    const bool grid = side * side == dim;

    // One smooth prototype per class: a few Gaussian bumps on the image grid.
    Matrix protos = Matrix::Zero(classes, dim);
    for (int c = 0; c < classes; ++c) {
        const int bumps = 6;
        for (int b = 0; b < bumps; ++b) {
            if (grid) {
                // strokes concentrate in the center of the frame, like
                // centered handwritten digits; the border stays near-blank
                const double cx = rng.uniform(0.3 * side, 0.7 * side);
                const double cy = rng.uniform(0.3 * side, 0.7 * side);
                const double sigma = rng.uniform(2.0, 3.5);
                const double amp = rng.uniform(0.5, 1.0);
                for (int y = 0; y < side; ++y)
                    for (int x = 0; x < side; ++x) {
                        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        protos(c, y * side + x) += amp * std::exp(-d2 / (2 * sigma * sigma));
                    }
            } else {
                const double cx = rng.uniform(0.0, double(dim));
                const double sigma = rng.uniform(1.0, double(dim) / 8.0);
                const double amp = rng.uniform(0.5, 1.0);
                for (int j = 0; j < dim; ++j)
                    protos(c, j) += amp * std::exp(-(j - cx) * (j - cx) / (2 * sigma * sigma));
            }
        }
    }
    protos = protos.cwiseMin(1.0);

    Dataset ds;
    ds.inputs.resize(n, dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        ds.labels[static_cast<std::size_t>(i)] = c;
        const double jitter = rng.uniform(0.8, 1.0);
        for (int j = 0; j < dim; ++j) {
            // MNIST-like sparsity: noise perturbs the stroke region only,
            // the background stays mostly exactly zero
            const double base = protos(c, j) * jitter;
            // stroke pixels carry the class noise; the background stays
            // blank, like the border of a centered handwritten digit
            const double v = base > 0.02 ? base + noise * rng.gaussian() : 0.0;
            ds.inputs(i, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    ds.name = "synth-digits-" + std::to_string(seed);
    return ds;
}

Dataset select_subset(const Dataset& ds, const std::vector<int>& label_set) {
    if (!ds.has_labels()) throw ArgumentError("select_subset: dataset has no labels");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        if (std::find(label_set.begin(), label_set.end(), ds.labels[i]) != label_set.end())
            idx.push_back(i);
    if (idx.empty()) throw ConfigError("select_subset: empty selection");
    return select_subset_indices(ds, idx);
}

Dataset select_subset_indices(const Dataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ConfigError("select_subset_indices: empty selection");
    Dataset out;
    out.name = ds.name + "/subset";
    out.inputs.resize(static_cast<Eigen::Index>(idx.size()), ds.dim());
    if (ds.has_labels()) out.labels.resize(idx.size());
    if (ds.has_targets()) out.targets.resize(static_cast<Eigen::Index>(idx.size()), ds.targets.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.inputs.row(static_cast<Eigen::Index>(k)) =
            ds.inputs.row(static_cast<Eigen::Index>(idx[k]));
        if (ds.has_labels()) out.labels[k] = ds.labels[idx[k]];
        if (ds.has_targets())
            out.targets.row(static_cast<Eigen::Index>(k)) =
                ds.targets.row(static_cast<Eigen::Index>(idx[k]));
    }
    return out;
}

Dataset stratified_subsample(const Dataset& ds, Eigen::Index n, std::uint64_t seed) {
    if (!ds.has_labels())
        throw ArgumentError("stratified_subsample: dataset has no labels");
    if (n >= ds.size()) return ds;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        by_class[ds.labels[i]].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    const std::size_t per_class =
        static_cast<std::size_t>(n) / by_class.size();
    for (auto& [c, idx] : by_class) {
        rng.shuffle(idx);
        const std::size_t take = std::min(per_class, idx.size());
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(chosen.begin(), chosen.end());
    return select_subset_indices(ds, chosen);
}

}  // namespace clbench
