#include "clbench/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "clbench/rng.hpp"
#include "clbench/errors.hpp"
#include "clbench/serialize.hpp"

namespace clbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> preset_names() {
    return {"permuted-mnist-5", "lambda-sensitivity", "adaptation-subset",
            "embedding-2task", "synth-2task"};
}

ExperimentConfig make_preset(const std::string& name) {
    ExperimentConfig cfg;
    cfg.name = name;
    if (name == "permuted-mnist-5") {
        cfg.task_kind = "permuted-mnist";
        cfg.num_tasks = 5;
        cfg.hidden = {128, 128};
        cfg.methods = {Method::Finetune, Method::MasGlobal, Method::LMas, Method::Ewc,
                       Method::Si, Method::L2};
        cfg.lambdas = {1.0};
        cfg.seeds = {1, 2, 3};
        cfg.train.epochs = 20;
        cfg.train.batch_size = 50;
        cfg.train.lr = 0.1;
        cfg.train.importance_source = ImportanceSource::Test;
        cfg.train.merge_mean = true;
    } else if (name == "lambda-sensitivity") {
        cfg.task_kind = "permuted-mnist";
        cfg.num_tasks = 5;
        cfg.hidden = {128, 128};
        cfg.methods = {Method::MasGlobal};
        cfg.lambdas = {0.1, 1.0, 10.0};
        cfg.seeds = {1, 2, 3};
        cfg.train.epochs = 20;
        cfg.train.batch_size = 50;
        cfg.train.lr = 0.1;
        cfg.train.importance_source = ImportanceSource::Test;
        cfg.train.merge_mean = true;
    } else if (name == "adaptation-subset") {
        cfg.task_kind = "synth-classification";
        cfg.num_tasks = 4;
        cfg.classes = 4;
        cfg.dim = 16;
        cfg.per_class = 250;
        cfg.spread = 3.0;
        cfg.hidden = {16, 32, 32};
        cfg.methods = {Method::MasGlobal};
        cfg.lambdas = {1.0};
        cfg.seeds = {1, 2, 3};
        cfg.adaptation_labels = {0, 1};
        cfg.train.epochs = 40;
        cfg.train.batch_size = 32;
        cfg.train.lr = 0.05;
        cfg.train.importance_source = ImportanceSource::CustomSubset;
    } else if (name == "embedding-2task") {
        cfg.task_kind = "synth-embedding";
        cfg.num_tasks = 2;
        cfg.dim_in = 16;
        cfg.dim_out = 8;
        cfg.n_points = 800;
        cfg.noise = 0.05;
        cfg.hidden = {16, 32, 8};
        cfg.methods = {Method::Finetune, Method::MasGlobal, Method::Joint};
        cfg.lambdas = {5.0};  // embedding-mode default
        cfg.seeds = {1, 2, 3};
        cfg.train.epochs = 60;
        cfg.train.batch_size = 32;
        cfg.train.lr = 0.02;
    } else if (name == "synth-2task") {
        cfg.task_kind = "synth-classification";
        cfg.num_tasks = 2;
        cfg.classes = 4;
        cfg.dim = 16;
        cfg.per_class = 250;
        cfg.spread = 3.0;
        cfg.hidden = {16, 32, 32};
        cfg.methods = {Method::Finetune, Method::MasGlobal, Method::MasVector};
        cfg.lambdas = {1.0};
        cfg.seeds = {1, 2, 3};
        cfg.train.epochs = 40;
        cfg.train.batch_size = 32;
        cfg.train.lr = 0.05;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return cfg;
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }

    ExperimentConfig cfg;
    if (j.contains("preset")) cfg = make_preset(j.at("preset").get<std::string>());

    read_if(j, "name", cfg.name);
    read_if(j, "task_kind", cfg.task_kind);
    read_if(j, "num_tasks", cfg.num_tasks);
    read_if(j, "classes", cfg.classes);
    read_if(j, "dim", cfg.dim);
    read_if(j, "per_class", cfg.per_class);
    read_if(j, "spread", cfg.spread);
    read_if(j, "dim_in", cfg.dim_in);
    read_if(j, "dim_out", cfg.dim_out);
    read_if(j, "n_points", cfg.n_points);
    read_if(j, "noise", cfg.noise);
    read_if(j, "adaptation_labels", cfg.adaptation_labels);
    read_if(j, "identity_first_permutation", cfg.identity_first_permutation);
    read_if(j, "allow_synthetic_mnist", cfg.allow_synthetic_mnist);
    read_if(j, "data_dir", cfg.data_dir);
    read_if(j, "out_dir", cfg.out_dir);
    read_if(j, "parallel_cells", cfg.parallel_cells);
    if (j.contains("mnist_subsample"))
        cfg.mnist_subsample = j.at("mnist_subsample").get<Eigen::Index>();
    if (j.contains("hidden")) {
        cfg.hidden.clear();
        for (const auto& h : j.at("hidden"))
            cfg.hidden.push_back(h.get<Eigen::Index>());
    }
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods")) {
            const auto parsed = method_from_name(m.get<std::string>());
            if (!parsed)
                throw ConfigError(
                    "unknown method tag '" + m.get<std::string>() +
                    "' (valid: finetune, l2, mas, mas-vector, l-mas, ewc, si, joint)");
            cfg.methods.push_back(*parsed);
        }
    }
    read_if(j, "lambdas", cfg.lambdas);
    read_if(j, "seeds", cfg.seeds);
    if (j.contains("train")) {
        const json& t = j.at("train");
        read_if(t, "epochs", cfg.train.epochs);
        read_if(t, "batch_size", cfg.train.batch_size);
        read_if(t, "lr", cfg.train.lr);
        read_if(t, "si_xi", cfg.train.si_xi);
        if (t.contains("importance_source")) {
            const auto s =
                importance_source_from_name(t.at("importance_source").get<std::string>());
            if (!s)
                throw ConfigError("unknown importance_source '" +
                                  t.at("importance_source").get<std::string>() + "'");
            cfg.train.importance_source = *s;
        }
        if (t.contains("merge")) {
            const std::string merge = t.at("merge").get<std::string>();
            if (merge != "sum" && merge != "mean")
                throw ConfigError("train.merge must be 'sum' or 'mean'");
            cfg.train.merge_mean = merge == "mean";
        }
    }
    return cfg;
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> violations;
    const std::vector<std::string> kinds = {"permuted-mnist", "synth-classification",
                                            "synth-embedding"};
    if (std::find(kinds.begin(), kinds.end(), cfg.task_kind) == kinds.end())
        violations.push_back("task_kind: unknown '" + cfg.task_kind +
                             "' (valid: permuted-mnist, synth-classification, synth-embedding)");
    if (cfg.num_tasks < 1) violations.push_back("num_tasks: must be >= 1");
    if (cfg.seeds.empty()) violations.push_back("seeds: must list at least one seed");
    if (cfg.methods.empty()) violations.push_back("methods: must list at least one method");
    for (double lam : cfg.lambdas)
        if (lam < 0.0)
            violations.push_back("lambdas: lambda must be >= 0, got " + std::to_string(lam));
    if (cfg.lambdas.empty()) violations.push_back("lambdas: must list at least one value");
    if (cfg.train.epochs < 1) violations.push_back("train.epochs: must be >= 1");
    if (cfg.train.batch_size < 1) violations.push_back("train.batch_size: must be >= 1");
    if (cfg.train.lr <= 0.0) violations.push_back("train.lr: must be > 0");
    if (cfg.train.si_xi <= 0.0) violations.push_back("train.si_xi: must be > 0");
    if (cfg.hidden.empty()) violations.push_back("hidden: need at least one trunk width");
    if (cfg.task_kind == "synth-classification" && cfg.classes < 2)
        violations.push_back("classes: must be >= 2");
    if (!cfg.adaptation_labels.empty() && cfg.task_kind != "synth-classification")
        violations.push_back("adaptation_labels: only valid with synth-classification");
    return violations;
}

std::vector<std::string> validate_config_file(const std::string& path) {
    try {
        return validate_config(load_config(path));
    } catch (const std::exception& e) {
        return {e.what()};
    }
}

namespace {

// Mixes task index into the permutation seed.
std::uint64_t perm_seed(std::uint64_t seed, std::size_t task) {
    return seed * 0x9e3779b97f4a7c15ULL + 0x12345 + task;
}

struct MnistBase {
    Dataset train;
    Dataset eval;
};

MnistBase load_mnist_base(const ExperimentConfig& cfg, std::uint64_t seed) {
    const fs::path dir = cfg.data_dir;
    const fs::path train_images = dir / "train-images-idx3-ubyte";
    const fs::path train_labels = dir / "train-labels-idx1-ubyte";
    const fs::path test_images = dir / "t10k-images-idx3-ubyte";
    const fs::path test_labels = dir / "t10k-labels-idx1-ubyte";
    MnistBase base;
    if (fs::exists(train_images) && fs::exists(train_labels) &&
        fs::exists(test_images) && fs::exists(test_labels)) {
        base.train = load_idx(train_images.string(), train_labels.string());
        base.eval = load_idx(test_images.string(), test_labels.string());
    } else if (cfg.allow_synthetic_mnist) {
        // Fixed corpus seed: the stand-in dataset is the same for every run
        // seed, like the real files would be. One corpus split train/eval so
        // both sides share the class prototypes.
        const Dataset corpus = synth_digits(0xD161757, 9500, 10, 784, 0.45);
        std::vector<std::size_t> head(8000), tail(1500);
        std::iota(head.begin(), head.end(), std::size_t{0});
        std::iota(tail.begin(), tail.end(), std::size_t{8000});
        base.train = select_subset_indices(corpus, head);
        base.eval = select_subset_indices(corpus, tail);
        // The train split is the raw capture: sensor noise over the blank
        // background and a few percent of mislabeled digits. The eval split
        // stays curated (clean background, correct labels).
        Rng dirt_rng(0xD161759);
        for (Eigen::Index r = 0; r < base.train.inputs.rows(); ++r)
            for (Eigen::Index c = 0; c < base.train.inputs.cols(); ++c)
                if (base.train.inputs(r, c) < 0.02)
                    base.train.inputs(r, c) = std::min(
                        0.12 * std::abs(dirt_rng.gaussian()), 1.0);
        for (int& label : base.train.labels)
            if (dirt_rng.uniform01() < 0.05)
                label = static_cast<int>(dirt_rng.index(10));
    } else {
        throw ParseError("MNIST IDX files not found under " + cfg.data_dir +
                         " and allow_synthetic_mnist is off");
    }
    if (base.train.size() > cfg.mnist_subsample)
        base.train = stratified_subsample(base.train, cfg.mnist_subsample, seed);
    if (base.eval.size() > 1500) base.eval = stratified_subsample(base.eval, 1500, seed);
    return base;
}

}  // namespace

std::vector<TaskSpec> build_tasks(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::vector<TaskSpec> tasks;
    if (cfg.task_kind == "permuted-mnist") {
        const MnistBase base = load_mnist_base(cfg, seed);
        for (int t = 0; t < cfg.num_tasks; ++t) {
            const Permutation perm =
                (t == 0 && cfg.identity_first_permutation)
                    ? identity_permutation(static_cast<std::size_t>(base.train.dim()))
                    : random_permutation(static_cast<std::size_t>(base.train.dim()),
                                         perm_seed(seed, static_cast<std::size_t>(t)));
            TaskSpec task;
            task.train = permuted_task(base.train, perm);
            task.eval = permuted_task(base.eval, perm);
            task.loss = LossKind::SoftmaxClassification;
            task.classes = 10;
            task.name = "permuted-mnist-" + std::to_string(t);
            tasks.push_back(std::move(task));
        }
    } else if (cfg.task_kind == "synth-classification") {
        for (int t = 0; t < cfg.num_tasks; ++t) {
            TaskSpec task = synth_classification(seed * 1000 + static_cast<std::uint64_t>(t),
                                                 cfg.classes, cfg.dim, cfg.per_class,
                                                 cfg.spread);
            task.name = "synth-class-" + std::to_string(t);
            tasks.push_back(std::move(task));
        }
        if (!cfg.adaptation_labels.empty())
            tasks[0].importance_set = select_subset(tasks[0].train, cfg.adaptation_labels);
    } else if (cfg.task_kind == "synth-embedding") {
        for (int t = 0; t < cfg.num_tasks; ++t) {
            TaskSpec task = synth_embedding(seed * 1000 + static_cast<std::uint64_t>(t),
                                            cfg.dim_in, cfg.dim_out, cfg.n_points, cfg.noise);
            task.name = "synth-embed-" + std::to_string(t);
            tasks.push_back(std::move(task));
        }
    } else {
        throw ConfigError("unknown task_kind '" + cfg.task_kind + "'");
    }
    if (cfg.train.importance_source == ImportanceSource::CustomSubset)
        for (auto& task : tasks)
            if (!task.importance_set) task.importance_set = task.train;
    return tasks;
}

CellResult run_cell(const ExperimentConfig& cfg, Method method, double lambda,
                    std::uint64_t seed) {
    std::vector<TaskSpec> tasks = build_tasks(cfg, seed);
    std::vector<Eigen::Index> widths;
    widths.push_back(tasks.front().train.dim());
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    if (tasks.front().loss == LossKind::L2Embedding)
        widths.push_back(tasks.front().train.targets.cols());
    Network net = make_net_for_tasks(widths, tasks, seed);

    TrainConfig train = cfg.train;
    train.method = method;
    train.lambda = lambda;
    train.seed = seed;

    CellResult cell;
    if (method == Method::Joint) {
        cell.report = joint_train(std::move(net), tasks, train).report;
        return cell;
    }

    if (!cfg.adaptation_labels.empty()) {
        // Track the omega subset vs its complement on the first task.
        TaskSpec eval_subset = tasks[0];
        eval_subset.eval = select_subset(tasks[0].eval, cfg.adaptation_labels);
        TaskSpec eval_complement = tasks[0];
        std::vector<int> complement;
        for (int c = 0; c < cfg.classes; ++c)
            if (std::find(cfg.adaptation_labels.begin(), cfg.adaptation_labels.end(), c) ==
                cfg.adaptation_labels.end())
                complement.push_back(c);
        eval_complement.eval = select_subset(tasks[0].eval, complement);

        cell.has_adaptation = true;
        SequenceResult result = run_sequence(
            std::move(net), tasks, train, [&](std::size_t t, Network& n) {
                if (t != 0) return;
                cell.acc_subset_after = evaluate_accuracy(n, eval_subset);
                cell.acc_complement_after = evaluate_accuracy(n, eval_complement);
            });
        cell.acc_subset_end = evaluate_accuracy(result.net, eval_subset);
        cell.acc_complement_end = evaluate_accuracy(result.net, eval_complement);
        cell.report = std::move(result.report);
        return cell;
    }

    cell.report = run_sequence(std::move(net), tasks, train).report;
    return cell;
}

namespace {

std::string cell_stem(Method method, double lambda, std::uint64_t seed) {
    std::ostringstream s;
    s << method_name(method) << "_lam" << lambda << "_seed" << seed;
    return s.str();
}

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;
};

Stats mean_std(const std::vector<double>& v) {
    Stats s;
    if (v.empty()) return s;
    s.mean = 0.0;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return s;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
    const auto violations = validate_config(cfg);
    if (!violations.empty()) {
        std::string msg = "invalid config:";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
    fs::create_directories(cfg.out_dir);

    struct Cell {
        Method method;
        double lambda;
        std::uint64_t seed;
        CellResult result;
    };
    std::vector<Cell> cells;
    for (Method m : cfg.methods)
        for (double lam : cfg.lambdas)
            for (std::uint64_t seed : cfg.seeds)
                cells.push_back({m, lam, seed, {}});

    auto exec = [&](Cell& cell) {
        cell.result = run_cell(cfg, cell.method, cell.lambda, cell.seed);
    };
    if (cfg.parallel_cells) {
        std::vector<std::thread> pool;
        pool.reserve(cells.size());
        for (auto& c : cells) pool.emplace_back(exec, std::ref(c));
        for (auto& t : pool) t.join();
    } else {
        for (auto& c : cells) exec(c);
    }

    std::vector<SequenceReport> all_reports;
    for (const auto& c : cells) {
        const std::string stem = cell_stem(c.method, c.lambda, c.seed);
        save_report_json(c.result.report, (fs::path(cfg.out_dir) / (stem + ".json")).string());
        all_reports.push_back(c.result.report);
    }
    write_report_csv(all_reports, (fs::path(cfg.out_dir) / "report.csv").string());

    // Aggregate table: mean +- stddev per (method, lambda).
    {
        std::ofstream out(fs::path(cfg.out_dir) / "aggregate.csv");
        out << "method,lambda,seeds,avg_acc_mean,avg_acc_std,avg_forgetting_mean,"
               "avg_forgetting_std\n";
        for (Method m : cfg.methods)
            for (double lam : cfg.lambdas) {
                std::vector<double> accs, forgets;
                for (const auto& c : cells)
                    if (c.method == m && c.lambda == lam) {
                        accs.push_back(c.result.report.avg_acc_at_end);
                        forgets.push_back(c.result.report.avg_forgetting);
                    }
                const Stats a = mean_std(accs);
                const Stats f = mean_std(forgets);
                out << method_name(m) << ',' << lam << ',' << accs.size() << ','
                    << a.mean << ',' << a.stddev << ',' << f.mean << ',' << f.stddev
                    << '\n';
            }
    }

    if (!cfg.adaptation_labels.empty()) {
        std::ofstream out(fs::path(cfg.out_dir) / "adaptation.csv");
        out << "method,lambda,seed,acc_subset_after,acc_subset_end,forgetting_subset,"
               "acc_complement_after,acc_complement_end,forgetting_complement\n";
        for (const auto& c : cells) {
            if (!c.result.has_adaptation) continue;
            out << method_name(c.method) << ',' << c.lambda << ',' << c.seed << ','
                << c.result.acc_subset_after << ',' << c.result.acc_subset_end << ','
                << (c.result.acc_subset_after - c.result.acc_subset_end) << ','
                << c.result.acc_complement_after << ',' << c.result.acc_complement_end
                << ',' << (c.result.acc_complement_after - c.result.acc_complement_end)
                << '\n';
        }
    }
    return 0;
}

}  // namespace clbench
