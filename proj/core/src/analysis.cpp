#include "clbench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "clbench/errors.hpp"

namespace clbench {

std::size_t MemoryLedger::storage_floats() const {
    std::size_t t = 0;
    for (const auto& [k, v] : storage_breakdown) t += v;
    return t;
}

std::size_t MemoryLedger::training_floats() const {
    std::size_t t = storage_floats();
    for (const auto& [k, v] : training_breakdown) t += v;
    return t;
}

void compute_forgetting(SequenceReport& report) {
    if (report.acc_after_training.size() != report.acc_at_end.size() ||
        report.acc_after_training.empty())
        throw StateError("compute_forgetting: accuracy vectors not populated");
    const std::size_t n = report.acc_at_end.size();
    report.forgetting.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        report.forgetting[i] = report.acc_after_training[i] - report.acc_at_end[i];
    report.avg_acc_at_end =
        std::accumulate(report.acc_at_end.begin(), report.acc_at_end.end(), 0.0) /
        static_cast<double>(n);
    report.avg_forgetting =
        std::accumulate(report.forgetting.begin(), report.forgetting.end(), 0.0) /
        static_cast<double>(n);
}

NetShape net_shape(const FlatParams& flat) {
    NetShape s;
    s.trunk_params = flat.trunk_size();
    s.head_params = flat.size() - s.trunk_params;
    return s;
}

MemoryLedger memory_account(Method method, const NetShape& shape, int n_tasks) {
    (void)n_tasks;  // constant in task count for every implemented method
    MemoryLedger m;
    m.storage_breakdown["model"] = shape.trunk_params;
    m.storage_breakdown["heads"] = shape.head_params;
    switch (method) {
        case Method::Finetune:
        case Method::Joint:
            break;
        case Method::L2:
            m.storage_breakdown["theta_star"] = shape.trunk_params;
            break;
        case Method::MasGlobal:
        case Method::MasVector:
        case Method::LMas:
        case Method::Ewc:
            m.storage_breakdown["omega"] = shape.trunk_params;
            m.storage_breakdown["theta_star"] = shape.trunk_params;
            break;
        case Method::Si:
            m.storage_breakdown["omega"] = shape.trunk_params;
            m.storage_breakdown["theta_star"] = shape.trunk_params;
            m.training_breakdown["si_path"] = shape.trunk_params;
            m.training_breakdown["si_theta_start"] = shape.trunk_params;
            break;
    }
    return m;
}

namespace {

std::vector<double> trunk_values(const ImportanceMap& map) {
    const FlatParams omega = map.omega();
    std::vector<double> v;
    v.reserve(omega.trunk_size());
    for (std::size_t i = 0; i < omega.values.size(); ++i)
        if (omega.trunk_mask[i]) v.push_back(omega.values[i]);
    return v;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Average ranks for ties.
std::vector<double> ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double num = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ArgumentError("spearman: need two equal-length vectors of size >= 2");
    return pearson(ranks(a), ranks(b));
}

Histogram omega_histogram(const ImportanceMap& map, int bins) {
    if (bins < 2) throw ArgumentError("omega_histogram: bins must be >= 2");
    const std::vector<double> v = trunk_values(map);
    if (v.empty()) throw ArgumentError("omega_histogram: empty map");
    Histogram h;
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    if (lo == hi) {
        // degenerate: all mass in one bin
        h.edges = {lo, lo + 1.0};
        h.counts = {v.size()};
    } else {
        h.edges.resize(static_cast<std::size_t>(bins) + 1);
        h.counts.assign(static_cast<std::size_t>(bins), 0);
        const double width = (hi - lo) / bins;
        for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
        for (double x : v) {
            int b = static_cast<int>((x - lo) / width);
            b = std::clamp(b, 0, bins - 1);
            ++h.counts[static_cast<std::size_t>(b)];
        }
    }
    h.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    h.median = median_of(v);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t k = std::max<std::size_t>(1, sorted.size() / 100);
    h.top_k_threshold = sorted[k - 1];
    return h;
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
    out << "# mean=" << h.mean << " median=" << h.median
        << " top_k_threshold=" << h.top_k_threshold << '\n';
}

OmegaCorrelation omega_correlation(const ImportanceMap& a, const ImportanceMap& b,
                                   std::size_t top_k) {
    if (!a.sum.same_layout(b.sum))
        throw ShapeError("omega_correlation: layout mismatch");
    const std::vector<double> va = trunk_values(a);
    const std::vector<double> vb = trunk_values(b);
    if (top_k > va.size())
        throw ArgumentError("omega_correlation: top_k exceeds parameter count");
    OmegaCorrelation c;
    c.spearman_all = spearman(va, vb);

    std::vector<std::size_t> order(va.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return va[x] > va[y]; });
    std::vector<double> ta(top_k), tb(top_k);
    for (std::size_t i = 0; i < top_k; ++i) {
        ta[i] = va[order[i]];
        tb[i] = vb[order[i]];
    }
    c.spearman_top_k_of_a = top_k >= 2 ? spearman(ta, tb) : 1.0;

    std::vector<std::size_t> order_b(vb.size());
    std::iota(order_b.begin(), order_b.end(), std::size_t{0});
    std::sort(order_b.begin(), order_b.end(),
              [&](std::size_t x, std::size_t y) { return vb[x] > vb[y]; });
    std::vector<std::size_t> top_a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_k));
    std::vector<std::size_t> top_b(order_b.begin(), order_b.begin() + static_cast<std::ptrdiff_t>(top_k));
    std::sort(top_a.begin(), top_a.end());
    std::sort(top_b.begin(), top_b.end());
    std::vector<std::size_t> inter;
    std::set_intersection(top_a.begin(), top_a.end(), top_b.begin(), top_b.end(),
                          std::back_inserter(inter));
    c.overlap_at_k = static_cast<double>(inter.size()) / static_cast<double>(top_k);
    return c;
}

OmegaStats omega_stats(const ImportanceMap& map) {
    const std::vector<double> v = trunk_values(map);
    OmegaStats s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.median = median_of(v);
    s.max = *std::max_element(v.begin(), v.end());
    std::size_t above = 0;
    for (double x : v)
        if (x > 10.0 * s.median) ++above;
    s.frac_above_10x_median = static_cast<double>(above) / static_cast<double>(v.size());
    return s;
}

void write_report_csv(const std::vector<SequenceReport>& reports,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << "method,seed,lambda,task,acc_after_training,acc_at_end,forgetting\n";
    for (const auto& r : reports)
        for (std::size_t i = 0; i < r.acc_at_end.size(); ++i)
            out << r.method << ',' << r.seed << ',' << r.lambda << ',' << i << ','
                << r.acc_after_training[i] << ',' << r.acc_at_end[i] << ','
                << r.forgetting[i] << '\n';
}

}  // namespace clbench
