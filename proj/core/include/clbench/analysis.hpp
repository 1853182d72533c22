#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clbench/importance.hpp"

namespace clbench {

// Float counts per stored artifact; totals are the sum of the breakdown.
struct MemoryLedger {
    std::map<std::string, std::size_t> storage_breakdown;
    std::map<std::string, std::size_t> training_breakdown;

    std::size_t storage_floats() const;
    std::size_t training_floats() const;
};

struct OmegaStats {
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    double frac_above_10x_median = 0.0;
};

struct SequenceReport {
    std::string method;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    std::vector<std::string> task_names;
    std::vector<double> acc_after_training;  // task i, right after training i
    std::vector<double> acc_at_end;          // task i, after the full sequence
    std::vector<double> forgetting;          // after - end (signed)
    double avg_acc_at_end = 0.0;
    double avg_forgetting = 0.0;
    MemoryLedger memory;
    std::optional<OmegaStats> omega_stats;
};

// Fills forgetting and the averages from the two accuracy vectors.
void compute_forgetting(SequenceReport& report);

struct NetShape {
    std::size_t trunk_params = 0;
    std::size_t head_params = 0;
    std::size_t total() const { return trunk_params + head_params; }
};

NetShape net_shape(const FlatParams& flat);

// Closed-form float counts per method; constant in n_tasks for every
// implemented method (heads themselves scale with tasks and are counted
// in the model).
MemoryLedger memory_account(Method method, const NetShape& shape, int n_tasks);

struct Histogram {
    std::vector<double> edges;   // bins + 1
    std::vector<std::size_t> counts;
    double mean = 0.0;
    double median = 0.0;
    double top_k_threshold = 0.0;  // smallest value in the top 1% (k = n/100, >= 1)
};

// Histogram over the trunk omega values.
Histogram omega_histogram(const ImportanceMap& map, int bins);
void write_histogram_csv(const Histogram& h, const std::string& path);

struct OmegaCorrelation {
    double spearman_all = 0.0;
    double spearman_top_k_of_a = 0.0;
    double overlap_at_k = 0.0;
};

// Spearman rank correlation over trunk parameters, plus the Appendix-style
// restriction to A's top-k and the top-k index-set overlap.
OmegaCorrelation omega_correlation(const ImportanceMap& a, const ImportanceMap& b,
                                   std::size_t top_k);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

OmegaStats omega_stats(const ImportanceMap& map);

void write_report_csv(const std::vector<SequenceReport>& reports,
                      const std::string& path);

}  // namespace clbench
