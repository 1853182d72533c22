#include "clbench/serialize.hpp"

#include <fstream>

#include <json.hpp>

#include "clbench/errors.hpp"

namespace clbench {

namespace {

using nlohmann::json;

constexpr int kWeightFormatVersion = 1;

json flat_to_json(const FlatParams& flat) {
    json layout = json::array();
    for (const auto& s : flat.layout)
        layout.push_back({{"name", s.name},
                          {"offset", s.offset},
                          {"length", s.length},
                          {"trunk", s.trunk}});
    return {{"format", "clbench-weights"},
            {"version", kWeightFormatVersion},
            {"layout", layout},
            {"values", flat.values}};
}

FlatParams flat_from_json(const json& j) {
    if (j.value("format", "") != "clbench-weights")
        throw ParseError("weight file: unexpected format tag");
    if (j.value("version", -1) != kWeightFormatVersion)
        throw ParseError("weight file: unsupported version");
    FlatParams flat;
    flat.values = j.at("values").get<std::vector<double>>();
    for (const auto& s : j.at("layout")) {
        ParamSegment seg;
        seg.name = s.at("name").get<std::string>();
        seg.offset = s.at("offset").get<std::size_t>();
        seg.length = s.at("length").get<std::size_t>();
        seg.trunk = s.at("trunk").get<bool>();
        flat.layout.push_back(seg);
    }
    std::size_t covered = 0;
    flat.trunk_mask.assign(flat.values.size(), 0);
    for (const auto& s : flat.layout) {
        if (s.offset + s.length > flat.values.size())
            throw ParseError("weight file: segment exceeds value vector");
        covered += s.length;
        if (s.trunk)
            std::fill(flat.trunk_mask.begin() + static_cast<std::ptrdiff_t>(s.offset),
                      flat.trunk_mask.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length),
                      std::uint8_t{1});
    }
    if (covered != flat.values.size())
        throw ParseError("weight file: layout does not cover values exactly");
    return flat;
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j;
    in >> j;
    return j;
}

void dump_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

}  // namespace

void save_flat_params(const FlatParams& flat, const std::string& path) {
    dump_json(flat_to_json(flat), path);
}

FlatParams load_flat_params(const std::string& path) {
    return flat_from_json(load_json(path));
}

void save_importance_map(const ImportanceMap& map, const std::string& path) {
    json j = flat_to_json(map.omega());
    j["importance"] = {{"method", method_name(map.method)},
                       {"samples_seen", map.samples_seen},
                       {"merged", map.merged},
                       {"task_samples", map.task_samples}};
    dump_json(j, path);
}

ImportanceMap load_importance_map(const std::string& path) {
    const json j = load_json(path);
    ImportanceMap map;
    map.sum = flat_from_json(j);
    const auto& imp = j.at("importance");
    const auto method = method_from_name(imp.at("method").get<std::string>());
    if (!method) throw ParseError(path + ": unknown importance method tag");
    map.method = *method;
    // Stored values are finalized means; keep them as-is.
    map.merged = true;
    map.samples_seen = imp.at("samples_seen").get<std::int64_t>();
    map.task_samples = imp.value("task_samples", std::vector<std::int64_t>{});
    return map;
}

std::string report_to_json(const SequenceReport& report) {
    json j = {{"method", report.method},
              {"seed", report.seed},
              {"lambda", report.lambda},
              {"task_names", report.task_names},
              {"acc_after_training", report.acc_after_training},
              {"acc_at_end", report.acc_at_end},
              {"forgetting", report.forgetting},
              {"avg_acc_at_end", report.avg_acc_at_end},
              {"avg_forgetting", report.avg_forgetting},
              {"memory",
               {{"storage_floats", report.memory.storage_floats()},
                {"training_floats", report.memory.training_floats()},
                {"storage_breakdown", report.memory.storage_breakdown},
                {"training_breakdown", report.memory.training_breakdown}}}};
    if (report.omega_stats) {
        j["omega_stats"] = {{"mean", report.omega_stats->mean},
                            {"median", report.omega_stats->median},
                            {"max", report.omega_stats->max},
                            {"frac_above_10x_median",
                             report.omega_stats->frac_above_10x_median}};
    }
    return j.dump(2);
}

void save_report_json(const SequenceReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    out << report_to_json(report) << '\n';
}

}  // namespace clbench
