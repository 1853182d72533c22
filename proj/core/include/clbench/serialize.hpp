#pragma once

#include <string>

#include "clbench/analysis.hpp"
#include "clbench/importance.hpp"
#include "clbench/network.hpp"

namespace clbench {

// Portable weight file: versioned JSON carrying the flat layout plus the
// value vector, stable across runs. Format documented in docs/formats.md.
void save_flat_params(const FlatParams& flat, const std::string& path);
FlatParams load_flat_params(const std::string& path);

// Same container with the estimator tag and samples_seen attached.
void save_importance_map(const ImportanceMap& map, const std::string& path);
ImportanceMap load_importance_map(const std::string& path);

void save_report_json(const SequenceReport& report, const std::string& path);
std::string report_to_json(const SequenceReport& report);

}  // namespace clbench
