#pragma once

#include "stflow/analysis.hpp"
#include "stflow/config.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace stflow {

struct ExperimentDef {
    std::string name;
    std::string description; // one line, for `list`
    std::string csv_doc;     // columns of the emitted CSVs, for `describe`
    std::map<std::string, std::string> defaults;
    std::function<ExperimentReport(const ExperimentConfig&, const std::string& out_dir)> run;
};

const std::vector<ExperimentDef>& experiment_registry();
const ExperimentDef* find_experiment(const std::string& name);

/// Merge the experiment's defaults under the config, run it, and (when
/// out_dir is nonempty) write report.json plus the experiment's CSVs there.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Default (space, target, map, x0, v) wiring for a catalog map id; every
/// piece can be overridden through config keys (space, space_dim, target,
/// target_dim, x0, v, map_param).
struct MapBundle {
    EvolvingManifold space;
    TargetManifold target;
    SpaceTimeMap map;
    Vec x0, v;
};

MapBundle catalog_bundle(const std::string& map_id, const ExperimentConfig& cfg);

} // namespace stflow
