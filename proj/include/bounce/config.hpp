#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "bounce/sim.hpp"

namespace bounce {

// Strict scenario ingestion: every key must be known, every default is made
// explicit by dump_effective_config. Overrides are dotted paths applied onto
// the raw JSON before parsing ("search.collision_weight=100").
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::string& path,
                       const std::map<std::string, std::string>& overrides = {});

nlohmann::json dump_effective_config(const Scenario& scenario);

nlohmann::json map_spec_to_json(const MapSpec& spec);
MapSpec map_spec_from_json(const nlohmann::json& j);

void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

}  // namespace bounce
