#pragma once

// Internal JSON (de)serialization helpers shared by the scenario and
// benchmark sample formats.

#include <string>

#include "json.hpp"
#include "snapshot/scene.hpp"

namespace snapshot::detail {

using ordered_json = nlohmann::ordered_json;

ordered_json track_to_json(const Track& track);
ordered_json polygon_to_json(const MapPolygon& poly);
ordered_json scenario_to_json(const Scenario& s);

Track track_from_json(const ordered_json& jt, const std::string& where, bool allow_label);
MapPolygon polygon_from_json(const ordered_json& jp, const std::string& where);
Scenario scenario_from_json(const ordered_json& j, const std::string& where, bool allow_label);

}  // namespace snapshot::detail
