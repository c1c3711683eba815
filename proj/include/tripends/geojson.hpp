#pragma once

#include <vector>

#include <json.hpp>

#include "tripends/geo.hpp"

namespace tripends::geojson {

/// Flattens a FeatureCollection, a Feature, or a bare geometry into a list of
/// features. Bare geometries get an empty properties object.
std::vector<nlohmann::json> features(const nlohmann::json& doc);

/// Polygon -> one polygon, MultiPolygon -> several. Each polygon is a list of
/// rings (outer first). Throws InputError on other geometry types.
std::vector<std::vector<Ring>> polygons(const nlohmann::json& geometry);

LonLat point(const nlohmann::json& geometry);

nlohmann::json point_feature(LonLat p, nlohmann::json properties);

}  // namespace tripends::geojson
