#include "tripends/geojson.hpp"

#include "tripends/error.hpp"

namespace tripends::geojson {

using nlohmann::json;

std::vector<json> features(const json& doc) {
  std::vector<json> out;
  const std::string type = doc.value("type", "");
  if (type == "FeatureCollection") {
    for (const auto& f : doc.at("features")) out.push_back(f);
  } else if (type == "Feature") {
    out.push_back(doc);
  } else if (!type.empty()) {
    out.push_back(json{{"type", "Feature"}, {"geometry", doc}, {"properties", json::object()}});
  } else {
    throw InputError("GeoJSON document without a type");
  }
  return out;
}

namespace {

Ring ring_from(const json& coords) {
  Ring ring;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2) throw InputError("GeoJSON position needs two numbers");
    ring.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  return ring;
}

std::vector<Ring> polygon_from(const json& coords) {
  std::vector<Ring> rings;
  for (const auto& r : coords) rings.push_back(ring_from(r));
  if (rings.empty()) throw InputError("GeoJSON polygon without rings");
  return rings;
}

}  // namespace

std::vector<std::vector<Ring>> polygons(const json& geometry) {
  const std::string type = geometry.value("type", "");
  const auto& coords = geometry.at("coordinates");
  if (type == "Polygon") return {polygon_from(coords)};
  if (type == "MultiPolygon") {
    std::vector<std::vector<Ring>> out;
    for (const auto& p : coords) out.push_back(polygon_from(p));
    return out;
  }
  throw InputError("expected Polygon or MultiPolygon geometry, got '" + type + "'");
}

LonLat point(const json& geometry) {
  if (geometry.value("type", "") != "Point") throw InputError("expected Point geometry");
  const auto& c = geometry.at("coordinates");
  if (!c.is_array() || c.size() < 2) throw InputError("GeoJSON position needs two numbers");
  return {c[0].get<double>(), c[1].get<double>()};
}

json point_feature(LonLat p, json properties) {
  return json{{"type", "Feature"},
              {"geometry", {{"type", "Point"}, {"coordinates", {p.lon, p.lat}}}},
              {"properties", std::move(properties)}};
}

}  // namespace tripends::geojson
