#pragma once

#include <cmath>
#include <numbers>

namespace svdamage {

inline constexpr double kEarthRadiusM = 6'371'000.0;

struct GeoPoint {
    double latitude = 0;  // degrees
    double longitude = 0; // degrees
};

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline bool valid_coordinate(const GeoPoint& p) {
    return std::isfinite(p.latitude) && std::isfinite(p.longitude) && p.latitude >= -90.0 && p.latitude <= 90.0 &&
           p.longitude >= -180.0 && p.longitude <= 180.0;
}

// Great-circle distance in meters on a sphere of radius kEarthRadiusM.
inline double haversine_distance(const GeoPoint& a, const GeoPoint& b) {
    const double p1 = deg2rad(a.latitude), p2 = deg2rad(b.latitude);
    const double s_lat = std::sin((p2 - p1) / 2.0);
    const double s_lon = std::sin(deg2rad(b.longitude - a.longitude) / 2.0);
    double h = s_lat * s_lat + std::cos(p1) * std::cos(p2) * s_lon * s_lon;
    h = std::min(1.0, std::max(0.0, h));
    return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

// Lower bound on haversine_distance from the latitude difference alone.
inline double latitude_bound(double lat_a, double lat_b) {
    return kEarthRadiusM * std::abs(deg2rad(lat_a) - deg2rad(lat_b));
}

} // namespace svdamage
