#pragma once

#include <string>

namespace cosp
{

struct MapPoint
{
    double easting = 0.0;
    double northing = 0.0;
};

/// Transverse Mercator on WGS84 with UTM zone constants (Krueger series to sixth order).
class UtmProjection
{
public:
    UtmProjection(int zone, bool north);

    /// Zone containing the given longitude.
    static UtmProjection for_lonlat(double lon_deg, double lat_deg);

    /// Parses "EPSG:326zz" / "EPSG:327zz".
    static UtmProjection from_crs(const std::string &crs);

    MapPoint forward(double lon_deg, double lat_deg) const;
    void inverse(const MapPoint &p, double &lon_deg, double &lat_deg) const;

    int zone() const { return zone_; }
    bool north() const { return north_; }
    double central_meridian() const { return -183.0 + 6.0 * zone_; }
    std::string crs() const;

private:
    int zone_;
    bool north_;
};

} // namespace cosp
