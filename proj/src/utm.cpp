#include <cosp/error.hpp>
#include <cosp/geo.hpp>
#include <cosp/utm.hpp>

#include <array>
#include <cmath>

namespace cosp
{

namespace
{

constexpr double kK0 = 0.9996;
constexpr double kFalseEasting = 500000.0;
constexpr double kFalseNorthingSouth = 10000000.0;

struct KruegerSeries
{
    double rect_radius;
    std::array<double, 6> alpha;
    std::array<double, 6> beta;
};

const KruegerSeries &series()
{
    static const KruegerSeries s = [] {
        const double n = wgs84::f / (2.0 - wgs84::f);
        const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
        KruegerSeries k;
        k.rect_radius = wgs84::a / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        k.alpha = {n / 2 - 2.0 / 3 * n2 + 5.0 / 16 * n3 + 41.0 / 180 * n4 - 127.0 / 288 * n5 + 7891.0 / 37800 * n6,
                   13.0 / 48 * n2 - 3.0 / 5 * n3 + 557.0 / 1440 * n4 + 281.0 / 630 * n5 - 1983433.0 / 1935360 * n6,
                   61.0 / 240 * n3 - 103.0 / 140 * n4 + 15061.0 / 26880 * n5 + 167603.0 / 181440 * n6,
                   49561.0 / 161280 * n4 - 179.0 / 168 * n5 + 6601661.0 / 7257600 * n6,
                   34729.0 / 80640 * n5 - 3418889.0 / 1995840 * n6,
                   212378941.0 / 319334400 * n6};
        k.beta = {n / 2 - 2.0 / 3 * n2 + 37.0 / 96 * n3 - 1.0 / 360 * n4 - 81.0 / 512 * n5 + 96199.0 / 604800 * n6,
                  1.0 / 48 * n2 + 1.0 / 15 * n3 - 437.0 / 1440 * n4 + 46.0 / 105 * n5 - 1118711.0 / 3870720 * n6,
                  17.0 / 480 * n3 - 37.0 / 840 * n4 - 209.0 / 4480 * n5 + 5569.0 / 90720 * n6,
                  4397.0 / 161280 * n4 - 11.0 / 504 * n5 - 830251.0 / 7257600 * n6,
                  4583.0 / 161280 * n5 - 108847.0 / 3991680 * n6,
                  20648693.0 / 638668800 * n6};
        return k;
    }();
    return s;
}

} // namespace

UtmProjection::UtmProjection(int zone, bool north) : zone_(zone), north_(north)
{
    if (zone < 1 || zone > 60)
        throw Error(ErrorCode::InvalidArgument, "UTM zone must be in [1, 60]");
}

UtmProjection UtmProjection::for_lonlat(double lon_deg, double lat_deg)
{
    const double lon = normalize_lon(lon_deg);
    int zone = static_cast<int>(std::floor((lon + 180.0) / 6.0)) + 1;
    if (zone > 60)
        zone = 60;
    return UtmProjection(zone, lat_deg >= 0.0);
}

UtmProjection UtmProjection::from_crs(const std::string &crs)
{
    const std::string prefix = "EPSG:";
    if (crs.rfind(prefix, 0) == 0 && crs.size() == prefix.size() + 5)
    {
        const int code = std::stoi(crs.substr(prefix.size()));
        if (code > 32600 && code <= 32660)
            return UtmProjection(code - 32600, true);
        if (code > 32700 && code <= 32760)
            return UtmProjection(code - 32700, false);
    }
    throw Error(ErrorCode::InvalidArgument, "not a WGS84 UTM crs: " + crs);
}

std::string UtmProjection::crs() const
{
    return "EPSG:" + std::to_string((north_ ? 32600 : 32700) + zone_);
}

MapPoint UtmProjection::forward(double lon_deg, double lat_deg) const
{
    const KruegerSeries &k = series();
    const double e = std::sqrt(wgs84::e2);
    const double phi = deg_to_rad(lat_deg);
    const double lam = deg_to_rad(normalize_lon(lon_deg - central_meridian()));

    const double sp = std::sin(phi);
    const double t = std::sinh(std::atanh(sp) - e * std::atanh(e * sp));
    const double xi_p = std::atan2(t, std::cos(lam));
    const double eta_p = std::atanh(std::sin(lam) / std::sqrt(1.0 + t * t));

    double xi = xi_p, eta = eta_p;
    for (int j = 1; j <= 6; ++j)
    {
        xi += k.alpha[j - 1] * std::sin(2 * j * xi_p) * std::cosh(2 * j * eta_p);
        eta += k.alpha[j - 1] * std::cos(2 * j * xi_p) * std::sinh(2 * j * eta_p);
    }
    return {kFalseEasting + kK0 * k.rect_radius * eta, (north_ ? 0.0 : kFalseNorthingSouth) + kK0 * k.rect_radius * xi};
}

void UtmProjection::inverse(const MapPoint &p, double &lon_deg, double &lat_deg) const
{
    const KruegerSeries &k = series();
    const double e = std::sqrt(wgs84::e2);
    const double xi = (p.northing - (north_ ? 0.0 : kFalseNorthingSouth)) / (kK0 * k.rect_radius);
    const double eta = (p.easting - kFalseEasting) / (kK0 * k.rect_radius);

    double xi_p = xi, eta_p = eta;
    for (int j = 1; j <= 6; ++j)
    {
        xi_p -= k.beta[j - 1] * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
        eta_p -= k.beta[j - 1] * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
    }
    const double chi = std::asin(std::sin(xi_p) / std::cosh(eta_p));
    const double tau_p = std::tan(chi);

    double tau = tau_p;
    for (int it = 0; it < 8; ++it)
    {
        const double sigma = std::sinh(e * std::atanh(e * tau / std::sqrt(1.0 + tau * tau)));
        const double tau_i = tau * std::sqrt(1.0 + sigma * sigma) - sigma * std::sqrt(1.0 + tau * tau);
        const double dtau = (tau_p - tau_i) / std::sqrt(1.0 + tau_i * tau_i) * (1.0 + (1.0 - wgs84::e2) * tau * tau) /
                            ((1.0 - wgs84::e2) * std::sqrt(1.0 + tau * tau));
        tau += dtau;
        if (std::abs(dtau) < 1e-14)
            break;
    }
    lat_deg = rad_to_deg(std::atan(tau));
    lon_deg = normalize_lon(central_meridian() + rad_to_deg(std::atan2(std::sinh(eta_p), std::cos(xi_p))));
}

} // namespace cosp
