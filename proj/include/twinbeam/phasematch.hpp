#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include <boost/math/tools/roots.hpp>

#include "errors.hpp"

namespace twinbeam {

inline constexpr double speed_of_light = 299792458.0;

inline double deg_to_rad(double d) noexcept
{
    return d * std::numbers::pi / 180;
}

//---------------------------------------------------------------------------//
/*!
 * Sellmeier-style principal index: n^2 = a + b / (l^2 - c) - d l^2, l in um.
 *
 * Defaults are the Eimerl et al. (1987) fit for beta-barium borate.
 */
struct SellmeierCoeffs
{
    double a = 0;
    double b = 0;
    double c = 0;
    double d = 0;

    // n^2 and its first two derivatives with respect to wavelength in um
    struct Eval
    {
        double n2;
        double dn2;
        double d2n2;
    };

    Eval eval(double lambda_um) const noexcept
    {
        double l2 = lambda_um * lambda_um;
        double den = l2 - c;
        double g = -b / (den * den) - d;
        return {a + b / den - d * l2,
                2 * lambda_um * g,
                2 * g + 8 * l2 * b / (den * den * den)};
    }

    friend bool operator==(SellmeierCoeffs const&, SellmeierCoeffs const&)
        = default;
};

inline SellmeierCoeffs bbo_ordinary() noexcept
{
    return {2.7359, 0.01878, 0.01822, 0.01354};
}
inline SellmeierCoeffs bbo_extraordinary() noexcept
{
    return {2.3753, 0.01224, 0.01667, 0.01516};
}

struct CrystalConfig
{
    double length = 4e-3;
    double theta_deg = 49.05;
    double phi_deg = 0;
    double lambda_p = 352e-9;
    double lambda_s = 704e-9;
    double lambda_i = 704e-9;
    bool degenerate = true;
    SellmeierCoeffs ordinary = bbo_ordinary();
    SellmeierCoeffs extraordinary = bbo_extraordinary();
    std::optional<double> walkoff;  //!< override for both e-waves (rad)
    bool paraxial = false;
};

inline void validate(CrystalConfig const& c)
{
    if (!(c.length > 0))
        throw ConfigError("crystal length must be positive");
    if (!(c.theta_deg > 0 && c.theta_deg < 90))
        throw ConfigError("cut angle theta must lie in (0, 90) degrees");
    if (!(c.lambda_p > 0) || !(c.lambda_s > 0) || !(c.lambda_i > 0))
        throw ConfigError("wavelengths must be positive");
    if (c.degenerate
        && (std::abs(c.lambda_s - 2 * c.lambda_p) > 1e-6 * c.lambda_s
            || std::abs(c.lambda_i - 2 * c.lambda_p) > 1e-6 * c.lambda_i))
    {
        throw ConfigError("degenerate mode requires lambda_s = lambda_i = 2 "
                          "lambda_p");
    }
    double inv = 1 / c.lambda_p - 1 / c.lambda_s - 1 / c.lambda_i;
    if (std::abs(inv) * c.lambda_p > 1e-6)
        throw ConfigError("wavelengths violate energy conservation");
}

enum class Wave
{
    pump,
    signal,
    idler
};

//! Polarization of each wave: signal ordinary, idler and pump extraordinary
inline bool is_extraordinary(Wave w) noexcept
{
    return w != Wave::signal;
}

//---------------------------------------------------------------------------//
// Refractive index and its wavelength derivatives
//---------------------------------------------------------------------------//
struct IndexEval
{
    double n;
    double dn;  //!< per um
    double d2n;  //!< per um^2
};

inline IndexEval
index_ordinary(SellmeierCoeffs const& o, double lambda_um)
{
    auto e = o.eval(lambda_um);
    if (!(e.n2 > 0))
        throw ConfigError("index model gives non-physical n <= 0");
    double n = std::sqrt(e.n2);
    return {n, e.dn2 / (2 * n), e.d2n2 / (2 * n) - e.dn2 * e.dn2 / (4 * n * e.n2)};
}

//! Extraordinary index at propagation angle theta from the optic axis
inline IndexEval index_extraordinary(SellmeierCoeffs const& o,
                                     SellmeierCoeffs const& e,
                                     double theta,
                                     double lambda_um)
{
    auto po = o.eval(lambda_um);
    auto pe = e.eval(lambda_um);
    if (!(po.n2 > 0) || !(pe.n2 > 0))
        throw ConfigError("index model gives non-physical n <= 0");
    double c2 = std::cos(theta) * std::cos(theta);
    double s2 = std::sin(theta) * std::sin(theta);
    double u = c2 / po.n2 + s2 / pe.n2;
    double du = -c2 * po.dn2 / (po.n2 * po.n2) - s2 * pe.dn2 / (pe.n2 * pe.n2);
    double d2u = c2
                     * (2 * po.dn2 * po.dn2 / (po.n2 * po.n2 * po.n2)
                        - po.d2n2 / (po.n2 * po.n2))
                 + s2
                       * (2 * pe.dn2 * pe.dn2 / (pe.n2 * pe.n2 * pe.n2)
                          - pe.d2n2 / (pe.n2 * pe.n2));
    double n = 1 / std::sqrt(u);
    double dn = -0.5 * du / (u * std::sqrt(u));
    double d2n = 0.75 * du * du / (u * u * std::sqrt(u))
                 - 0.5 * d2u / (u * std::sqrt(u));
    return {n, dn, d2n};
}

inline double wavelength_of(CrystalConfig const& c, Wave w) noexcept
{
    switch (w)
    {
        case Wave::pump:
            return c.lambda_p;
        case Wave::signal:
            return c.lambda_s;
        case Wave::idler:
            return c.lambda_i;
    }
    return 0;
}

inline IndexEval
wave_index(CrystalConfig const& c, Wave w, double lambda, double theta)
{
    double lum = lambda * 1e6;
    if (is_extraordinary(w))
        return index_extraordinary(c.ordinary, c.extraordinary, theta, lum);
    return index_ordinary(c.ordinary, lum);
}

//! Magnitude of the Poynting walk-off angle of an e-wave
inline double walkoff_angle(CrystalConfig const& c, double lambda, double theta)
{
    double lum = lambda * 1e6;
    double no2 = c.ordinary.eval(lum).n2;
    double ne2 = c.extraordinary.eval(lum).n2;
    double n = index_extraordinary(c.ordinary, c.extraordinary, theta, lum).n;
    return std::abs(
        std::atan(0.5 * n * n * (1 / no2 - 1 / ne2) * std::sin(2 * theta)));
}

//---------------------------------------------------------------------------//
// Dispersion coefficients
//---------------------------------------------------------------------------//
struct WaveDispersion
{
    double k0 = 0;  //!< rad/m
    double k1 = 0;  //!< s/m
    double k2 = 0;  //!< s^2/m
    double walkoff = 0;  //!< rad, transverse drift along +x
    double lambda = 0;  //!< vacuum wavelength (m)

    //! Longitudinal wavenumber without walk-off; nullopt when evanescent
    std::optional<double>
    kz(double q2, double omega, bool paraxial) const noexcept
    {
        double k = k0 + k1 * omega + 0.5 * k2 * omega * omega;
        if (paraxial)
            return k - q2 / (2 * k);
        if (q2 >= k * k)
            return std::nullopt;
        return std::sqrt(k * k - q2);
    }
};

struct DispersionSet
{
    WaveDispersion pump;
    WaveDispersion signal;
    WaveDispersion idler;
    bool paraxial = false;

    //! Collinear mismatch k_p - k_s - k_i at the carriers
    double delta0() const noexcept { return pump.k0 - signal.k0 - idler.k0; }
    //! Reference group delay of the moving time frame
    double k1_ref() const noexcept { return 0.5 * (signal.k1 + idler.k1); }

    WaveDispersion const& operator[](Wave w) const noexcept
    {
        return w == Wave::pump ? pump : (w == Wave::signal ? signal : idler);
    }
};

inline WaveDispersion
wave_dispersion(CrystalConfig const& c, Wave w, double theta)
{
    double lambda = wavelength_of(c, w);
    auto n = wave_index(c, w, lambda, theta);
    // Derivatives with respect to wavelength in m
    double dn = n.dn * 1e6;
    double d2n = n.d2n * 1e12;
    WaveDispersion d;
    d.lambda = lambda;
    d.k0 = 2 * std::numbers::pi * n.n / lambda;
    d.k1 = (n.n - lambda * dn) / speed_of_light;
    d.k2 = lambda * lambda * lambda * d2n
           / (2 * std::numbers::pi * speed_of_light * speed_of_light);
    if (is_extraordinary(w))
        d.walkoff = c.walkoff ? *c.walkoff : walkoff_angle(c, lambda, theta);
    return d;
}

inline DispersionSet dispersion_coeffs(CrystalConfig const& c)
{
    validate(c);
    double theta = deg_to_rad(c.theta_deg);
    DispersionSet ds;
    ds.pump = wave_dispersion(c, Wave::pump, theta);
    ds.signal = wave_dispersion(c, Wave::signal, theta);
    ds.idler = wave_dispersion(c, Wave::idler, theta);
    ds.paraxial = c.paraxial;
    return ds;
}

//! Cut angle (deg) giving collinear phase matching at the carriers
inline double matching_angle(CrystalConfig const& c)
{
    auto mismatch = [&c](double theta_deg) {
        double th = deg_to_rad(theta_deg);
        double kp = wave_index(c, Wave::pump, c.lambda_p, th).n / c.lambda_p;
        double ks = wave_index(c, Wave::signal, c.lambda_s, th).n / c.lambda_s;
        double ki = wave_index(c, Wave::idler, c.lambda_i, th).n / c.lambda_i;
        return kp - ks - ki;
    };
    double lo = 1, hi = 89;
    if (mismatch(lo) * mismatch(hi) > 0)
        throw ConfigError("no collinear phase-matching angle for this crystal");
    std::uintmax_t iters = 200;
    auto r = boost::math::tools::toms748_solve(
        mismatch, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
    return 0.5 * (r.first + r.second);
}

//---------------------------------------------------------------------------//
/*!
 * Longitudinal mismatch for signal at (q, Omega) and idler at (-q, -Omega).
 *
 * nullopt marks evanescent components, which take no part in the gain.
 */
inline std::optional<double>
phase_mismatch(double qx, double qy, double omega, DispersionSet const& d)
{
    double q2 = qx * qx + qy * qy;
    auto ks = d.signal.kz(q2, omega, d.paraxial);
    auto ki = d.idler.kz(q2, -omega, d.paraxial);
    if (!ks || !ki)
        return std::nullopt;
    // Idler walk-off term evaluated at -qx
    return d.pump.k0 - *ks - *ki - d.idler.walkoff * qx;
}

//! Mismatch averaged over the (q, Omega) and (-q, -Omega) pairings
inline std::optional<double> phase_mismatch_symmetrized(double qx,
                                                        double qy,
                                                        double omega,
                                                        DispersionSet const& d)
{
    auto a = phase_mismatch(qx, qy, omega, d);
    auto b = phase_mismatch(-qx, -qy, -omega, d);
    if (!a || !b)
        return std::nullopt;
    return 0.5 * (*a + *b);
}

//---------------------------------------------------------------------------//
// Far-field ring geometry
//---------------------------------------------------------------------------//
struct RingDescriptor
{
    double signal_center_x = 0;  //!< m in the detector plane
    double idler_center_x = 0;
    double center_y = 0;
    double radius = 0;  //!< m; zero when no real ring exists
    double width = 0;  //!< m, radial FWHM over the band
    double angular_radius = 0;  //!< rad
    double angular_width = 0;  //!< rad
    bool exists = false;
};

struct RingOptions
{
    double detuning = 0;  //!< Omega of the band center (rad/s)
    int band_samples = 201;
};

/*!
 * Paraxial Delta = 0 locus for a wavelength band around the carrier.
 *
 * The signal ring is centered on +x (the idler walk-off side), the idler ring
 * on -x. The width combines the spread of radii across the band with the
 * intrinsic sinc^2 acceptance of a crystal of the given length.
 */
inline RingDescriptor ring_geometry(DispersionSet const& d,
                                    double lens_f,
                                    double bandwidth,
                                    double length,
                                    RingOptions const& opts = {})
{
    if (!(lens_f > 0))
        throw ConfigError("lens focal length must be positive");
    double h = 0.5 / d.signal.k0 + 0.5 / d.idler.k0;
    double rho = d.idler.walkoff;
    double qc = rho / (2 * h);
    double lambda = d.signal.lambda;
    double scale = lens_f * lambda / (2 * std::numbers::pi);

    auto radius_at = [&](double omega) -> std::optional<double> {
        double ks = d.signal.k0 + d.signal.k1 * omega
                    + 0.5 * d.signal.k2 * omega * omega;
        double ki = d.idler.k0 - d.idler.k1 * omega
                    + 0.5 * d.idler.k2 * omega * omega;
        double delta0 = d.pump.k0 - ks - ki;
        double r2 = qc * qc - delta0 / h;
        if (r2 < 0)
            return std::nullopt;
        return std::sqrt(r2);
    };

    double omega_c = 2 * std::numbers::pi * speed_of_light / lambda;
    double half_band = 0.5 * bandwidth;
    double rmin = 0, rmax = 0;
    bool any = false;
    int ns = bandwidth > 0 ? std::max(opts.band_samples, 2) : 1;
    for (int i = 0; i < ns; ++i)
    {
        double dl = ns == 1 ? 0 : -half_band + bandwidth * i / (ns - 1);
        double lam = 2 * std::numbers::pi * speed_of_light
                         / (omega_c + opts.detuning)
                     + dl;
        double omega = 2 * std::numbers::pi * speed_of_light / lam - omega_c;
        auto r = radius_at(omega);
        if (!r)
            continue;
        rmin = any ? std::min(rmin, *r) : *r;
        rmax = any ? std::max(rmax, *r) : *r;
        any = true;
    }

    RingDescriptor ring;
    ring.signal_center_x = qc * scale;
    ring.idler_center_x = -qc * scale;
    if (!any)
        return ring;
    auto rc = radius_at(opts.detuning);
    double r = rc ? *rc : 0.5 * (rmin + rmax);
    // sinc^2 FWHM in Delta is 2 * 2.783 / L; dDelta/dr = 2 h r
    double intrinsic = r > 0 ? 2 * 2.783 / (length * 2 * h * r) : 0;
    ring.exists = true;
    ring.radius = r * scale;
    ring.width = (rmax - rmin + intrinsic) * scale;
    ring.angular_radius = ring.radius / lens_f;
    ring.angular_width = ring.width / lens_f;
    return ring;
}

}  // namespace twinbeam
