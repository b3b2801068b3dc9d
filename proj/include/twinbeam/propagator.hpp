#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <vector>

#include "digest.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "phasematch.hpp"

namespace twinbeam {

struct PumpConfig
{
    double fwhm = 0.85e-3;  //!< intensity FWHM (m)
    double duration = 1.5e-12;  //!< intensity FWHM (s)
    double gain = 1;  //!< g = sigma * A_peak * L
    bool plane_wave = false;
};

inline void validate(PumpConfig const& p)
{
    if (!(p.gain >= 0) || !std::isfinite(p.gain))
        throw ConfigError("pump gain must be finite and non-negative");
    if (!p.plane_wave && (!(p.fwhm > 0) || !(p.duration > 0)))
        throw ConfigError("pump FWHM and duration must be positive");
}

inline std::uint64_t digest(PumpConfig const& p)
{
    Fnv1a h;
    h.add(p.fwhm).add(p.duration).add(p.gain).add(p.plane_wave);
    return h.value();
}

//---------------------------------------------------------------------------//
// Plane-wave two-mode squeezer
//---------------------------------------------------------------------------//
struct Bogoliubov
{
    complex_t u;
    complex_t v;
};

/*!
 * Uniform-pump solution a_s(L) = U a_s(0) + V a_i(0)^* for coupling g/L and
 * longitudinal mismatch delta.
 */
inline Bogoliubov plane_wave_gain(double g, double delta, double length)
{
    using namespace std::complex_literals;
    double kappa = g / length;
    complex_t gamma = std::sqrt(complex_t(kappa * kappa - 0.25 * delta * delta));
    complex_t gl = gamma * length;
    complex_t ch = std::cosh(gl);
    // sinh(gL)/gamma, continuous through gamma = 0
    complex_t shc = std::abs(gl) < 1e-4
                        ? length * (1.0 + gl * gl / 6.0)
                        : std::sinh(gl) / gamma;
    complex_t ph = std::exp(0.5i * delta * length);
    return {ph * (ch - 0.5i * delta * shc), ph * kappa * shc};
}

//---------------------------------------------------------------------------//
/*!
 * Classical Gaussian pump envelope, normalized to unit peak at the input face.
 *
 * Time is measured in the frame moving with the mean signal/idler group
 * delay; the pump peak enters at t = 0 and drifts by (k1_p - k1_ref) z.
 */
class PumpField
{
  public:
    PumpField(PumpConfig const& pump, DispersionSet const& disp)
        : plane_(pump.plane_wave)
        , w_(pump.fwhm / (2 * std::sqrt(std::log(2.0))))
        , t0_(pump.duration / (2 * std::sqrt(std::log(2.0))))
        , k0_(disp.pump.k0)
        , k2_(disp.pump.k2)
        , rho_(disp.pump.walkoff)
        , drift_(disp.pump.k1 - disp.k1_ref())
    {
    }

    struct Slice
    {
        double z;
        complex_t wz2;  //!< W^2 + i z / k
        complex_t tz2;  //!< T0^2 - i k2 z
        double xc;
        double tc;
    };

    Slice at(double z) const noexcept
    {
        using namespace std::complex_literals;
        return {z, w_ * w_ + 1i * z / k0_, t0_ * t0_ - 1i * k2_ * z, rho_ * z,
                drift_ * z};
    }

    complex_t x_factor(Slice const& s, double x) const noexcept
    {
        if (plane_)
            return 1;
        double d = x - s.xc;
        return w_ / std::sqrt(s.wz2) * std::exp(-d * d / (2.0 * s.wz2));
    }
    complex_t y_factor(Slice const& s, double y) const noexcept
    {
        if (plane_)
            return 1;
        return w_ / std::sqrt(s.wz2) * std::exp(-y * y / (2.0 * s.wz2));
    }
    complex_t t_factor(Slice const& s, double t) const noexcept
    {
        if (plane_)
            return 1;
        double d = t - s.tc;
        return t0_ / std::sqrt(s.tz2) * std::exp(-d * d / (2.0 * s.tz2));
    }

    complex_t operator()(double x, double y, double t, double z) const noexcept
    {
        auto s = this->at(z);
        return this->x_factor(s, x) * this->y_factor(s, y)
               * this->t_factor(s, t);
    }

  private:
    bool plane_;
    double w_;
    double t0_;
    double k0_;
    double k2_;
    double rho_;
    double drift_;
};

inline PumpField pump_field(PumpConfig const& pump, DispersionSet const& disp)
{
    validate(pump);
    return PumpField(pump, disp);
}

//! Lattice time origin that centers the pump trajectory in the window
inline double centered_time_origin(DispersionSet const& disp, double length)
{
    return 0.5 * (disp.pump.k1 - disp.k1_ref()) * length;
}

//---------------------------------------------------------------------------//
struct PropagatorOptions
{
    int guard_cells = 6;  //!< absorbing band width on each transverse edge
    double guard_absorption = 0.3;  //!< per-step loss at the outermost cell
    int check_every = 8;
};

struct ShotResult
{
    ComplexField signal_out;
    ComplexField idler_out;
    ShotSeed seed;
    double gain = 0;
    std::uint64_t pump_digest = 0;
};

/*!
 * Split-step integrator for the coupled signal/idler envelopes.
 *
 * Each step applies half of the linear Fourier-domain phase, the exact local
 * Bogoliubov rotation with the pump at the step midpoint, and the second
 * half of the linear phase. Consecutive half steps are fused.
 */
class Propagator
{
  public:
    Propagator(GridSpec const& grid,
               CrystalConfig const& crystal,
               PumpConfig const& pump,
               PropagatorOptions const& opts = {})
        : crystal_(crystal), pump_(pump), opts_(opts)
    {
        validate(crystal);
        validate(pump);
        disp_ = dispersion_coeffs(crystal);
        grid_ = make_grid(grid, pump.plane_wave ? 0 : pump.fwhm,
                          crystal.length);
        if (pump.gain * grid_.dz / crystal.length >= 0.1)
        {
            std::ostringstream os;
            os << "per-step nonlinear phase g*dz/L = "
               << pump.gain * grid_.dz / crystal.length
               << " must be below 0.1; increase nz";
            throw ConfigError(os.str());
        }
        if (opts_.guard_cells < 0
            || (!pump.plane_wave
                && 2 * opts_.guard_cells >= std::min(grid_.nx, grid_.ny)))
        {
            throw ConfigError("guard band wider than the lattice");
        }
        this->build_linear();
        this->build_coupling();
        this->build_guard();
    }

    GridSpec const& grid() const noexcept { return grid_; }
    DispersionSet const& dispersion() const noexcept { return disp_; }
    PumpConfig const& pump() const noexcept { return pump_; }

    ShotResult run(ShotSeed seed) const
    {
        auto [as, ai] = sample_vacuum(grid_, seed);
        this->evolve(as, ai, seed);
        return {std::move(as), std::move(ai), seed, pump_.gain,
                digest(pump_)};
    }

    //! Propagate given input fields in place
    void evolve(ComplexField& as, ComplexField& ai, ShotSeed seed) const
    {
        auto* s = as.data().data();
        auto* i = ai.data().data();
        int nz = grid_.nz;

        this->fft(s, FFTW_FORWARD);
        this->fft(i, FFTW_FORWARD);
        multiply(s, half_s_);
        multiply(i, half_i_);
        for (int step = 0; step < nz; ++step)
        {
            this->fft(s, FFTW_BACKWARD);
            this->fft(i, FFTW_BACKWARD);
            this->nonlinear(s, i, step);
            this->guard(as, ai, seed, step);
            if ((opts_.check_every > 0 && (step + 1) % opts_.check_every == 0)
                || step + 1 == nz)
            {
                if (!as.all_finite() || !ai.all_finite())
                {
                    std::ostringstream os;
                    os << "field diverged at propagation step " << step;
                    throw NumericalDivergence(os.str(), step);
                }
            }
            this->fft(s, FFTW_FORWARD);
            this->fft(i, FFTW_FORWARD);
            bool last = step + 1 == nz;
            multiply(s, last ? half_s_ : full_s_);
            multiply(i, last ? half_i_ : full_i_);
        }
        this->fft(s, FFTW_BACKWARD);
        this->fft(i, FFTW_BACKWARD);
    }

  private:
    using Storage = AlignedVector<complex_t>;

    GridSpec grid_;
    CrystalConfig crystal_;
    PumpConfig pump_;
    PropagatorOptions opts_;
    DispersionSet disp_;

    Storage half_s_, half_i_, full_s_, full_i_;
    // Separable coupling kappa * A_p * exp(i delta0 z) per step
    std::vector<complex_t> cx_, cy_, ct_;
    std::vector<double> guard_t_;  //!< intensity transmission per cell (x, y)
    std::vector<int> guard_idx_;

    void fft(complex_t* p, int sign) const
    {
        fft_execute(grid_, FftAxes::full, sign, p, p);
    }

    static void multiply(complex_t* p, Storage const& h) noexcept
    {
        std::size_t n = h.size();
        for (std::size_t k = 0; k < n; ++k)
            p[k] *= h[k];
    }

    void build_linear()
    {
        using namespace std::complex_literals;
        std::size_t n = grid_.cells();
        half_s_.resize(n);
        half_i_.resize(n);
        full_s_.resize(n);
        full_i_.resize(n);
        double k1r = disp_.k1_ref();
        double norm = 1.0 / static_cast<double>(n);
        double dz = grid_.dz;
        bool par = disp_.paraxial;
        for (int t = 0; t < grid_.nt; ++t)
        {
            double om = grid_.omega_at(t);
            for (int y = 0; y < grid_.ny; ++y)
            {
                double qy = grid_.qy_at(y);
                for (int x = 0; x < grid_.nx; ++x)
                {
                    double qx = grid_.qx_at(x);
                    double q2 = qx * qx + qy * qy;
                    auto ks = disp_.signal.kz(q2, om, par);
                    auto ki = disp_.idler.kz(q2, om, par);
                    if (!ks || !ki)
                    {
                        throw ConfigError("lattice reaches evanescent "
                                          "transverse frequencies; increase "
                                          "dx");
                    }
                    double ds = *ks - disp_.signal.k0 - k1r * om
                                - disp_.signal.walkoff * qx;
                    double di = *ki - disp_.idler.k0 - k1r * om
                                - disp_.idler.walkoff * qx;
                    auto idx = grid_.index(t, y, x);
                    half_s_[idx] = std::exp(0.5i * ds * dz);
                    half_i_[idx] = std::exp(0.5i * di * dz);
                    full_s_[idx] = half_s_[idx] * half_s_[idx] * norm;
                    full_i_[idx] = half_i_[idx] * half_i_[idx] * norm;
                    half_s_[idx] *= norm;
                    half_i_[idx] *= norm;
                }
            }
        }
    }

    void build_coupling()
    {
        using namespace std::complex_literals;
        int nz = grid_.nz;
        double kappa = pump_.gain / crystal_.length;
        double d0 = disp_.delta0();
        PumpField pf(pump_, disp_);
        cx_.resize(static_cast<std::size_t>(nz) * grid_.nx);
        cy_.resize(static_cast<std::size_t>(nz) * grid_.ny);
        ct_.resize(static_cast<std::size_t>(nz) * grid_.nt);
        for (int s = 0; s < nz; ++s)
        {
            double z = (s + 0.5) * grid_.dz;
            auto sl = pf.at(z);
            for (int x = 0; x < grid_.nx; ++x)
                cx_[s * grid_.nx + x] = pf.x_factor(sl, grid_.x_at(x));
            for (int y = 0; y < grid_.ny; ++y)
                cy_[s * grid_.ny + y] = pf.y_factor(sl, grid_.y_at(y));
            complex_t carrier = kappa * std::exp(1i * d0 * z);
            for (int t = 0; t < grid_.nt; ++t)
                ct_[s * grid_.nt + t] = carrier
                                        * pf.t_factor(sl, grid_.t_at(t));
        }
    }

    void nonlinear(complex_t* as, complex_t* ai, int step) const noexcept
    {
        double dz = grid_.dz;
        int nx = grid_.nx, ny = grid_.ny, nt = grid_.nt;
        complex_t const* cx = cx_.data() + static_cast<std::size_t>(step) * nx;
        complex_t const* cy = cy_.data() + static_cast<std::size_t>(step) * ny;
        complex_t const* ct = ct_.data() + static_cast<std::size_t>(step) * nt;
        for (int t = 0; t < nt; ++t)
        {
            for (int y = 0; y < ny; ++y)
            {
                complex_t cty = ct[t] * cy[y];
                std::size_t row = grid_.index(t, y, 0);
                for (int x = 0; x < nx; ++x)
                {
                    complex_t c = cty * cx[x] * dz;
                    double r = std::abs(c);
                    complex_t& s = as[row + x];
                    complex_t& i = ai[row + x];
                    complex_t s0 = s, i0 = i;
                    if (r < 1e-9)
                    {
                        s = s0 + c * std::conj(i0);
                        i = i0 + c * std::conj(s0);
                        continue;
                    }
                    double e = std::exp(r);
                    double ch = 0.5 * (e + 1 / e);
                    complex_t sh = (0.5 * (e - 1 / e) / r) * c;
                    s = ch * s0 + sh * std::conj(i0);
                    i = ch * i0 + sh * std::conj(s0);
                }
            }
        }
    }

    // A uniform pump fills the periodic lattice, so it gets no guard band
    void build_guard()
    {
        int g = opts_.guard_cells;
        if (g == 0 || opts_.guard_absorption <= 0 || pump_.plane_wave)
            return;
        auto edge = [g](int i, int n) {
            int d = std::min(i, n - 1 - i);  // distance from the edge
            if (d >= g)
                return 0.0;
            double f = static_cast<double>(g - d) / g;
            return f * f;
        };
        for (int y = 0; y < grid_.ny; ++y)
        {
            for (int x = 0; x < grid_.nx; ++x)
            {
                double a = std::max(edge(x, grid_.nx), edge(y, grid_.ny));
                if (a <= 0)
                    continue;
                guard_idx_.push_back(y * grid_.nx + x);
                guard_t_.push_back(1 - opts_.guard_absorption * a);
            }
        }
    }

    // Absorbing edges; the removed amplitude is replaced by vacuum
    void guard(ComplexField& as,
               ComplexField& ai,
               ShotSeed seed,
               int step) const noexcept
    {
        if (guard_idx_.empty())
            return;
        std::size_t plane = static_cast<std::size_t>(grid_.nx) * grid_.ny;
        std::size_t per_t = guard_idx_.size();
        for (int f = 0; f < 2; ++f)
        {
            StreamRng rng(seed,
                          stream::guard_base
                              + static_cast<std::uint32_t>(2 * step + f));
            auto* d = (f == 0 ? as : ai).data().data();
            for (int t = 0; t < grid_.nt; ++t)
            {
                for (std::size_t k = 0; k < per_t; ++k)
                {
                    double tr = guard_t_[k];
                    auto& a = d[t * plane + guard_idx_[k]];
                    a = std::sqrt(tr) * a
                        + std::sqrt(1 - tr)
                              * rng.complex_normal(t * per_t + k, 0.5);
                }
            }
        }
    }
};

//! Single-shot convenience wrapper
inline ShotResult propagate_shot(GridSpec const& grid,
                                 CrystalConfig const& crystal,
                                 PumpConfig const& pump,
                                 ShotSeed seed,
                                 PropagatorOptions const& opts = {})
{
    return Propagator(grid, crystal, pump, opts).run(seed);
}

}  // namespace twinbeam
