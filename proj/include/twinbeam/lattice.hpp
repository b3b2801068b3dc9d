#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <new>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "errors.hpp"
#include "rng.hpp"

namespace twinbeam {

using complex_t = std::complex<double>;

//---------------------------------------------------------------------------//
// Allocation aligned for FFTW's SIMD kernels
//---------------------------------------------------------------------------//
template<class T>
struct FftwAllocator
{
    using value_type = T;

    FftwAllocator() noexcept = default;
    template<class U>
    FftwAllocator(FftwAllocator<U> const&) noexcept
    {
    }

    T* allocate(std::size_t n)
    {
        void* p = fftw_malloc(n * sizeof(T));
        if (!p)
            throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { fftw_free(p); }

    template<class U>
    bool operator==(FftwAllocator<U> const&) const noexcept
    {
        return true;
    }
};

template<class T>
using AlignedVector = std::vector<T, FftwAllocator<T>>;

//---------------------------------------------------------------------------//
/*!
 * Lattice geometry for the (x, y, t) field grid and the propagation axis.
 *
 * Sample n along x sits at (n - nx/2) * dx; along t at (n - nt/2) * dt +
 * t_center.  Fourier index k maps to q = 2 pi f_k / (n dx) and
 * Omega = -2 pi f_k / (nt dt) with f_k the signed FFT frequency.
 */
struct GridSpec
{
    int nx = 128;
    int ny = 128;
    int nt = 16;
    double dx = 27.5e-6;
    double dy = 27.5e-6;
    double dt = 0.25e-12;
    int nz = 64;
    double dz = 0;  // zero: derived from the crystal length
    double t_center = 0;

    std::size_t cells() const noexcept
    {
        return static_cast<std::size_t>(nx) * ny * nt;
    }
    std::size_t index(int t, int y, int x) const noexcept
    {
        return (static_cast<std::size_t>(t) * ny + y) * nx + x;
    }

    double dqx() const noexcept { return 2 * std::numbers::pi / (nx * dx); }
    double dqy() const noexcept { return 2 * std::numbers::pi / (ny * dy); }
    double domega() const noexcept
    {
        return 2 * std::numbers::pi / (nt * dt);
    }
    double nyquist_qx() const noexcept { return std::numbers::pi / dx; }
    double nyquist_qy() const noexcept { return std::numbers::pi / dy; }

    double x_at(int i) const noexcept { return (i - nx / 2) * dx; }
    double y_at(int i) const noexcept { return (i - ny / 2) * dy; }
    double t_at(int i) const noexcept { return (i - nt / 2) * dt + t_center; }

    double qx_at(int k) const noexcept { return signed_freq(k, nx) * dqx(); }
    double qy_at(int k) const noexcept { return signed_freq(k, ny) * dqy(); }
    double omega_at(int k) const noexcept
    {
        return -signed_freq(k, nt) * domega();
    }

    static int signed_freq(int k, int n) noexcept
    {
        return k < (n + 1) / 2 ? k : k - n;
    }

    friend bool operator==(GridSpec const&, GridSpec const&) = default;
};

inline bool is_power_of_two(int n) noexcept
{
    return n > 0 && (n & (n - 1)) == 0;
}

/*!
 * Validate a grid and derive dz.
 *
 * Zero pump_fwhm or crystal_length skips the checks that need them.
 */
inline GridSpec
make_grid(GridSpec g, double pump_fwhm = 0, double crystal_length = 0)
{
    auto fail = [](std::string const& msg) { throw ConfigError(msg); };
    if (g.nx <= 0 || g.ny <= 0 || g.nt <= 0 || g.nz <= 0)
        fail("grid counts must be strictly positive");
    if (!(g.dx > 0) || !(g.dy > 0) || !(g.dt > 0))
        fail("grid pitches must be strictly positive");
    if (!is_power_of_two(g.nx))
        fail("nx must be a power of two");
    if (!is_power_of_two(g.ny))
        fail("ny must be a power of two");
    if (!is_power_of_two(g.nt))
        fail("nt must be a power of two");
    if (crystal_length > 0)
    {
        if (g.dz <= 0)
            g.dz = crystal_length / g.nz;
        if (std::abs(g.nz * g.dz - crystal_length) > 1e-9 * crystal_length)
            fail("nz * dz must equal the crystal length");
    }
    else if (g.dz < 0)
    {
        fail("dz must be positive");
    }
    if (pump_fwhm > 0)
    {
        double span = std::min(g.nx * g.dx, g.ny * g.dy);
        if (span < 4 * pump_fwhm)
        {
            std::ostringstream os;
            os << "transverse span too small: " << span * 1e3
               << " mm < 4 x pump FWHM (" << 4 * pump_fwhm * 1e3 << " mm)";
            fail(os.str());
        }
    }
    return g;
}

enum class Polarization
{
    ordinary,
    extraordinary
};

//---------------------------------------------------------------------------//
/*!
 * Complex envelope samples for one polarization, in sqrt(photons per cell).
 *
 * Storage order is (t, y, x) with x fastest.
 */
class ComplexField
{
  public:
    using Storage = AlignedVector<complex_t>;

    ComplexField(GridSpec const& grid, Polarization pol)
        : grid_(grid), pol_(pol), data_(grid.cells(), complex_t{0, 0})
    {
    }

    GridSpec const& grid() const noexcept { return grid_; }
    Polarization pol() const noexcept { return pol_; }

    Storage& data() noexcept { return data_; }
    Storage const& data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }

    complex_t& operator()(int t, int y, int x) noexcept
    {
        return data_[grid_.index(t, y, x)];
    }
    complex_t const& operator()(int t, int y, int x) const noexcept
    {
        return data_[grid_.index(t, y, x)];
    }

    // Symmetric-ordered photon estimate sum |a|^2
    double total_intensity() const noexcept
    {
        double s = 0;
        for (auto const& a : data_)
            s += std::norm(a);
        return s;
    }

    bool all_finite() const noexcept
    {
        for (auto const& a : data_)
        {
            if (!std::isfinite(a.real()) || !std::isfinite(a.imag()))
                return false;
        }
        return true;
    }

  private:
    GridSpec grid_;
    Polarization pol_;
    Storage data_;
};

//---------------------------------------------------------------------------//
// Vacuum sampling
//---------------------------------------------------------------------------//
inline void
fill_vacuum(ComplexField& f, ShotSeed seed, std::uint32_t stream_id)
{
    StreamRng rng(seed, stream_id);
    auto& d = f.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = rng.complex_normal(i, 0.5);
}

//! Independent Wigner vacuum inputs: <|a|^2> = 1/2 per cell
inline std::pair<ComplexField, ComplexField>
sample_vacuum(GridSpec const& grid, ShotSeed seed)
{
    std::pair<ComplexField, ComplexField> result{
        ComplexField(grid, Polarization::ordinary),
        ComplexField(grid, Polarization::extraordinary)};
    fill_vacuum(result.first, seed, stream::vacuum_signal);
    fill_vacuum(result.second, seed, stream::vacuum_idler);
    return result;
}

//---------------------------------------------------------------------------//
// FFT plumbing
//---------------------------------------------------------------------------//
enum class FftAxes
{
    transverse,  //!< 2D over (x, y), batched over t
    full  //!< 3D over (x, y, t)
};

namespace detail {
//! The FFTW planner is not thread safe
inline std::mutex& planner_mutex()
{
    static std::mutex m;
    return m;
}

class PlanCache
{
  public:
    static PlanCache& instance()
    {
        static PlanCache cache;
        return cache;
    }

    // Plans are created with FFTW_ESTIMATE so results never depend on timing
    fftw_plan get(int nx, int ny, int nt, FftAxes axes, int sign)
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        auto key = std::make_tuple(nx, ny, nt, static_cast<int>(axes), sign);
        auto it = plans_.find(key);
        if (it != plans_.end())
            return it->second;

        std::size_t n = static_cast<std::size_t>(nx) * ny * nt;
        AlignedVector<complex_t> in(n), out(n);
        auto* pin = reinterpret_cast<fftw_complex*>(in.data());
        auto* pout = reinterpret_cast<fftw_complex*>(out.data());
        fftw_plan p;
        if (axes == FftAxes::full)
        {
            p = fftw_plan_dft_3d(nt, ny, nx, pin, pout, sign, FFTW_ESTIMATE);
        }
        else
        {
            int dims[2] = {ny, nx};
            int dist = nx * ny;
            p = fftw_plan_many_dft(2, dims, nt, pin, nullptr, 1, dist, pout,
                                   nullptr, 1, dist, sign, FFTW_ESTIMATE);
        }
        plans_.emplace(key, p);
        return p;
    }

  private:
    PlanCache() = default;
    ~PlanCache()
    {
        for (auto& kv : plans_)
            fftw_destroy_plan(kv.second);
    }

    std::map<std::tuple<int, int, int, int, int>, fftw_plan> plans_;
};
}  // namespace detail

//! Unnormalized transform of aligned storage (in-place allowed)
inline void fft_execute(GridSpec const& g,
                        FftAxes axes,
                        int sign,
                        complex_t const* in,
                        complex_t* out)
{
    fftw_plan p = detail::PlanCache::instance().get(g.nx, g.ny, g.nt, axes, sign);
    fftw_execute_dft(p,
                     reinterpret_cast<fftw_complex*>(const_cast<complex_t*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
}

inline double fft_norm(GridSpec const& g, FftAxes axes) noexcept
{
    double n = static_cast<double>(g.nx) * g.ny;
    if (axes == FftAxes::full)
        n *= g.nt;
    return 1 / std::sqrt(n);
}

namespace detail {
inline ComplexField fft_unitary(ComplexField const& f, FftAxes axes, int sign)
{
    ComplexField out(f.grid(), f.pol());
    fft_execute(f.grid(), axes, sign, f.data().data(), out.data().data());
    double s = fft_norm(f.grid(), axes);
    for (auto& a : out.data())
        a *= s;
    return out;
}
}  // namespace detail

inline ComplexField
fft_forward(ComplexField const& f, FftAxes axes = FftAxes::full)
{
    return detail::fft_unitary(f, axes, FFTW_FORWARD);
}

inline ComplexField
fft_backward(ComplexField const& f, FftAxes axes = FftAxes::full)
{
    return detail::fft_unitary(f, axes, FFTW_BACKWARD);
}

}  // namespace twinbeam
