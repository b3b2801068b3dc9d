#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "lattice.hpp"
#include "rng.hpp"

namespace twinbeam {

struct DetectorConfig
{
    double lens_f = 0.1;
    double wavelength = 704e-9;
    double pixel_pitch = 20e-6;
    int region_width = 40;  //!< pixels along x (walk-off plane)
    int region_height = 100;  //!< pixels along y
    int region_offset_x = 0;  //!< signal box center relative to the axis
    int region_offset_y = 0;
    double eta = 0.75;
    double sigma_b = 7;  //!< background std (pe); zero disables
    bool axis_on_pixel_corner = true;
    std::optional<double> center_x;  //!< declared symmetry center override
    std::optional<double> center_y;
};

inline void validate(DetectorConfig const& d)
{
    if (!(d.eta >= 0 && d.eta <= 1))
        throw ConfigError("detector eta must lie in [0, 1]");
    if (!(d.sigma_b >= 0))
        throw ConfigError("background sigma_b must be non-negative");
    if (!(d.lens_f > 0) || !(d.pixel_pitch > 0) || !(d.wavelength > 0))
        throw ConfigError("lens focal length, pixel pitch and wavelength "
                          "must be positive");
    if (d.region_width < 1 || d.region_height < 1)
        throw ConfigError("detector region must be at least 1x1 pixels");
}

enum class Region
{
    signal,
    idler
};

inline char const* to_string(Region r) noexcept
{
    return r == Region::signal ? "signal" : "idler";
}

struct FrameMeta
{
    Region region = Region::signal;
    ShotSeed seed;
    double gain = 0;
    double eta = 1;
    int binning = 1;
    bool background = false;
    double sigma_b = 0;  //!< per (binned) pixel, pe
    double pixel_pitch = 20e-6;  //!< m, after binning
    double center_x = 0;  //!< symmetry center, frame pixel coordinates
    double center_y = 0;
    //! Wigner cells per pixel; sets the symmetric-ordering variance m/4
    double wigner_modes = 0;
    int dropped_cols = 0;
    int dropped_rows = 0;

    friend bool operator==(FrameMeta const&, FrameMeta const&) = default;
};

//! Photoelectron values for one region, row-major with x fastest
class DetectorFrame
{
  public:
    DetectorFrame() = default;
    DetectorFrame(int width, int height, FrameMeta meta = {})
        : width_(width)
        , height_(height)
        , data_(static_cast<std::size_t>(width) * height, 0.0)
        , meta_(meta)
    {
        if (width < 1 || height < 1)
            throw ConfigError("frame dimensions must be positive");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(int x, int y) noexcept
    {
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }
    double operator()(int x, int y) const noexcept
    {
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }

    std::vector<double>& data() noexcept { return data_; }
    std::vector<double> const& data() const noexcept { return data_; }
    FrameMeta& meta() noexcept { return meta_; }
    FrameMeta const& meta() const noexcept { return meta_; }

    double sum() const noexcept
    {
        double s = 0;
        for (double v : data_)
            s += v;
        return s;
    }

    friend bool operator==(DetectorFrame const&, DetectorFrame const&)
        = default;

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
    FrameMeta meta_;
};

struct FramePair
{
    DetectorFrame signal;
    DetectorFrame idler;

    friend bool operator==(FramePair const&, FramePair const&) = default;
};

//---------------------------------------------------------------------------//
// Far-field geometry
//---------------------------------------------------------------------------//
struct PixelGeometry
{
    int cells_x = 1;  //!< lattice cells per pixel
    int cells_y = 1;
    double cell_pitch_x = 0;  //!< detector-plane size of one cell (m)
    double cell_pitch_y = 0;
    double axis_x = 0;  //!< optical axis in lattice cell coordinates
    double axis_y = 0;
    int x0_signal = 0, y0_signal = 0;  //!< box origins in lattice cells
    int x0_idler = 0, y0_idler = 0;
    double center_x = 0;  //!< pairing center in frame pixel coordinates
    double center_y = 0;
};

inline PixelGeometry pixel_geometry(GridSpec const& g, DetectorConfig const& d)
{
    validate(d);
    PixelGeometry p;
    p.cell_pitch_x = d.lens_f * d.wavelength / (g.nx * g.dx);
    p.cell_pitch_y = d.lens_f * d.wavelength / (g.ny * g.dy);
    auto cells = [&](double pitch, char const* axis) {
        double r = d.pixel_pitch / pitch;
        double n = std::round(r);
        if (n < 1 || std::abs(r - n) > 1e-6 * r)
        {
            std::ostringstream os;
            os << "pixel pitch must be an integer multiple of the far-field "
                  "cell pitch along "
               << axis << " (ratio " << r << ")";
            throw ConfigError(os.str());
        }
        return static_cast<int>(n);
    };
    p.cells_x = cells(p.cell_pitch_x, "x");
    p.cells_y = cells(p.cell_pitch_y, "y");

    double shift = d.axis_on_pixel_corner ? 0.5 : 0.0;
    p.axis_x = g.nx / 2 - shift;
    p.axis_y = g.ny / 2 - shift;

    int wx = d.region_width * p.cells_x;
    int wy = d.region_height * p.cells_y;
    p.x0_signal = g.nx / 2 - wx / 2 + d.region_offset_x * p.cells_x;
    p.x0_idler = g.nx / 2 - wx / 2 - d.region_offset_x * p.cells_x;
    p.y0_signal = g.ny / 2 - wy / 2 + d.region_offset_y * p.cells_y;
    p.y0_idler = g.ny / 2 - wy / 2 - d.region_offset_y * p.cells_y;
    for (int x0 : {p.x0_signal, p.x0_idler})
    {
        if (x0 < 0 || x0 + wx > g.nx)
            throw ConfigError("detector region exceeds the mapped far-field "
                              "extent along x");
    }
    for (int y0 : {p.y0_signal, p.y0_idler})
    {
        if (y0 < 0 || y0 + wy > g.ny)
            throw ConfigError("detector region exceeds the mapped far-field "
                              "extent along y");
    }
    p.center_x = (2 * p.axis_x - p.x0_signal - p.x0_idler - (p.cells_x - 1))
                 / (2.0 * p.cells_x);
    p.center_y = (2 * p.axis_y - p.y0_signal - p.y0_idler - (p.cells_y - 1))
                 / (2.0 * p.cells_y);
    if (d.center_x)
        p.center_x = *d.center_x;
    if (d.center_y)
        p.center_y = *d.center_y;
    return p;
}

//! Detector-plane x coordinate (m) of far-field cell j
inline double far_field_x(GridSpec const& g, DetectorConfig const& d, int j)
{
    double shift = d.axis_on_pixel_corner ? 0.5 : 0.0;
    double q = (j - g.nx / 2 + shift) * g.dqx();
    return d.lens_f * d.wavelength * q / (2 * std::numbers::pi);
}

inline double far_field_y(GridSpec const& g, DetectorConfig const& d, int j)
{
    double shift = d.axis_on_pixel_corner ? 0.5 : 0.0;
    double q = (j - g.ny / 2 + shift) * g.dqy();
    return d.lens_f * d.wavelength * q / (2 * std::numbers::pi);
}

/*!
 * Lens transform: unitary 2D FFT of every temporal slice, zero frequency
 * moved to the lattice center.
 *
 * With axis_on_pixel_corner the sampling is displaced by half a cell so the
 * optical axis falls between cells and point reflection maps cells onto
 * cells without a fixed point.
 */
inline ComplexField far_field(ComplexField const& field, DetectorConfig const& d)
{
    auto const& g = field.grid();
    pixel_geometry(g, d);

    ComplexField in = field;
    if (d.axis_on_pixel_corner)
    {
        using namespace std::complex_literals;
        std::vector<complex_t> px(g.nx), py(g.ny);
        for (int x = 0; x < g.nx; ++x)
            px[x] = std::exp(-1i * std::numbers::pi * double(x) / double(g.nx));
        for (int y = 0; y < g.ny; ++y)
            py[y] = std::exp(-1i * std::numbers::pi * double(y) / double(g.ny));
        for (int t = 0; t < g.nt; ++t)
            for (int y = 0; y < g.ny; ++y)
                for (int x = 0; x < g.nx; ++x)
                    in(t, y, x) *= py[y] * px[x];
    }
    auto k = fft_forward(in, FftAxes::transverse);

    ComplexField out(g, field.pol());
    int hx = g.nx / 2, hy = g.ny / 2;
    for (int t = 0; t < g.nt; ++t)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x)
                out(t, (y + hy) % g.ny, (x + hx) % g.nx) = k(t, y, x);
    return out;
}

//! Lumped detection efficiency as a beam splitter with a vacuum port
inline ComplexField apply_loss(ComplexField const& field,
                               double eta,
                               ShotSeed seed,
                               std::uint32_t stream_id)
{
    if (!(eta >= 0 && eta <= 1))
        throw ConfigError("loss eta must lie in [0, 1]");
    ComplexField out = field;
    if (eta == 1)
        return out;
    double a = std::sqrt(eta), b = std::sqrt(1 - eta);
    StreamRng rng(seed, stream_id);
    auto& d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = a * d[i] + b * rng.complex_normal(i, 0.5);
    return out;
}

/*!
 * Sum ordering-corrected intensities |a|^2 - 1/2 over the cells and temporal
 * slices of every pixel in one region box.
 */
inline DetectorFrame integrate_pixels(ComplexField const& ff,
                                      DetectorConfig const& d,
                                      Region region)
{
    auto const& g = ff.grid();
    auto p = pixel_geometry(g, d);
    int x0 = region == Region::signal ? p.x0_signal : p.x0_idler;
    int y0 = region == Region::signal ? p.y0_signal : p.y0_idler;

    FrameMeta meta;
    meta.region = region;
    meta.pixel_pitch = d.pixel_pitch;
    meta.center_x = p.center_x;
    meta.center_y = p.center_y;
    meta.wigner_modes = static_cast<double>(g.nt) * p.cells_x * p.cells_y;
    DetectorFrame frame(d.region_width, d.region_height, meta);

    for (int t = 0; t < g.nt; ++t)
    {
        for (int v = 0; v < d.region_height; ++v)
        {
            for (int cy = 0; cy < p.cells_y; ++cy)
            {
                int y = y0 + v * p.cells_y + cy;
                for (int u = 0; u < d.region_width; ++u)
                {
                    double s = 0;
                    for (int cx = 0; cx < p.cells_x; ++cx)
                        s += std::norm(ff(t, y, x0 + u * p.cells_x + cx)) - 0.5;
                    frame(u, v) += s;
                }
            }
        }
    }
    return frame;
}

//! Additive zero-mean Gaussian background on every pixel
inline DetectorFrame
add_background(DetectorFrame frame, double sigma_b, ShotSeed seed)
{
    if (!(sigma_b >= 0))
        throw ConfigError("background sigma_b must be non-negative");
    if (sigma_b == 0)
        return frame;
    StreamRng rng(seed,
                  frame.meta().region == Region::signal
                      ? stream::background_signal
                      : stream::background_idler);
    auto& d = frame.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] += sigma_b * rng.normal_pair(i)[0];
    auto& m = frame.meta();
    m.sigma_b = m.background ? std::hypot(m.sigma_b, sigma_b) : sigma_b;
    m.background = true;
    return frame;
}

//! Non-overlapping N x N sums; trailing rows and columns are dropped
inline DetectorFrame bin_frame(DetectorFrame const& frame, int n)
{
    if (n < 1)
        throw ConfigError("binning factor must be at least 1");
    if (n > frame.width() || n > frame.height())
        throw ConfigError("binning factor larger than the frame");
    if (n == 1)
        return frame;
    int w = frame.width() / n, h = frame.height() / n;
    FrameMeta m = frame.meta();
    m.binning *= n;
    m.pixel_pitch *= n;
    m.center_x = (m.center_x + 0.5) / n - 0.5;
    m.center_y = (m.center_y + 0.5) / n - 0.5;
    m.wigner_modes *= static_cast<double>(n) * n;
    m.sigma_b *= n;
    m.dropped_cols += (frame.width() % n) * (m.binning / n);
    m.dropped_rows += (frame.height() % n) * (m.binning / n);
    DetectorFrame out(w, h, m);
    for (int v = 0; v < h * n; ++v)
        for (int u = 0; u < w * n; ++u)
            out(u / n, v / n) += frame(u, v);
    return out;
}

//---------------------------------------------------------------------------//
// Semiclassical integer-count pipeline for calibration
//---------------------------------------------------------------------------//

//! Independent Poisson counts with the given per-pixel means
inline DetectorFrame sample_counts(DetectorFrame const& mean,
                                   ShotSeed seed,
                                   std::uint32_t stream_id)
{
    DetectorFrame out = mean;
    StreamRng rng(seed, stream_id);
    auto& d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i)
    {
        auto b = rng.block(i);
        std::seed_seq seq{b[0], b[1], b[2], b[3]};
        std::mt19937_64 eng(seq);
        std::poisson_distribution<long> pd(mean.data()[i]);
        d[i] = static_cast<double>(pd(eng));
    }
    out.meta().wigner_modes = 0;
    return out;
}

/*!
 * Coherent beam split by a 50:50 beam splitter onto two regions: each photon
 * is routed independently, so the two count frames are independent Poisson
 * fields with half the mean each.
 */
inline FramePair coherent_split_frames(double mean_per_pixel,
                                       int width,
                                       int height,
                                       ShotSeed seed)
{
    FrameMeta ms;
    ms.region = Region::signal;
    ms.seed = seed;
    ms.center_x = 0.5 * (width - 1);
    ms.center_y = 0.5 * (height - 1);
    FrameMeta mi = ms;
    mi.region = Region::idler;
    DetectorFrame half(width, height, ms);
    for (auto& v : half.data())
        v = 0.5 * mean_per_pixel;
    FramePair fp;
    fp.signal = sample_counts(half, seed, stream::counts_signal);
    half.meta() = mi;
    fp.idler = sample_counts(half, seed, stream::counts_idler);
    return fp;
}

}  // namespace twinbeam
