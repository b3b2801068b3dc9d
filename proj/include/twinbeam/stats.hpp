#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "detector.hpp"
#include "errors.hpp"
#include "lattice.hpp"

namespace twinbeam {

//---------------------------------------------------------------------------//
// Pixel-pair ensembles
//---------------------------------------------------------------------------//
enum class Pairing
{
    nearest,
    bilinear
};

struct PixelPairEnsemble
{
    std::vector<double> ns;
    std::vector<double> ni;
    double center_x = 0;
    double center_y = 0;
    double shift_x = 0;
    double shift_y = 0;
    //! Shift actually realized by the pixel pairing
    double effective_shift_x = 0;
    double effective_shift_y = 0;
    Pairing pairing = Pairing::nearest;
    int dropped = 0;  //!< signal pixels whose partner left the region
    int binning = 1;
    //! Per-pixel symmetric-ordering variance removed by the estimators
    double ordering_variance = 0;
    bool background = false;
    double sigma_b = 0;
    ShotSeed seed;
    double gain = 0;

    std::size_t size() const noexcept { return ns.size(); }
};

namespace detail {
inline void check_congruent(DetectorFrame const& fs, DetectorFrame const& fi)
{
    if (fs.width() != fi.width() || fs.height() != fi.height())
        throw AnalysisError("signal and idler frames have different shapes");
}

inline long round_half_up(double v) noexcept
{
    return static_cast<long>(std::floor(v + 0.5));
}
}  // namespace detail

/*!
 * Pair every signal pixel p with idler pixel 2c - p + shift.
 */
inline PixelPairEnsemble build_ensemble(DetectorFrame const& fs,
                                        DetectorFrame const& fi,
                                        double cx,
                                        double cy,
                                        double shift_x = 0,
                                        double shift_y = 0,
                                        Pairing pairing = Pairing::nearest)
{
    detail::check_congruent(fs, fi);
    PixelPairEnsemble e;
    e.center_x = cx;
    e.center_y = cy;
    e.shift_x = shift_x;
    e.shift_y = shift_y;
    e.pairing = pairing;
    e.binning = fs.meta().binning;
    e.ordering_variance = 0.125
                          * (fs.meta().wigner_modes + fi.meta().wigner_modes);
    e.background = fs.meta().background || fi.meta().background;
    e.sigma_b = std::sqrt(0.5
                          * (fs.meta().sigma_b * fs.meta().sigma_b
                             + fi.meta().sigma_b * fi.meta().sigma_b));
    e.seed = fs.meta().seed;
    e.gain = fs.meta().gain;

    int w = fs.width(), h = fs.height();
    e.ns.reserve(fs.size());
    e.ni.reserve(fs.size());
    double ax = 2 * cx + shift_x, ay = 2 * cy + shift_y;
    if (pairing == Pairing::nearest)
    {
        long sx = detail::round_half_up(ax), sy = detail::round_half_up(ay);
        e.effective_shift_x = sx - 2 * cx;
        e.effective_shift_y = sy - 2 * cy;
        for (int v = 0; v < h; ++v)
        {
            for (int u = 0; u < w; ++u)
            {
                long uu = sx - u, vv = sy - v;
                if (uu < 0 || uu >= w || vv < 0 || vv >= h)
                {
                    ++e.dropped;
                    continue;
                }
                e.ns.push_back(fs(u, v));
                e.ni.push_back(fi(static_cast<int>(uu), static_cast<int>(vv)));
            }
        }
    }
    else
    {
        e.effective_shift_x = shift_x;
        e.effective_shift_y = shift_y;
        for (int v = 0; v < h; ++v)
        {
            for (int u = 0; u < w; ++u)
            {
                double x = ax - u, y = ay - v;
                double fx = std::floor(x), fy = std::floor(y);
                double tx = x - fx, ty = y - fy;
                int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
                // Partners with zero weight may lie outside the region
                int x1 = tx > 0 ? x0 + 1 : x0;
                int y1 = ty > 0 ? y0 + 1 : y0;
                if (x0 < 0 || x1 >= w || y0 < 0 || y1 >= h)
                {
                    ++e.dropped;
                    continue;
                }
                double val = (1 - tx) * (1 - ty) * fi(x0, y0)
                             + tx * (1 - ty) * fi(x1, y0)
                             + (1 - tx) * ty * fi(x0, y1) + tx * ty * fi(x1, y1);
                e.ns.push_back(fs(u, v));
                e.ni.push_back(val);
            }
        }
    }
    if (e.size() < 2)
        throw AnalysisError("fewer than 2 valid pixel pairs for this center "
                            "and shift");
    return e;
}

//! Pair about the center declared in the signal frame metadata
inline PixelPairEnsemble build_ensemble(DetectorFrame const& fs,
                                        DetectorFrame const& fi,
                                        Pairing pairing = Pairing::nearest,
                                        double shift_x = 0,
                                        double shift_y = 0)
{
    return build_ensemble(fs, fi, fs.meta().center_x, fs.meta().center_y,
                          shift_x, shift_y, pairing);
}

//! Concatenate ensembles for multi-shot pooling
inline PixelPairEnsemble pool(std::vector<PixelPairEnsemble> const& es)
{
    if (es.empty())
        throw AnalysisError("nothing to pool");
    PixelPairEnsemble out = es.front();
    for (std::size_t k = 1; k < es.size(); ++k)
    {
        out.ns.insert(out.ns.end(), es[k].ns.begin(), es[k].ns.end());
        out.ni.insert(out.ni.end(), es[k].ni.begin(), es[k].ni.end());
        out.dropped += es[k].dropped;
    }
    return out;
}

//---------------------------------------------------------------------------//
// Spatial moments
//---------------------------------------------------------------------------//
struct PairMoments
{
    double mean_s = 0;
    double mean_i = 0;
    double var_s = 0;  //!< sample variances over pairs, before corrections
    double var_i = 0;
    double cov = 0;
    double var_diff = 0;
    std::size_t k = 0;
};

inline PairMoments moments(PixelPairEnsemble const& e)
{
    std::size_t k = e.size();
    if (k < 2)
        throw AnalysisError("ensemble needs at least 2 pairs");
    PairMoments m;
    m.k = k;
    for (std::size_t j = 0; j < k; ++j)
    {
        m.mean_s += e.ns[j];
        m.mean_i += e.ni[j];
    }
    m.mean_s /= k;
    m.mean_i /= k;
    double dmean = m.mean_s - m.mean_i;
    for (std::size_t j = 0; j < k; ++j)
    {
        double ds = e.ns[j] - m.mean_s;
        double di = e.ni[j] - m.mean_i;
        double dd = (e.ns[j] - e.ni[j]) - dmean;
        m.var_s += ds * ds;
        m.var_i += di * di;
        m.cov += ds * di;
        m.var_diff += dd * dd;
    }
    m.var_s /= k;
    m.var_i /= k;
    m.cov /= k;
    m.var_diff /= k;
    return m;
}

//! Var(n_s - n_i) over pairs, with the symmetric-ordering excess removed
inline double difference_variance(PixelPairEnsemble const& e)
{
    return moments(e).var_diff - 2 * e.ordering_variance;
}

//! Single-beam variances with ordering excess removed
inline std::pair<double, double> single_variances(PixelPairEnsemble const& e)
{
    auto m = moments(e);
    return {m.var_s - e.ordering_variance, m.var_i - e.ordering_variance};
}

inline double covariance(PixelPairEnsemble const& e)
{
    return moments(e).cov;
}

//! Remove the contribution of independent background on both regions
inline double background_correct(double var_measured, double sigma_b)
{
    if (!(sigma_b >= 0))
        throw AnalysisError("sigma_b must be non-negative");
    return var_measured - 2 * sigma_b * sigma_b;
}

inline double snl_normalize(double variance, double mean_sum)
{
    if (!(mean_sum > 0))
        throw AnalysisError("mean photoelectron sum must be positive for SNL "
                            "normalization");
    return variance / mean_sum;
}

//! Single-beam variances corrected for ordering excess and background
inline std::pair<double, double>
corrected_single_variances(PixelPairEnsemble const& e)
{
    auto [vs, vi] = single_variances(e);
    double b2 = e.background ? e.sigma_b * e.sigma_b : 0;
    return {vs - b2, vi - b2};
}

//! Correlation degree of one ensemble using corrected single variances
inline double correlation_of(PixelPairEnsemble const& e)
{
    auto [vs, vi] = corrected_single_variances(e);
    if (!(vs > 0) || !(vi > 0))
        throw AnalysisError("zero variance: correlation degree undefined");
    return moments(e).cov / std::sqrt(vs * vi);
}

//---------------------------------------------------------------------------//
// Correlation degree versus pairing shift
//---------------------------------------------------------------------------//
struct GammaProfile
{
    std::vector<double> shifts;  //!< pixels, shared by both axes
    std::vector<double> gamma_x;  //!< section along x through the peak
    std::vector<double> gamma_y;
    double peak = 0;
    int peak_dx = 0;
    int peak_dy = 0;
    //! Full surface, row-major over (dy, dx), when requested
    std::vector<double> surface;
};

struct GammaOptions
{
    int shift_range = 8;
    bool full_2d = false;
    bool correct_variances = true;
};

namespace detail {
//! Linear convolutions of real 2D arrays via zero-padded complex FFTs
class Convolver
{
  public:
    Convolver(int w, int h) : w_(w), h_(h), pw_(2 * w), ph_(2 * h)
    {
        n_ = static_cast<std::size_t>(pw_) * ph_;
        buf_.resize(n_);
        auto* p = reinterpret_cast<fftw_complex*>(buf_.data());
        std::lock_guard<std::mutex> lock(planner_mutex());
        fwd_ = fftw_plan_dft_2d(ph_, pw_, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_2d(ph_, pw_, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Convolver()
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }
    Convolver(Convolver const&) = delete;
    Convolver& operator=(Convolver const&) = delete;

    AlignedVector<complex_t> transform(std::vector<double> const& a)
    {
        std::fill(buf_.begin(), buf_.end(), complex_t{0, 0});
        for (int v = 0; v < h_; ++v)
            for (int u = 0; u < w_; ++u)
                buf_[static_cast<std::size_t>(v) * pw_ + u]
                    = a[static_cast<std::size_t>(v) * w_ + u];
        auto* p = reinterpret_cast<fftw_complex*>(buf_.data());
        fftw_execute_dft(fwd_, p, p);
        return buf_;
    }

    //! (a * b)(S) for S in [0, 2w-2] x [0, 2h-2], row-major with pitch 2w
    std::vector<double>
    convolve(AlignedVector<complex_t> const& fa, AlignedVector<complex_t> const& fb)
    {
        for (std::size_t k = 0; k < n_; ++k)
            buf_[k] = fa[k] * fb[k];
        auto* p = reinterpret_cast<fftw_complex*>(buf_.data());
        fftw_execute_dft(bwd_, p, p);
        std::vector<double> out(n_);
        double s = 1.0 / static_cast<double>(n_);
        for (std::size_t k = 0; k < n_; ++k)
            out[k] = buf_[k].real() * s;
        return out;
    }

    int pitch() const noexcept { return pw_; }

  private:
    int w_, h_, pw_, ph_;
    std::size_t n_;
    AlignedVector<complex_t> buf_;
    fftw_plan fwd_, bwd_;
};
}  // namespace detail

/*!
 * Correlation degree for every integer pairing shift within the range.
 *
 * The pairing p <-> S - p makes every pair sum a linear convolution, so all
 * shifts are evaluated with a handful of FFTs. Frames are mean-centered first
 * to avoid cancellation in the moment differences.
 */
inline GammaProfile correlation_degree(DetectorFrame const& fs,
                                       DetectorFrame const& fi,
                                       double cx,
                                       double cy,
                                       GammaOptions const& opts = {})
{
    detail::check_congruent(fs, fi);
    int w = fs.width(), h = fs.height();
    int r = opts.shift_range;
    if (r < 1)
        throw AnalysisError("shift range must be at least 1 pixel");

    auto centered = [](std::vector<double> v) {
        double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        for (auto& x : v)
            x -= m;
        return v;
    };
    auto s = centered(fs.data());
    auto i = centered(fi.data());
    std::vector<double> s2(s.size()), i2(i.size()), ones(s.size(), 1.0);
    for (std::size_t k = 0; k < s.size(); ++k)
    {
        s2[k] = s[k] * s[k];
        i2[k] = i[k] * i[k];
    }

    detail::Convolver conv(w, h);
    auto f1 = conv.transform(ones);
    auto fsx = conv.transform(s);
    auto fs2 = conv.transform(s2);
    auto fix = conv.transform(i);
    auto fi2 = conv.transform(i2);
    auto count = conv.convolve(f1, f1);
    auto sum_s = conv.convolve(fsx, f1);
    auto sum_s2 = conv.convolve(fs2, f1);
    auto sum_i = conv.convolve(f1, fix);
    auto sum_i2 = conv.convolve(f1, fi2);
    auto sum_si = conv.convolve(fsx, fix);

    double ord = 0.125 * (fs.meta().wigner_modes + fi.meta().wigner_modes);
    bool bg = fs.meta().background || fi.meta().background;
    double b2 = bg ? 0.5
                         * (fs.meta().sigma_b * fs.meta().sigma_b
                            + fi.meta().sigma_b * fi.meta().sigma_b)
                   : 0;
    double corr = opts.correct_variances ? ord + b2 : 0;

    long s0x = detail::round_half_up(2 * cx);
    long s0y = detail::round_half_up(2 * cy);
    int pitch = conv.pitch();
    double const nan = std::numeric_limits<double>::quiet_NaN();
    auto gamma_at = [&](int dx, int dy) {
        long sx = s0x + dx, sy = s0y + dy;
        if (sx < 0 || sx > 2 * w - 2 || sy < 0 || sy > 2 * h - 2)
            return nan;
        std::size_t k = static_cast<std::size_t>(sy) * pitch + sx;
        double n = std::round(count[k]);
        if (n < 2)
            return nan;
        double ms = sum_s[k] / n, mi = sum_i[k] / n;
        double vs = sum_s2[k] / n - ms * ms - corr;
        double vi = sum_i2[k] / n - mi * mi - corr;
        if (!(vs > 0) || !(vi > 0))
            throw AnalysisError("zero variance: correlation degree undefined");
        return (sum_si[k] / n - ms * mi) / std::sqrt(vs * vi);
    };

    GammaProfile gp;
    int nside = 2 * r + 1;
    std::vector<double> surface(static_cast<std::size_t>(nside) * nside);
    double best = -std::numeric_limits<double>::infinity();
    for (int dy = -r; dy <= r; ++dy)
    {
        for (int dx = -r; dx <= r; ++dx)
        {
            double g = gamma_at(dx, dy);
            surface[static_cast<std::size_t>(dy + r) * nside + dx + r] = g;
            if (g > best)
            {
                best = g;
                gp.peak_dx = dx;
                gp.peak_dy = dy;
            }
        }
    }
    if (!std::isfinite(best))
        throw AnalysisError("no valid shifts for the correlation degree");
    gp.peak = best;
    for (int d = -r; d <= r; ++d)
    {
        gp.shifts.push_back(d);
        gp.gamma_x.push_back(
            surface[static_cast<std::size_t>(gp.peak_dy + r) * nside + d + r]);
        gp.gamma_y.push_back(
            surface[static_cast<std::size_t>(d + r) * nside + gp.peak_dx + r]);
    }
    if (opts.full_2d)
        gp.surface = std::move(surface);
    return gp;
}

inline GammaProfile correlation_degree(DetectorFrame const& fs,
                                       DetectorFrame const& fi,
                                       GammaOptions const& opts = {})
{
    return correlation_degree(fs, fi, fs.meta().center_x, fs.meta().center_y,
                              opts);
}

/*!
 * Full width at half maximum of a sampled profile, interpolating linearly
 * between the samples that bracket half the peak value.
 */
inline double coherence_length(std::vector<double> const& shifts,
                               std::vector<double> const& values)
{
    if (shifts.size() != values.size() || shifts.size() < 3)
        throw AnalysisError("profile needs at least 3 samples");
    std::size_t n = values.size();
    std::size_t ip = 0;
    for (std::size_t k = 1; k < n; ++k)
    {
        if (std::isfinite(values[k])
            && (!std::isfinite(values[ip]) || values[k] > values[ip]))
            ip = k;
    }
    if (ip == 0 || ip + 1 == n)
        throw AnalysisError("profile peak lies at the range boundary; widen "
                            "the shift range");
    double half = 0.5 * values[ip];
    auto crossing = [&](int dir) {
        for (std::size_t k = ip;;)
        {
            std::size_t next = dir > 0 ? k + 1 : k - 1;
            double v = values[next];
            if (!std::isfinite(v))
                break;
            if (v <= half)
            {
                double t = (values[k] - half) / (values[k] - v);
                return shifts[k] + t * (shifts[next] - shifts[k]);
            }
            k = next;
            if (k == 0 || k + 1 == n)
                break;
        }
        throw AnalysisError("profile does not fall to half maximum within "
                            "the shift range");
    };
    return crossing(+1) - crossing(-1);
}

//---------------------------------------------------------------------------//
// Bounds and model fits
//---------------------------------------------------------------------------//

//! gamma_lim = 1 - <n>/sigma^2
inline double quantum_bound_empirical(double mean, double variance)
{
    if (!(variance > 0))
        throw AnalysisError("variance must be positive");
    return 1 - mean / variance;
}

//! gamma_lim = <n>/(M + <n>) for thermal statistics with M modes
inline double quantum_bound_thermal(double mean, double m)
{
    if (!(m > 0))
        throw AnalysisError("degeneracy factor must be positive");
    return mean / (m + mean);
}

struct DegeneracyFit
{
    double m = std::numeric_limits<double>::infinity();
    bool unbounded = true;
    double inv_m = 0;
    double residual = 0;  //!< rms of variance residuals (pe^2)
};

/*!
 * Least-squares fit of sigma^2 = <n> (1 + <n>/M), linear in 1/M.
 */
inline DegeneracyFit fit_degeneracy(std::vector<double> const& means,
                                    std::vector<double> const& variances)
{
    if (means.size() != variances.size() || means.size() < 2)
        throw AnalysisError("degeneracy fit needs at least 2 points");
    auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi)))
        throw AnalysisError("degeneracy fit needs distinct means");
    double num = 0, den = 0;
    for (std::size_t k = 0; k < means.size(); ++k)
    {
        double n2 = means[k] * means[k];
        num += n2 * (variances[k] - means[k]);
        den += n2 * n2;
    }
    DegeneracyFit f;
    f.inv_m = num / den;
    double ss = 0;
    for (std::size_t k = 0; k < means.size(); ++k)
    {
        double pred = means[k] * (1 + means[k] * f.inv_m);
        ss += (variances[k] - pred) * (variances[k] - pred);
    }
    f.residual = std::sqrt(ss / means.size());
    if (f.inv_m > 0)
    {
        f.m = 1 / f.inv_m;
        f.unbounded = false;
    }
    return f;
}

struct CauchySchwarz
{
    double cross = 0;  //!< <dn_s dn_i>
    double self_s = 0;  //!< <:dn_s^2:>
    double self_i = 0;
    double margin = 0;
    bool violated = false;
    bool direct_form = false;  //!< geometric mean replaced by the average
};

inline CauchySchwarz cauchy_schwarz_check(PixelPairEnsemble const& e)
{
    auto m = moments(e);
    auto [vs, vi] = corrected_single_variances(e);
    CauchySchwarz cs;
    cs.cross = m.cov;
    cs.self_s = vs - m.mean_s;
    cs.self_i = vi - m.mean_i;
    if (cs.self_s >= 0 && cs.self_i >= 0)
    {
        cs.margin = cs.cross - std::sqrt(cs.self_s * cs.self_i);
    }
    else
    {
        cs.direct_form = true;
        cs.margin = cs.cross - 0.5 * (cs.self_s + cs.self_i);
    }
    cs.violated = cs.margin > 0;
    return cs;
}

//---------------------------------------------------------------------------//
// Full report for one frame pair
//---------------------------------------------------------------------------//
struct AnalysisOptions
{
    GammaOptions gamma;
    Pairing pairing = Pairing::nearest;
    double shift_x = 0;
    double shift_y = 0;
    bool with_gamma = true;
};

struct CorrelationReport
{
    double mean_s = 0;
    double mean_i = 0;
    double mean_sum = 0;
    double var_s = 0;  //!< corrected single-beam variances
    double var_i = 0;
    double cov = 0;
    double var_diff_raw = 0;
    double var_diff = 0;  //!< background corrected
    bool negative_variance = false;
    double sigma_tilde = 0;
    std::size_t pairs = 0;
    double gamma_zero = 0;  //!< at the configured shift
    double gamma_peak = std::numeric_limits<double>::quiet_NaN();
    GammaProfile profile;
    double xcoh_x_px = std::numeric_limits<double>::quiet_NaN();
    double xcoh_y_px = std::numeric_limits<double>::quiet_NaN();
    double xcoh_x_m = std::numeric_limits<double>::quiet_NaN();
    double xcoh_y_m = std::numeric_limits<double>::quiet_NaN();
    double gamma_lim = 0;
    double m_estimate = std::numeric_limits<double>::infinity();
    CauchySchwarz cs;
    std::vector<std::string> warnings;
};

inline CorrelationReport analyze(DetectorFrame const& fs,
                                 DetectorFrame const& fi,
                                 AnalysisOptions const& opts = {})
{
    auto e = build_ensemble(fs, fi, opts.pairing, opts.shift_x, opts.shift_y);
    auto m = moments(e);
    CorrelationReport r;
    r.pairs = m.k;
    r.mean_s = m.mean_s;
    r.mean_i = m.mean_i;
    r.mean_sum = m.mean_s + m.mean_i;
    std::tie(r.var_s, r.var_i) = corrected_single_variances(e);
    r.cov = m.cov;
    r.var_diff_raw = difference_variance(e);
    r.var_diff = e.background ? background_correct(r.var_diff_raw, e.sigma_b)
                              : r.var_diff_raw;
    if (r.var_diff < 0)
    {
        r.negative_variance = true;
        r.warnings.push_back("corrected difference variance is negative");
    }
    if (r.mean_sum > 0)
        r.sigma_tilde = snl_normalize(r.var_diff, r.mean_sum);
    else
        r.warnings.push_back("non-positive mean sum; SNL undefined");
    if (r.var_s > 0 && r.var_i > 0)
        r.gamma_zero = m.cov / std::sqrt(r.var_s * r.var_i);
    double mean = 0.5 * r.mean_sum, var = 0.5 * (r.var_s + r.var_i);
    if (var > 0)
        r.gamma_lim = quantum_bound_empirical(mean, var);
    if (var > mean)
        r.m_estimate = mean * mean / (var - mean);
    r.cs = cauchy_schwarz_check(e);
    if (r.cs.direct_form)
        r.warnings.push_back("sub-Poissonian marginal; direct Cauchy-Schwarz "
                             "form used");

    if (opts.with_gamma)
    {
        try
        {
            r.profile = correlation_degree(fs, fi, opts.gamma);
        }
        catch (AnalysisError const& err)
        {
            r.warnings.push_back(std::string("correlation degree: ")
                                 + err.what());
            return r;
        }
        r.gamma_peak = r.profile.peak;
        try
        {
            r.xcoh_x_px = coherence_length(r.profile.shifts, r.profile.gamma_x);
            r.xcoh_x_m = r.xcoh_x_px * fs.meta().pixel_pitch;
        }
        catch (AnalysisError const& err)
        {
            r.warnings.push_back(std::string("x coherence length: ")
                                 + err.what());
        }
        try
        {
            r.xcoh_y_px = coherence_length(r.profile.shifts, r.profile.gamma_y);
            r.xcoh_y_m = r.xcoh_y_px * fs.meta().pixel_pitch;
        }
        catch (AnalysisError const& err)
        {
            r.warnings.push_back(std::string("y coherence length: ")
                                 + err.what());
        }
    }
    return r;
}

//---------------------------------------------------------------------------//
// Sweeps
//---------------------------------------------------------------------------//
enum class SweepKind
{
    gain,
    binning,
    misalignment
};

inline char const* to_string(SweepKind k) noexcept
{
    switch (k)
    {
        case SweepKind::gain:
            return "gain";
        case SweepKind::binning:
            return "binning";
        case SweepKind::misalignment:
            return "misalignment";
    }
    return "?";
}

struct SweepRow
{
    double x = 0;  //!< independent variable
    double sigma_tilde = 0;
    double mean_sum = 0;
    double gamma_peak = std::numeric_limits<double>::quiet_NaN();
    double xcoh_px = std::numeric_limits<double>::quiet_NaN();
    double shift_px = 0;  //!< realized pairing shift (misalignment)
    double mean_single = 0;  //!< <n_{s,i}>
    double var_single = 0;  //!< corrected, averaged over both beams
    double gain = 0;
    int shot = 0;
    ShotSeed seed;
};

struct SweepTable
{
    SweepKind kind = SweepKind::gain;
    std::vector<SweepRow> rows;
    //! Fit summaries in insertion order
    std::vector<std::pair<std::string, double>> fits;

    void sort_rows()
    {
        std::stable_sort(rows.begin(), rows.end(),
                         [](SweepRow const& a, SweepRow const& b) {
                             if (a.gain != b.gain)
                                 return a.gain < b.gain;
                             return a.x < b.x;
                         });
    }
};

struct LinearFit
{
    double intercept = 0;
    double slope = 0;
    double slope_se = std::numeric_limits<double>::infinity();
};

inline LinearFit linear_fit(std::vector<double> const& x,
                            std::vector<double> const& y)
{
    std::size_t n = x.size();
    if (n < 2 || y.size() != n)
        throw AnalysisError("linear fit needs at least 2 points");
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < n; ++k)
    {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
    }
    if (!(sxx > 0))
        throw AnalysisError("linear fit needs distinct abscissae");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (n > 2)
    {
        double ss = 0;
        for (std::size_t k = 0; k < n; ++k)
        {
            double r = y[k] - f.intercept - f.slope * x[k];
            ss += r * r;
        }
        f.slope_se = std::sqrt(ss / (n - 2) / sxx);
    }
    return f;
}

namespace detail {
inline SweepRow row_from(DetectorFrame const& fs,
                         DetectorFrame const& fi,
                         AnalysisOptions const& opts,
                         int shot)
{
    auto rep = analyze(fs, fi, opts);
    SweepRow row;
    row.sigma_tilde = rep.sigma_tilde;
    row.mean_sum = rep.mean_sum;
    row.gamma_peak = rep.gamma_peak;
    row.xcoh_px = rep.xcoh_x_px;
    row.mean_single = 0.5 * rep.mean_sum;
    row.var_single = 0.5 * (rep.var_s + rep.var_i);
    row.gain = fs.meta().gain;
    row.seed = fs.meta().seed;
    row.shot = shot;
    return row;
}
}  // namespace detail

/*!
 * Single-shot statistics per gain, with per-gain averages and a linear trend
 * of the normalized variance against the mean photoelectron sum.
 */
inline SweepTable
sweep_gain(std::vector<FramePair> const& shots, AnalysisOptions const& opts = {})
{
    SweepTable table;
    table.kind = SweepKind::gain;
    std::vector<double> xs, ys, means, vars;
    for (std::size_t k = 0; k < shots.size(); ++k)
    {
        auto row = detail::row_from(shots[k].signal, shots[k].idler, opts,
                                    static_cast<int>(k));
        row.x = row.gain;
        xs.push_back(row.mean_sum);
        ys.push_back(row.sigma_tilde);
        means.push_back(row.mean_single);
        vars.push_back(row.var_single);
        table.rows.push_back(row);
    }
    table.sort_rows();
    std::map<double, std::pair<int, double>> per_gain;
    for (auto const& r : table.rows)
    {
        auto& acc = per_gain[r.gain];
        acc.first += 1;
        acc.second += r.sigma_tilde;
    }
    for (auto const& [g, acc] : per_gain)
        table.fits.emplace_back("mean_sigma_tilde@g=" + std::to_string(g),
                                acc.second / acc.first);
    if (xs.size() >= 2)
    {
        try
        {
            auto f = linear_fit(xs, ys);
            table.fits.emplace_back("trend_intercept", f.intercept);
            table.fits.emplace_back("trend_slope", f.slope);
        }
        catch (AnalysisError const&)
        {
        }
        try
        {
            auto fit = fit_degeneracy(means, vars);
            table.fits.emplace_back("M", fit.m);
        }
        catch (AnalysisError const&)
        {
        }
    }
    return table;
}

inline SweepTable sweep_binning(std::vector<FramePair> const& shots,
                                std::vector<int> const& n_list,
                                AnalysisOptions const& opts = {})
{
    SweepTable table;
    table.kind = SweepKind::binning;
    for (std::size_t k = 0; k < shots.size(); ++k)
    {
        for (int n : n_list)
        {
            auto bs = bin_frame(shots[k].signal, n);
            auto bi = bin_frame(shots[k].idler, n);
            auto o = opts;
            o.gamma.shift_range = std::max(
                2, std::min(opts.gamma.shift_range,
                            std::min(bs.width(), bs.height()) / 2));
            SweepRow row;
            try
            {
                row = detail::row_from(bs, bi, o, static_cast<int>(k));
            }
            catch (AnalysisError const&)
            {
                o.with_gamma = false;
                row = detail::row_from(bs, bi, o, static_cast<int>(k));
            }
            row.x = n;
            table.rows.push_back(row);
        }
    }
    table.sort_rows();
    return table;
}

struct MisalignmentOptions
{
    AnalysisOptions analysis;
    //! Shift list in units of the aligned coherence length (else pixels)
    bool in_coherence_units = true;
};

struct MisalignmentFit
{
    double gain = 0;
    double mean_sum = 0;
    double mean_single = 0;
    double xcoh_px = 0;
    double saturation = 0;  //!< measured at the largest shift
    double saturation_single = 0;  //!< 1 + <n_{s,i}>/M
    double saturation_sum = 0;  //!< 1 + <n_s+n_i>/(2M)
    double crossing = std::numeric_limits<double>::quiet_NaN();
    double aligned = 0;
};

struct SlopeFit
{
    double nominal = 0;  //!< requested shift, list units
    double shift = 0;  //!< in coherence lengths (mean realized value)
    double slope = 0;  //!< d sigma_tilde / d <n_s+n_i>
    double slope_se = 0;
    double predicted = 0;  //!< (2M)^-1 shift
};

struct MisalignmentResult
{
    SweepTable table;
    DegeneracyFit m_fit;
    std::vector<MisalignmentFit> per_gain;
    std::vector<SlopeFit> slopes;
};

/*!
 * Normalized variance versus symmetry-center error, grouped by gain.
 *
 * The degeneracy factor comes from the single-beam thermal law over all
 * aligned ensembles; the coherence length per gain is the shot average of
 * the aligned x-axis FWHM.
 */
inline MisalignmentResult
sweep_misalignment(std::vector<FramePair> const& shots,
                   std::vector<double> const& shift_list,
                   MisalignmentOptions const& opts = {})
{
    if (std::find(shift_list.begin(), shift_list.end(), 0.0)
        == shift_list.end())
        throw AnalysisError("misalignment list must include 0");
    MisalignmentResult res;
    res.table.kind = SweepKind::misalignment;

    std::map<double, std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < shots.size(); ++k)
        groups[shots[k].signal.meta().gain].push_back(k);

    std::vector<double> means, vars;
    std::map<double, double> xcoh;
    std::map<double, std::vector<SweepRow>> aligned;
    for (auto const& [g, idx] : groups)
    {
        double acc = 0;
        int nacc = 0;
        for (auto k : idx)
        {
            auto row = detail::row_from(shots[k].signal, shots[k].idler,
                                        opts.analysis, static_cast<int>(k));
            means.push_back(row.mean_single);
            vars.push_back(row.var_single);
            if (std::isfinite(row.xcoh_px))
            {
                acc += row.xcoh_px;
                ++nacc;
            }
            aligned[g].push_back(row);
        }
        if (nacc == 0)
            throw AnalysisError("coherence length unavailable for the "
                                "misalignment sweep");
        xcoh[g] = acc / nacc;
    }
    res.m_fit = fit_degeneracy(means, vars);
    double m = res.m_fit.m;

    std::map<double, std::vector<std::pair<double, double>>> by_shift;
    std::map<double, double> realized;
    for (auto const& [g, idx] : groups)
    {
        double xc = xcoh[g];
        std::map<double, std::pair<double, int>> curve;
        for (auto k : idx)
        {
            auto const& fs = shots[k].signal;
            auto const& fi = shots[k].idler;
            for (double dx : shift_list)
            {
                double px = opts.in_coherence_units ? dx * xc : dx;
                auto o = opts.analysis;
                o.shift_x = px;
                o.with_gamma = false;
                auto rep = analyze(fs, fi, o);
                auto e = build_ensemble(fs, fi, o.pairing, px, 0);
                SweepRow row;
                row.x = dx;
                row.shift_px = e.effective_shift_x;
                row.sigma_tilde = rep.sigma_tilde;
                row.mean_sum = rep.mean_sum;
                row.mean_single = 0.5 * rep.mean_sum;
                row.var_single = 0.5 * (rep.var_s + rep.var_i);
                row.gamma_peak = rep.gamma_zero;
                row.xcoh_px = xc;
                row.gain = g;
                row.seed = fs.meta().seed;
                row.shot = static_cast<int>(k);
                res.table.rows.push_back(row);
                auto& c = curve[dx];
                c.first += row.sigma_tilde;
                c.second += 1;
                by_shift[dx].emplace_back(row.mean_sum, row.sigma_tilde);
                realized[dx] += e.effective_shift_x / xc;
            }
        }

        MisalignmentFit fit;
        fit.gain = g;
        fit.xcoh_px = xc;
        for (auto const& row : aligned[g])
            fit.mean_sum += row.mean_sum / aligned[g].size();
        fit.mean_single = 0.5 * fit.mean_sum;
        fit.aligned = curve[0.0].first / curve[0.0].second;
        auto last = curve.rbegin();
        fit.saturation = last->second.first / last->second.second;
        fit.saturation_single = 1 + fit.mean_single / m;
        fit.saturation_sum = 1 + fit.mean_sum / (2 * m);
        // First upward crossing of sigma_tilde = 1 along the shift axis
        double px = 0, py = 0;
        bool first = true;
        for (auto const& [dx, c] : curve)
        {
            if (dx < 0)
                continue;
            double v = c.first / c.second;
            if (!first && py < 1 && v >= 1)
            {
                fit.crossing = px + (1 - py) * (dx - px) / (v - py);
                break;
            }
            px = dx;
            py = v;
            first = false;
        }
        if (!opts.in_coherence_units && std::isfinite(fit.crossing))
            fit.crossing /= xc;
        res.per_gain.push_back(fit);
    }

    if (groups.size() >= 2)
    {
        for (auto const& [dx, pts] : by_shift)
        {
            std::vector<double> x, y;
            for (auto const& p : pts)
            {
                x.push_back(p.first);
                y.push_back(p.second);
            }
            try
            {
                auto lf = linear_fit(x, y);
                SlopeFit sf;
                sf.nominal = dx;
                sf.shift = realized[dx] / pts.size();
                sf.slope = lf.slope;
                sf.slope_se = lf.slope_se;
                sf.predicted = std::abs(sf.shift) / (2 * m);
                res.slopes.push_back(sf);
            }
            catch (AnalysisError const&)
            {
            }
        }
    }

    res.table.sort_rows();
    auto& fits = res.table.fits;
    fits.emplace_back("M", m);
    fits.emplace_back("M_fit_residual", res.m_fit.residual);
    for (auto const& f : res.per_gain)
    {
        std::string tag = "@g=" + std::to_string(f.gain);
        fits.emplace_back("xcoh_px" + tag, f.xcoh_px);
        fits.emplace_back("aligned" + tag, f.aligned);
        fits.emplace_back("saturation" + tag, f.saturation);
        fits.emplace_back("saturation_pred_single" + tag, f.saturation_single);
        fits.emplace_back("saturation_pred_sum" + tag, f.saturation_sum);
        fits.emplace_back("crossing_xcoh" + tag, f.crossing);
    }
    for (auto const& s : res.slopes)
    {
        std::string tag = "@dx=" + std::to_string(s.shift);
        fits.emplace_back("slope" + tag, s.slope);
        fits.emplace_back("slope_se" + tag, s.slope_se);
        fits.emplace_back("slope_pred" + tag, s.predicted);
    }
    return res;
}

//---------------------------------------------------------------------------//
// CSV output
//---------------------------------------------------------------------------//
inline void write_csv(std::ostream& os,
                      SweepTable const& t,
                      std::string const& config_digest)
{
    os << "# sweep=" << to_string(t.kind) << " config_digest=" << config_digest
       << "\n";
    os << "x,sigma_tilde,mean_sum_pe,gamma_peak,xcoh_px,shift_px,"
          "mean_single_pe,var_single_pe2,gain,shot,master_seed,shot_index\n";
    os.precision(10);
    for (auto const& r : t.rows)
    {
        os << r.x << ',' << r.sigma_tilde << ',' << r.mean_sum << ','
           << r.gamma_peak << ',' << r.xcoh_px << ',' << r.shift_px << ','
           << r.mean_single << ',' << r.var_single << ',' << r.gain << ','
           << r.shot << ',' << r.seed.master_seed << ',' << r.seed.shot_index
           << '\n';
    }
    for (auto const& [k, v] : t.fits)
        os << "# fit " << k << '=' << v << '\n';
}

}  // namespace twinbeam
