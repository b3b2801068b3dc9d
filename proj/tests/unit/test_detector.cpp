#include <cmath>
#include <complex>

#include <catch_amalgamated.hpp>

#include "twinbeam/detector.hpp"

using namespace twinbeam;
using Catch::Matchers::ContainsSubstring;

namespace {
GridSpec grid_of(int n, int nt = 4)
{
    GridSpec g;
    g.nx = g.ny = n;
    g.nt = nt;
    g.dx = g.dy = 27.5e-6;
    g.nz = 1;
    return g;
}

// Detector whose pixels are exactly `cells` far-field cells wide
DetectorConfig matched_detector(GridSpec const& g, int cells = 1)
{
    DetectorConfig d;
    d.pixel_pitch = cells * d.lens_f * d.wavelength / (g.nx * g.dx);
    d.region_width = 8;
    d.region_height = 8;
    return d;
}

double rms_width_x(ComplexField const& f)
{
    auto const& g = f.grid();
    double s = 0, m1 = 0, m2 = 0;
    for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x)
        {
            double w = std::norm(f(0, y, x));
            s += w;
            m1 += w * x;
            m2 += w * x * x;
        }
    m1 /= s;
    return std::sqrt(m2 / s - m1 * m1);
}

ComplexField gaussian(GridSpec const& g, double w)
{
    ComplexField f(g, Polarization::ordinary);
    for (int t = 0; t < g.nt; ++t)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x)
            {
                double rx = g.x_at(x) / w, ry = g.y_at(y) / w;
                f(t, y, x) = std::exp(-0.5 * (rx * rx + ry * ry));
            }
    return f;
}
}  // namespace

TEST_CASE("lens transform is unitary", "[detector]")
{
    auto g = grid_of(32);
    auto [f, unused] = sample_vacuum(g, {4, 2});
    for (bool corner : {true, false})
    {
        auto d = matched_detector(g);
        d.axis_on_pixel_corner = corner;
        auto ff = far_field(f, d);
        CHECK(ff.total_intensity()
              == Catch::Approx(f.total_intensity()).epsilon(1e-12));
    }
}

TEST_CASE("plane wave focuses onto the axis cell", "[detector]")
{
    auto g = grid_of(16, 2);
    ComplexField f(g, Polarization::ordinary);
    for (auto& a : f.data())
        a = complex_t{0.25, -0.1};
    auto d = matched_detector(g);
    d.axis_on_pixel_corner = false;
    auto ff = far_field(f, d);
    double total = f.total_intensity() / g.nt;
    CHECK(std::norm(ff(0, g.ny / 2, g.nx / 2)) == Catch::Approx(total).epsilon(1e-12));
    CHECK(ff.total_intensity() / g.nt == Catch::Approx(total).epsilon(1e-12));
    CHECK(far_field_x(g, d, g.nx / 2) == 0);
    d.axis_on_pixel_corner = true;
    CHECK(far_field_x(g, d, g.nx / 2) == Catch::Approx(0.5 * d.pixel_pitch));
}

TEST_CASE("far-field width scales inversely with the near field", "[detector]")
{
    auto g = grid_of(256, 1);
    auto d = matched_detector(g);
    d.axis_on_pixel_corner = false;
    double w = 4 * g.dx;
    double a = rms_width_x(far_field(gaussian(g, w), d));
    double b = rms_width_x(far_field(gaussian(g, 2 * w), d));
    CHECK(a / b == Catch::Approx(2).epsilon(0.01));
    // Gaussian transform pair: rms in cells is nx / (2 pi w / dx) / sqrt 2
    double expect = g.nx / (2 * std::numbers::pi * (w / g.dx)) / std::sqrt(2.0);
    CHECK(a == Catch::Approx(expect).epsilon(0.01));
}

TEST_CASE("loss as a beam splitter", "[detector]")
{
    auto g = grid_of(64);
    ComplexField f(g, Polarization::ordinary);
    double n_in = 4;
    for (auto& a : f.data())
        a = std::sqrt(n_in + 0.5);

    auto same = apply_loss(f, 1.0, {1, 1}, stream::loss_signal);
    CHECK(same.data() == f.data());

    for (double eta : {1.0, 0.75, 0.5, 0.0})
    {
        auto out = apply_loss(f, eta, {1, 1}, stream::loss_signal);
        double s = 0, s2 = 0;
        for (auto a : out.data())
        {
            double n = std::norm(a) - 0.5;
            s += n;
            s2 += n * n;
        }
        double cnt = static_cast<double>(out.size());
        double mean = s / cnt;
        double se = std::sqrt(std::max(s2 / cnt - mean * mean, 1e-30) / cnt);
        INFO("eta " << eta);
        // normal-ordered intensity transmits eta; removed share is 1 - eta
        double expect = eta * (n_in + 0.5) - 0.5 * eta;
        CHECK(std::abs(mean - expect) < 3 * se + 1e-12);
        CHECK(std::abs((n_in - mean) / n_in - (1 - eta)) < 3 * se / n_in + 1e-12);
    }

    auto a = apply_loss(f, 0.5, {1, 1}, stream::loss_signal);
    auto b = apply_loss(f, 0.5, {1, 1}, stream::loss_idler);
    CHECK(a.data() != b.data());
    CHECK_THROWS_AS(apply_loss(f, 1.5, {1, 1}, stream::loss_signal), ConfigError);
}

TEST_CASE("pixel integration", "[detector]")
{
    auto g = grid_of(64, 8);
    auto [f, unused] = sample_vacuum(g, {9, 0});

    SECTION("vacuum averages to zero with variance m/4")
    {
        auto d = matched_detector(g, 2);
        d.region_width = 16;
        d.region_height = 16;
        double s = 0, s2 = 0;
        std::size_t cnt = 0;
        double modes = 0;
        for (std::uint64_t shot = 0; shot < 8; ++shot)
        {
            auto [v, w] = sample_vacuum(g, {9, shot});
            for (auto* in : {&v, &w})
            {
                auto fr = integrate_pixels(far_field(*in, d), d, Region::signal);
                modes = fr.meta().wigner_modes;
                for (double x : fr.data())
                {
                    s += x;
                    s2 += x * x;
                    ++cnt;
                }
            }
        }
        CHECK(modes == g.nt * 4);
        double mean = s / cnt;
        double var = s2 / cnt - mean * mean;
        CHECK(std::abs(mean) < 3 * std::sqrt(modes / 4 / cnt));
        // variance of a sample variance for Gaussian-like sums: 2 var^2 / n
        CHECK(std::abs(var - modes / 4) < 4 * std::sqrt(2.0 / cnt) * modes / 4);
    }

    SECTION("pixels sum their cells")
    {
        auto d = matched_detector(g, 2);
        d.region_width = 5;
        d.region_height = 3;
        d.region_offset_x = 4;
        auto ff = far_field(f, d);
        auto p = pixel_geometry(g, d);
        auto fr = integrate_pixels(ff, d, Region::idler);
        CHECK(fr.meta().region == Region::idler);
        for (int v = 0; v < 3; ++v)
            for (int u = 0; u < 5; ++u)
            {
                double s = 0;
                for (int t = 0; t < g.nt; ++t)
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cx = 0; cx < 2; ++cx)
                            s += std::norm(ff(t, p.y0_idler + 2 * v + cy,
                                              p.x0_idler + 2 * u + cx))
                                 - 0.5;
                CHECK(fr(u, v) == Catch::Approx(s).margin(1e-12));
            }
    }

    SECTION("point reflection center")
    {
        auto d = matched_detector(g);
        d.region_width = 10;
        d.region_height = 6;
        d.region_offset_x = 7;
        auto p = pixel_geometry(g, d);
        // cell x in the signal box pairs with the reflected cell 2 axis - x
        int u = 3;
        int xs = p.x0_signal + u;
        double xi = 2 * p.axis_x - xs;
        double ui = xi - p.x0_idler;
        CHECK(u + ui == Catch::Approx(2 * p.center_x));
        CHECK(p.center_x == Catch::Approx(4.5));
        CHECK(p.center_y == Catch::Approx(2.5));
        d.axis_on_pixel_corner = false;
        CHECK(pixel_geometry(g, d).center_x == Catch::Approx(5));
        d.center_x = 1.25;
        CHECK(pixel_geometry(g, d).center_x == 1.25);
    }
}

TEST_CASE("region and pitch validation", "[detector]")
{
    auto g = grid_of(64);
    auto d = matched_detector(g);
    d.region_width = 65;
    CHECK_THROWS_WITH(pixel_geometry(g, d),
                      ContainsSubstring("exceeds the mapped far-field extent"));
    d = matched_detector(g);
    d.region_offset_y = 40;
    CHECK_THROWS_AS(pixel_geometry(g, d), ConfigError);
    d = matched_detector(g);
    d.pixel_pitch *= 1.5;
    CHECK_THROWS_WITH(pixel_geometry(g, d), ContainsSubstring("integer multiple"));
    d = matched_detector(g);
    d.eta = 1.2;
    CHECK_THROWS_AS(pixel_geometry(g, d), ConfigError);
}

TEST_CASE("additive background", "[detector]")
{
    DetectorFrame fr(50, 80);
    auto b = add_background(fr, 7, {3, 3});
    REQUIRE(b.size() >= 4000);
    double s = 0, s2 = 0;
    for (double v : b.data())
    {
        s += v;
        s2 += v * v;
    }
    double n = static_cast<double>(b.size());
    double mean = s / n;
    CHECK(std::sqrt(s2 / n - mean * mean) == Catch::Approx(7).margin(0.2));
    CHECK(std::abs(mean) < 3 * 7 / std::sqrt(n));
    CHECK(b.meta().background);
    CHECK(b.meta().sigma_b == 7);
    CHECK(add_background(fr, 0, {3, 3}) == fr);
    CHECK_THROWS_AS(add_background(fr, -1, {3, 3}), ConfigError);

    // signal and idler draw from different streams
    DetectorFrame fi(50, 80);
    fi.meta().region = Region::idler;
    CHECK(add_background(fi, 7, {3, 3}).data() != b.data());
}

TEST_CASE("frame binning", "[detector]")
{
    FrameMeta m;
    m.center_x = 19.5;
    m.center_y = 49.5;
    m.wigner_modes = 16;
    m.sigma_b = 7;
    DetectorFrame fr(40, 100, m);
    for (int v = 0; v < 100; ++v)
        for (int u = 0; u < 40; ++u)
            fr(u, v) = u + 100 * v;

    auto b2 = bin_frame(fr, 2);
    CHECK(b2.width() == 20);
    CHECK(b2.height() == 50);
    CHECK(b2(0, 0) == 0 + 1 + 100 + 101);
    CHECK(b2.sum() == Catch::Approx(fr.sum()));
    CHECK(b2.meta().center_x == Catch::Approx(9.5));
    CHECK(b2.meta().center_y == Catch::Approx(24.5));
    CHECK(b2.meta().wigner_modes == 64);
    CHECK(b2.meta().sigma_b == 14);
    CHECK(b2.meta().binning == 2);

    auto b3 = bin_frame(fr, 3);
    CHECK(b3.width() == 13);
    CHECK(b3.height() == 33);
    CHECK(b3.meta().dropped_cols == 1);
    CHECK(b3.meta().dropped_rows == 1);
    double kept = 0;
    for (int v = 0; v < 99; ++v)
        for (int u = 0; u < 39; ++u)
            kept += fr(u, v);
    CHECK(b3.sum() == Catch::Approx(kept));

    // binning twice by 2 equals binning once by 4
    auto b22 = bin_frame(b2, 2);
    auto b4 = bin_frame(fr, 4);
    CHECK(b22.data() == b4.data());
    CHECK(b22.meta().center_x == Catch::Approx(b4.meta().center_x));
    CHECK(b22.meta().binning == 4);

    CHECK(bin_frame(fr, 1) == fr);
    CHECK_THROWS_AS(bin_frame(fr, 0), ConfigError);
    CHECK_THROWS_AS(bin_frame(fr, 41), ConfigError);
}

TEST_CASE("coherent split count frames", "[detector]")
{
    auto fp = coherent_split_frames(20, 40, 100, {6, 0});
    double ms = fp.signal.sum() / fp.signal.size();
    double mi = fp.idler.sum() / fp.idler.size();
    CHECK(std::abs(ms - 10) < 3 * std::sqrt(10.0 / 4000));
    CHECK(std::abs(mi - 10) < 3 * std::sqrt(10.0 / 4000));
    for (double v : fp.signal.data())
        CHECK(v == std::floor(v));
    CHECK(fp.signal.data() != fp.idler.data());
    CHECK(coherent_split_frames(20, 40, 100, {6, 0}) == fp);
    CHECK(fp.signal.meta().center_x == Catch::Approx(19.5));
}
