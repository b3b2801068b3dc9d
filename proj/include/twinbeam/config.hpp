#pragma once

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "detector.hpp"
#include "digest.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "phasematch.hpp"
#include "propagator.hpp"
#include "stats.hpp"

extern char** environ;

namespace twinbeam {

struct AnalysisConfig
{
    std::vector<double> shift_list{0, 0.25, 0.5, 1, 2, 4};
    bool shift_in_xcoh = true;  //!< shift_list in coherence lengths, else px
    std::vector<int> binning_list{1, 2, 4, 8};
    int shift_range_px = 8;
    Pairing pairing = Pairing::nearest;
    std::optional<double> csv_pixel_pitch;  //!< m, for CSV frame input
    double csv_sigma_b = 0;
};

struct IoConfig
{
    std::string out_dir = "twinbeam_out";
    std::uint64_t seed = 1;
    int shots = 5;
    int workers = 1;
};

/*!
 * Complete run description, sectioned as [grid], [crystal], [pump],
 * [detector], [analysis] and [io].
 */
struct RunConfig
{
    GridSpec grid;
    PropagatorOptions propagator;
    bool t_center_auto = true;
    CrystalConfig crystal;
    bool theta_auto = true;
    PumpConfig pump;
    std::vector<double> gains;  //!< empty: the single pump gain
    DetectorConfig detector;
    AnalysisConfig analysis;
    IoConfig io;

    std::vector<double> gain_list() const
    {
        return gains.empty() ? std::vector<double>{pump.gain} : gains;
    }
};

namespace detail {
inline std::string fmt_num(double v)
{
    std::ostringstream os;
    os.precision(15);
    os << v;
    return os.str();
}

template<class T>
std::string fmt_list(std::vector<T> const& v)
{
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k)
    {
        if (k)
            s += ", ";
        if constexpr (std::is_integral_v<T>)
            s += std::to_string(v[k]);
        else
            s += fmt_num(v[k]);
    }
    return s;
}

inline std::string trim(std::string const& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct KeyContext
{
    std::string section;
    std::string key;

    [[noreturn]] void fail(std::string const& what, std::string const& value) const
    {
        throw ConfigError("[" + section + "] " + key + ": " + what + ", got '"
                          + value + "'");
    }
};

inline double parse_double(std::string const& raw, KeyContext const& ctx)
{
    auto s = trim(raw);
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()
        || !std::isfinite(v))
        ctx.fail("expected a finite number", raw);
    return v;
}

inline long long parse_int(std::string const& raw, KeyContext const& ctx)
{
    auto s = trim(raw);
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        ctx.fail("expected an integer", raw);
    return v;
}

inline std::uint64_t parse_u64(std::string const& raw, KeyContext const& ctx)
{
    auto s = trim(raw);
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        ctx.fail("expected an unsigned 64-bit integer", raw);
    return v;
}

inline bool parse_bool(std::string const& raw, KeyContext const& ctx)
{
    auto s = trim(raw);
    if (s == "true" || s == "yes" || s == "on" || s == "1")
        return true;
    if (s == "false" || s == "no" || s == "off" || s == "0")
        return false;
    ctx.fail("expected true or false", raw);
}

inline std::vector<std::string> split_list(std::string const& raw)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(raw);
    while (std::getline(is, item, ','))
    {
        item = trim(item);
        if (!item.empty())
            out.push_back(item);
    }
    return out;
}

inline std::vector<double> parse_list(std::string const& raw, KeyContext const& ctx)
{
    std::vector<double> v;
    for (auto const& s : split_list(raw))
        v.push_back(parse_double(s, ctx));
    return v;
}

inline int to_int(long long v, KeyContext const& ctx, std::string const& raw)
{
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        ctx.fail("integer out of range", raw);
    return static_cast<int>(v);
}

//! One recognized key: parser into the config and canonical printer
struct KeySpec
{
    std::string section;
    std::string key;
    std::function<void(RunConfig&, std::string const&, KeyContext const&)> set;
    std::function<std::string(RunConfig const&)> get;
    bool in_digest = true;
};

inline std::vector<KeySpec> const& key_table()
{
    using C = RunConfig;
    using K = KeyContext;
    using S = std::string;
    static std::vector<KeySpec> const table = [] {
        std::vector<KeySpec> t;
        auto add = [&t](S sec, S key, auto set, auto get, bool dig = true) {
            t.push_back({std::move(sec), std::move(key), set, get, dig});
        };
        // Scaled scalar: stored in SI, written in the key's unit
        auto scaled = [&add](S sec, S key, auto member, double unit) {
            add(
                sec, key,
                [member, unit](C& c, S const& v, K const& k) {
                    member(c) = parse_double(v, k) * unit;
                },
                [member, unit](C const& c) {
                    return fmt_num(member(c) / unit);
                });
        };
        auto integer = [&add](S sec, S key, auto member) {
            add(
                sec, key,
                [member](C& c, S const& v, K const& k) {
                    member(c) = to_int(parse_int(v, k), k, v);
                },
                [member](C const& c) {
                    return std::to_string(member(c));
                });
        };
        auto boolean = [&add](S sec, S key, auto member) {
            add(
                sec, key,
                [member](C& c, S const& v, K const& k) {
                    member(c) = parse_bool(v, k);
                },
                [member](C const& c) {
                    return S(member(c) ? "true" : "false");
                });
        };
        auto sellmeier = [&add](S key, auto member) {
            add(
                "crystal", key,
                [member](C& c, S const& v, K const& k) {
                    auto l = parse_list(v, k);
                    if (l.size() != 4)
                        k.fail("expected 4 coefficients a, b, c, d", v);
                    member(c) = {l[0], l[1], l[2], l[3]};
                },
                [member](C const& c) {
                    auto s = member(c);
                    return fmt_list(std::vector<double>{s.a, s.b, s.c, s.d});
                });
        };

        integer("grid", "nx", [](auto& c) -> auto& { return c.grid.nx; });
        integer("grid", "ny", [](auto& c) -> auto& { return c.grid.ny; });
        integer("grid", "nt", [](auto& c) -> auto& { return c.grid.nt; });
        integer("grid", "nz", [](auto& c) -> auto& { return c.grid.nz; });
        scaled("grid", "dx_um", [](auto& c) -> auto& { return c.grid.dx; }, 1e-6);
        scaled("grid", "dy_um", [](auto& c) -> auto& { return c.grid.dy; }, 1e-6);
        scaled("grid", "dt_ps", [](auto& c) -> auto& { return c.grid.dt; }, 1e-12);
        add(
            "grid", "t_center_ps",
            [](C& c, S const& v, K const& k) {
                if (trim(v) == "auto")
                {
                    c.t_center_auto = true;
                    return;
                }
                c.t_center_auto = false;
                c.grid.t_center = parse_double(v, k) * 1e-12;
            },
            [](C const& c) {
                return c.t_center_auto ? S("auto") : fmt_num(c.grid.t_center / 1e-12);
            });
        integer("grid", "guard_cells",
                [](auto& c) -> auto& { return c.propagator.guard_cells; });
        scaled("grid", "guard_absorption",
               [](auto& c) -> auto& { return c.propagator.guard_absorption; }, 1);

        scaled("crystal", "length_mm", [](auto& c) -> auto& { return c.crystal.length; }, 1e-3);
        add(
            "crystal", "theta_deg",
            [](C& c, S const& v, K const& k) {
                if (trim(v) == "auto")
                {
                    c.theta_auto = true;
                    return;
                }
                c.theta_auto = false;
                c.crystal.theta_deg = parse_double(v, k);
            },
            [](C const& c) {
                return c.theta_auto ? S("auto") : fmt_num(c.crystal.theta_deg);
            });
        scaled("crystal", "phi_deg", [](auto& c) -> auto& { return c.crystal.phi_deg; }, 1);
        scaled("crystal", "lambda_pump_nm", [](auto& c) -> auto& { return c.crystal.lambda_p; }, 1e-9);
        scaled("crystal", "lambda_signal_nm", [](auto& c) -> auto& { return c.crystal.lambda_s; }, 1e-9);
        scaled("crystal", "lambda_idler_nm", [](auto& c) -> auto& { return c.crystal.lambda_i; }, 1e-9);
        boolean("crystal", "paraxial", [](auto& c) -> auto& { return c.crystal.paraxial; });
        add(
            "crystal", "walkoff_mrad",
            [](C& c, S const& v, K const& k) {
                if (trim(v) == "auto")
                    c.crystal.walkoff.reset();
                else
                    c.crystal.walkoff = parse_double(v, k) * 1e-3;
            },
            [](C const& c) {
                return c.crystal.walkoff ? fmt_num(*c.crystal.walkoff / 1e-3) : S("auto");
            });
        sellmeier("sellmeier_ordinary",
                  [](auto& c) -> auto& { return c.crystal.ordinary; });
        sellmeier("sellmeier_extraordinary",
                  [](auto& c) -> auto& { return c.crystal.extraordinary; });

        scaled("pump", "fwhm_mm", [](auto& c) -> auto& { return c.pump.fwhm; }, 1e-3);
        scaled("pump", "duration_ps", [](auto& c) -> auto& { return c.pump.duration; }, 1e-12);
        scaled("pump", "gain", [](auto& c) -> auto& { return c.pump.gain; }, 1);
        add(
            "pump", "gain_list",
            [](C& c, S const& v, K const& k) { c.gains = parse_list(v, k); },
            [](C const& c) { return fmt_list(c.gains); });
        boolean("pump", "plane_wave", [](auto& c) -> auto& { return c.pump.plane_wave; });

        scaled("detector", "lens_f_mm", [](auto& c) -> auto& { return c.detector.lens_f; }, 1e-3);
        scaled("detector", "wavelength_nm", [](auto& c) -> auto& { return c.detector.wavelength; }, 1e-9);
        scaled("detector", "pixel_pitch_um", [](auto& c) -> auto& { return c.detector.pixel_pitch; }, 1e-6);
        integer("detector", "region_width_px", [](auto& c) -> auto& { return c.detector.region_width; });
        integer("detector", "region_height_px", [](auto& c) -> auto& { return c.detector.region_height; });
        integer("detector", "region_offset_x_px", [](auto& c) -> auto& { return c.detector.region_offset_x; });
        integer("detector", "region_offset_y_px", [](auto& c) -> auto& { return c.detector.region_offset_y; });
        scaled("detector", "eta", [](auto& c) -> auto& { return c.detector.eta; }, 1);
        scaled("detector", "sigma_b_pe", [](auto& c) -> auto& { return c.detector.sigma_b; }, 1);
        boolean("detector", "axis_on_pixel_corner",
                [](auto& c) -> auto& { return c.detector.axis_on_pixel_corner; });
        for (auto [key, axis] : {std::pair{"center_x_px", 0}, std::pair{"center_y_px", 1}})
        {
            auto member = [axis](auto& c) -> auto& {
                return axis == 0 ? c.detector.center_x : c.detector.center_y;
            };
            add(
                "detector", key,
                [member](C& c, S const& v, K const& k) {
                    if (trim(v) == "auto")
                        member(c).reset();
                    else
                        member(c) = parse_double(v, k);
                },
                [member](C const& c) {
                    auto& o = member(c);
                    return o ? fmt_num(*o) : S("auto");
                });
        }

        add(
            "analysis", "shift_list",
            [](C& c, S const& v, K const& k) { c.analysis.shift_list = parse_list(v, k); },
            [](C const& c) { return fmt_list(c.analysis.shift_list); });
        add(
            "analysis", "shift_unit",
            [](C& c, S const& v, K const& k) {
                auto s = trim(v);
                if (s == "xcoh")
                    c.analysis.shift_in_xcoh = true;
                else if (s == "px")
                    c.analysis.shift_in_xcoh = false;
                else
                    k.fail("expected xcoh or px", v);
            },
            [](C const& c) { return S(c.analysis.shift_in_xcoh ? "xcoh" : "px"); });
        add(
            "analysis", "binning_list",
            [](C& c, S const& v, K const& k) {
                c.analysis.binning_list.clear();
                for (auto const& s : split_list(v))
                    c.analysis.binning_list.push_back(to_int(parse_int(s, k), k, v));
            },
            [](C const& c) { return fmt_list(c.analysis.binning_list); });
        integer("analysis", "shift_range_px",
                [](auto& c) -> auto& { return c.analysis.shift_range_px; });
        add(
            "analysis", "pairing",
            [](C& c, S const& v, K const& k) {
                auto s = trim(v);
                if (s == "nearest")
                    c.analysis.pairing = Pairing::nearest;
                else if (s == "bilinear")
                    c.analysis.pairing = Pairing::bilinear;
                else
                    k.fail("expected nearest or bilinear", v);
            },
            [](C const& c) {
                return S(c.analysis.pairing == Pairing::nearest ? "nearest" : "bilinear");
            });
        add(
            "analysis", "csv_pixel_pitch_um",
            [](C& c, S const& v, K const& k) {
                if (trim(v) == "none")
                    c.analysis.csv_pixel_pitch.reset();
                else
                    c.analysis.csv_pixel_pitch = parse_double(v, k) * 1e-6;
            },
            [](C const& c) {
                return c.analysis.csv_pixel_pitch
                           ? fmt_num(*c.analysis.csv_pixel_pitch / 1e-6)
                           : S("none");
            });
        scaled("analysis", "csv_sigma_b_pe",
               [](auto& c) -> auto& { return c.analysis.csv_sigma_b; }, 1);

        add(
            "io", "out_dir",
            [](C& c, S const& v, K const&) { c.io.out_dir = trim(v); },
            [](C const& c) { return c.io.out_dir; }, false);
        add(
            "io", "seed",
            [](C& c, S const& v, K const& k) { c.io.seed = parse_u64(v, k); },
            [](C const& c) { return std::to_string(c.io.seed); });
        integer("io", "shots", [](auto& c) -> auto& { return c.io.shots; });
        add(
            "io", "workers",
            [](C& c, S const& v, K const& k) {
                c.io.workers = to_int(parse_int(v, k), k, v);
            },
            [](C const& c) { return std::to_string(c.io.workers); }, false);
        return t;
    }();
    return table;
}

inline KeySpec const* find_key(std::string const& section, std::string const& key)
{
    for (auto const& k : key_table())
        if (k.section == section && k.key == key)
            return &k;
    return nullptr;
}

inline void set_key(RunConfig& c,
                    std::string const& section,
                    std::string const& key,
                    std::string const& value,
                    std::string const& origin)
{
    auto const* entry = find_key(section, key);
    if (!entry)
        throw ConfigError(origin + ": unknown key [" + section + "] " + key);
    entry->set(c, value, KeyContext{section, key});
}
}  // namespace detail

//! Desk-scale defaults
inline RunConfig default_config()
{
    RunConfig c;
    c.pump.gain = 3.25;
    return c;
}

/*!
 * Check every block, resolve automatic values (cut angle, time origin) and
 * throw ConfigError naming the block and key at the first problem.
 */
inline void resolve(RunConfig& c)
{
    auto fail = [](std::string const& where, std::string const& what) {
        throw ConfigError("[" + where + ": " + what);
    };
    try
    {
        if (c.theta_auto)
            c.crystal.theta_deg = 45;
        validate(c.crystal);
        if (c.theta_auto)
            c.crystal.theta_deg = matching_angle(c.crystal);
        dispersion_coeffs(c.crystal);
    }
    catch (ConfigError const& e)
    {
        fail("crystal]", e.what());
    }
    auto disp = dispersion_coeffs(c.crystal);
    if (c.t_center_auto)
        c.grid.t_center = c.pump.plane_wave
                              ? 0
                              : centered_time_origin(disp, c.crystal.length);
    c.grid.dz = 0;
    try
    {
        c.grid = make_grid(c.grid, c.pump.plane_wave ? 0 : c.pump.fwhm,
                           c.crystal.length);
    }
    catch (ConfigError const& e)
    {
        fail("grid]", e.what());
    }
    try
    {
        validate(c.pump);
    }
    catch (ConfigError const& e)
    {
        fail("pump]", e.what());
    }
    for (double g : c.gain_list())
    {
        if (!(g >= 0) || !std::isfinite(g))
            fail("pump] gain_list", "gains must be finite and non-negative");
        if (g * c.grid.dz / c.crystal.length >= 0.1)
        {
            std::ostringstream os;
            os << "gain " << g << " needs nz > " << std::ceil(10 * g)
               << " to keep g*dz/L below 0.1";
            fail("grid] nz", os.str());
        }
    }
    if (c.propagator.guard_cells < 0 || !(c.propagator.guard_absorption >= 0)
        || c.propagator.guard_absorption > 1)
        fail("grid] guard_cells/guard_absorption", "out of range");
    try
    {
        pixel_geometry(c.grid, c.detector);
    }
    catch (ConfigError const& e)
    {
        fail("detector]", e.what());
    }
    if (c.analysis.shift_range_px < 1)
        fail("analysis] shift_range_px", "must be at least 1");
    for (int n : c.analysis.binning_list)
        if (n < 1)
            fail("analysis] binning_list", "factors must be at least 1");
    if (c.analysis.csv_pixel_pitch && !(*c.analysis.csv_pixel_pitch > 0))
        fail("analysis] csv_pixel_pitch_um", "must be positive");
    if (c.analysis.csv_sigma_b < 0)
        fail("analysis] csv_sigma_b_pe", "must be non-negative");
    if (c.io.shots < 1)
        fail("io] shots", "must be at least 1");
    if (c.io.workers < 1)
        fail("io] workers", "must be at least 1");
    if (c.io.out_dir.empty())
        fail("io] out_dir", "must not be empty");
}

/*!
 * Parse INI text over the defaults. Unknown sections and keys are errors.
 */
inline RunConfig parse_config(std::istream& is,
                              std::string const& origin = "config",
                              RunConfig base = default_config())
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try
    {
        pt::ini_parser::read_ini(is, tree);
    }
    catch (pt::ini_parser_error const& e)
    {
        throw ConfigError(origin + ": " + e.what());
    }
    for (auto const& [section, body] : tree)
    {
        if (body.empty() && !body.data().empty())
            throw ConfigError(origin + ": key '" + section
                              + "' outside of any [section]");
        for (auto const& [key, val] : body)
            detail::set_key(base, section, key, val.data(), origin);
    }
    return base;
}

inline RunConfig load_config(std::filesystem::path const& path,
                             RunConfig base = default_config())
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file " + path.string());
    return parse_config(is, path.string(), std::move(base));
}

/*!
 * Apply TWINBEAM_<SECTION>_<KEY>=value overrides. Variables with the prefix
 * that name no known key are rejected.
 */
inline void apply_env_overrides(RunConfig& c,
                                std::vector<std::string> const& environment)
{
    std::string const prefix = "TWINBEAM_";
    for (auto const& entry : environment)
    {
        if (entry.rfind(prefix, 0) != 0)
            continue;
        auto eq = entry.find('=');
        if (eq == std::string::npos)
            continue;
        std::string name = entry.substr(prefix.size(), eq - prefix.size());
        for (auto& ch : name)
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        auto us = name.find('_');
        std::string section = us == std::string::npos ? name : name.substr(0, us);
        std::string key = us == std::string::npos ? "" : name.substr(us + 1);
        detail::set_key(c, section, key, entry.substr(eq + 1),
                        "environment " + entry.substr(0, eq));
    }
}

inline std::vector<std::string> process_environment()
{
    std::vector<std::string> env;
    for (char** e = environ; e && *e; ++e)
        env.emplace_back(*e);
    return env;
}

//! Canonical INI rendering of every key
inline std::string to_ini(RunConfig const& c)
{
    std::ostringstream os;
    std::string section;
    for (auto const& k : detail::key_table())
    {
        if (k.section != section)
        {
            if (!section.empty())
                os << '\n';
            section = k.section;
            os << '[' << section << "]\n";
        }
        os << k.key << " = " << k.get(c) << '\n';
    }
    return os.str();
}

//! Fingerprint of everything that affects results (not paths or workers)
inline std::string config_digest(RunConfig const& c)
{
    Fnv1a h;
    for (auto const& k : detail::key_table())
    {
        if (!k.in_digest)
            continue;
        h.add(k.section).add(k.key).add(k.get(c));
    }
    return hex_digest(h.value());
}

}  // namespace twinbeam
