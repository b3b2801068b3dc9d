#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "framestore.hpp"
#include "pipeline.hpp"
#include "stats.hpp"

namespace twinbeam::cli {

enum ExitCode : int
{
    ok = 0,
    other_error = 1,
    config_error = 2,
    divergence = 3,
    selftest_failed = 4
};

struct ShotRecord
{
    std::filesystem::path file;
    FramePair frames;
    double gain = 0;
    int shot = 0;
};

inline std::string frame_file_name(double gain, int shot)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "g%.4f_shot%04d.twb", gain, shot);
    return buf;
}

//! Run fn(i) for i in [0, n) on a pool of worker threads
template<class F>
void parallel_for(int n, int workers, F&& fn)
{
    workers = std::max(1, std::min(workers, n));
    if (workers == 1)
    {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
    {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++)
            {
                try
                {
                    fn(i);
                }
                catch (...)
                {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!err)
                        err = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (err)
        std::rethrow_exception(err);
}

/*!
 * Simulate io.shots frame pairs at every gain of the configuration.
 *
 * Shot k at gain index j uses seed (io.seed, j * shots + k), so results do
 * not depend on the worker count or scheduling.
 */
inline std::vector<ShotRecord> simulate_all(RunConfig const& cfg, std::ostream& log)
{
    auto gains = cfg.gain_list();
    int shots = cfg.io.shots;
    std::vector<ShotRecord> out(gains.size() * shots);
    std::mutex log_mutex;
    for (std::size_t j = 0; j < gains.size(); ++j)
    {
        PumpConfig pump = cfg.pump;
        pump.gain = gains[j];
        Simulation sim(cfg.grid, cfg.crystal, pump, cfg.detector, cfg.propagator);
        parallel_for(shots, cfg.io.workers, [&](int k) {
            auto t0 = std::chrono::steady_clock::now();
            ShotSeed seed{cfg.io.seed, static_cast<std::uint64_t>(j * shots + k)};
            auto& rec = out[j * shots + k];
            rec.frames = sim.shot(seed);
            rec.gain = gains[j];
            rec.shot = k;
            rec.file = frame_file_name(gains[j], k);
            double sum = (rec.frames.signal.sum() + rec.frames.idler.sum())
                         / static_cast<double>(rec.frames.signal.size());
            double dt = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
            std::lock_guard<std::mutex> lock(log_mutex);
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "gain %.4g shot %d/%d  <n_s+n_i> = %.4g pe  (%.2f s)\n",
                          gains[j], k + 1, shots, sum, dt);
            log << buf << std::flush;
        });
    }
    return out;
}

inline void write_text_file(std::filesystem::path const& p, std::string const& s)
{
    std::ofstream os(p);
    if (!os)
        throw std::runtime_error("cannot write " + p.string());
    os << s;
}

inline std::filesystem::path prepare_out(RunConfig const& cfg)
{
    std::filesystem::path out(cfg.io.out_dir);
    std::filesystem::create_directories(out);
    write_text_file(out / "config.ini", to_ini(cfg));
    return out;
}

inline int cmd_simulate(RunConfig const& cfg, std::ostream& log)
{
    auto out = prepare_out(cfg);
    std::filesystem::create_directories(out / "frames");
    auto recs = simulate_all(cfg, log);
    std::ostringstream csv;
    csv << "# simulate config_digest=" << config_digest(cfg) << "\n";
    csv << "file,gain,shot,master_seed,shot_index,mean_sum_pe\n";
    csv.precision(10);
    for (auto& r : recs)
    {
        write_frames(r.frames, out / "frames" / r.file);
        auto const& m = r.frames.signal.meta();
        csv << ("frames/" + r.file.string()) << ',' << r.gain << ',' << r.shot
            << ',' << m.seed.master_seed << ',' << m.seed.shot_index << ','
            << (r.frames.signal.sum() + r.frames.idler.sum())
                   / static_cast<double>(r.frames.signal.size())
            << '\n';
    }
    write_text_file(out / "simulate.csv", csv.str());
    log << "wrote " << recs.size() << " frame files to " << (out / "frames")
        << "\n";
    return ok;
}

//! Load .twb frame files, or two-block CSV files with the configured pitch
inline std::vector<ShotRecord>
load_inputs(RunConfig const& cfg, std::vector<std::string> const& inputs)
{
    std::vector<ShotRecord> recs;
    int k = 0;
    for (auto const& in : inputs)
    {
        std::filesystem::path p(in);
        ShotRecord r;
        r.file = p;
        if (p.extension() == ".csv")
        {
            CsvMetadata md;
            md.pixel_pitch = cfg.analysis.csv_pixel_pitch;
            md.sigma_b = cfg.analysis.csv_sigma_b;
            md.eta = cfg.detector.eta;
            r.frames = import_csv(p, md);
        }
        else
        {
            r.frames = read_frames(p);
        }
        r.gain = r.frames.signal.meta().gain;
        r.shot = k++;
        recs.push_back(std::move(r));
    }
    if (recs.empty())
        throw AnalysisError("no frame files given");
    return recs;
}

inline AnalysisOptions analysis_options(RunConfig const& cfg)
{
    AnalysisOptions o;
    o.pairing = cfg.analysis.pairing;
    o.gamma.shift_range = cfg.analysis.shift_range_px;
    return o;
}

inline std::string join(std::vector<std::string> const& v, char sep)
{
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k)
    {
        if (k)
            s += sep;
        s += v[k];
    }
    return s;
}

inline std::string gnuplot_stub(std::string const& csv,
                                std::string const& xcol,
                                std::string const& xlabel,
                                bool snl_line)
{
    std::ostringstream os;
    os << "set datafile separator ','\n"
       << "set datafile commentschars '#'\n"
       << "set key autotitle columnhead\n"
       << "set xlabel '" << xlabel << "'\n"
       << "set ylabel 'normalized difference variance'\n"
       << "plot '" << csv << "' using " << xcol << ":2 with points pt 7";
    if (snl_line)
        os << ", 1 with lines dt 2 title 'SNL'";
    os << "\n";
    return os.str();
}

inline int cmd_analyze(RunConfig const& cfg,
                       std::vector<std::string> const& inputs,
                       std::ostream& log)
{
    auto recs = load_inputs(cfg, inputs);
    auto out = prepare_out(cfg);
    auto opts = analysis_options(cfg);

    std::ostringstream csv, scatter;
    std::string digest = config_digest(cfg);
    csv << "# analyze config_digest=" << digest << "\n";
    csv << "file,master_seed,shot_index,gain,pairs,mean_s_pe,mean_i_pe,"
           "mean_sum_pe,var_s_pe2,var_i_pe2,cov_pe2,var_diff_raw_pe2,"
           "var_diff_pe2,sigma_tilde,gamma_zero,gamma_peak,xcoh_x_px,"
           "xcoh_y_px,xcoh_x_m,xcoh_y_m,gamma_lim,m_estimate,cs_margin,"
           "cs_violated,sub_shot_noise,flags\n";
    scatter << "# scatter config_digest=" << digest << "\n";
    scatter << "mean_sum_pe,sigma_tilde,gain,master_seed,shot_index\n";
    csv.precision(10);
    scatter.precision(10);
    int below = 0;
    for (auto const& r : recs)
    {
        auto rep = analyze(r.frames.signal, r.frames.idler, opts);
        auto const& m = r.frames.signal.meta();
        auto warnings = rep.warnings;
        if (rep.sigma_tilde <= 1e-12 && !rep.negative_variance)
            warnings.push_back("zero difference variance");
        for (auto& w : warnings)
            std::replace(w.begin(), w.end(), ',', ';');
        bool sub = rep.sigma_tilde < 1;
        below += sub;
        csv << r.file.string() << ',' << m.seed.master_seed << ','
            << m.seed.shot_index << ',' << m.gain << ',' << rep.pairs << ','
            << rep.mean_s << ',' << rep.mean_i << ',' << rep.mean_sum << ','
            << rep.var_s << ',' << rep.var_i << ',' << rep.cov << ','
            << rep.var_diff_raw << ',' << rep.var_diff << ',' << rep.sigma_tilde
            << ',' << rep.gamma_zero << ',' << rep.gamma_peak << ','
            << rep.xcoh_x_px << ',' << rep.xcoh_y_px << ',' << rep.xcoh_x_m
            << ',' << rep.xcoh_y_m << ',' << rep.gamma_lim << ','
            << rep.m_estimate << ',' << rep.cs.margin << ','
            << (rep.cs.violated ? 1 : 0) << ',' << (sub ? 1 : 0) << ','
            << join(warnings, '|') << '\n';
        scatter << rep.mean_sum << ',' << rep.sigma_tilde << ',' << m.gain << ','
                << m.seed.master_seed << ',' << m.seed.shot_index << '\n';
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "%s: <n_s+n_i> = %.4g pe  sigma~^2 = %.4f  gamma = %.3f  "
                      "CS margin = %.4g\n",
                      r.file.filename().string().c_str(), rep.mean_sum,
                      rep.sigma_tilde, rep.gamma_zero, rep.cs.margin);
        log << buf;
    }
    write_text_file(out / "analysis.csv", csv.str());
    write_text_file(out / "scatter.csv", scatter.str());
    write_text_file(out / "scatter.gp",
                    gnuplot_stub("scatter.csv", "1", "<n_s+n_i> (pe)", true));
    log << below << "/" << recs.size() << " frame pairs below the shot-noise "
        << "level\n";
    return ok;
}

enum class SweepMode
{
    gain,
    binning,
    misalignment
};

inline int cmd_sweep(RunConfig const& cfg,
                     SweepMode mode,
                     std::vector<std::string> const& inputs,
                     std::ostream& log)
{
    std::vector<ShotRecord> recs = inputs.empty() ? simulate_all(cfg, log)
                                                  : load_inputs(cfg, inputs);
    auto out = prepare_out(cfg);
    std::vector<FramePair> shots;
    for (auto& r : recs)
        shots.push_back(r.frames);
    auto opts = analysis_options(cfg);

    SweepTable table;
    std::string name, xlabel, xcol = "1";
    switch (mode)
    {
        case SweepMode::gain:
            table = sweep_gain(shots, opts);
            name = "gain";
            xlabel = "<n_s+n_i> (pe)";
            xcol = "3";
            break;
        case SweepMode::binning:
            table = sweep_binning(shots, cfg.analysis.binning_list, opts);
            name = "binning";
            xlabel = "binning N";
            break;
        case SweepMode::misalignment: {
            MisalignmentOptions mo;
            mo.analysis = opts;
            mo.in_coherence_units = cfg.analysis.shift_in_xcoh;
            auto res = sweep_misalignment(shots, cfg.analysis.shift_list, mo);
            table = std::move(res.table);
            name = "misalignment";
            xlabel = cfg.analysis.shift_in_xcoh ? "shift (x_coh)" : "shift (px)";
            break;
        }
    }
    std::ostringstream csv;
    write_csv(csv, table, config_digest(cfg));
    auto file = "sweep_" + name + ".csv";
    write_text_file(out / file, csv.str());
    write_text_file(out / ("sweep_" + name + ".gp"),
                    gnuplot_stub(file, xcol, xlabel, true));
    for (auto const& [k, v] : table.fits)
        log << "fit " << k << " = " << v << "\n";
    log << "wrote " << (out / file) << " (" << table.rows.size() << " rows)\n";
    return ok;
}

/*!
 * Calibration and oracle battery; every check prints one PASS/FAIL line.
 */
inline int cmd_selftest(std::ostream& log)
{
    int failures = 0;
    auto report = [&](bool pass, std::string const& name, double value) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s  %-46s %.6g\n", pass ? "PASS" : "FAIL",
                      name.c_str(), value);
        log << buf;
        failures += !pass;
    };

    // Coherent beam split onto two regions with additive camera noise
    double sigma_b = 7;
    auto fp = coherent_split_frames(200, 40, 100, {2024, 0});
    for (auto* f : {&fp.signal, &fp.idler})
        *f = add_background(std::move(*f), sigma_b, {2024, 0});
    AnalysisOptions o;
    o.with_gamma = false;
    auto rep = analyze(fp.signal, fp.idler, o);
    report(std::abs(rep.sigma_tilde - 1) <= 0.1,
           "coherent split, background corrected", rep.sigma_tilde);
    double raw = rep.var_diff_raw / rep.mean_sum;
    report(raw > 1, "coherent split, uncorrected exceeds SNL", raw);

    double worst = 0;
    for (double g : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0})
        for (double d : {0.0, 100.0, 1e3, 1e4})
        {
            auto b = plane_wave_gain(g, d, 4e-3);
            worst = std::max(worst, std::abs(std::norm(b.u) - std::norm(b.v) - 1)
                                        / std::norm(b.u));
        }
    report(worst < 1e-12, "plane-wave |U|^2 - |V|^2 = 1", worst);

    GridSpec grid;
    grid.nx = grid.ny = 8;
    grid.nt = 4;
    grid.dx = grid.dy = 27.5e-6;
    grid.dt = 0.25e-12;
    CrystalConfig crystal;
    crystal.theta_deg = matching_angle(crystal);
    PumpConfig pump;
    pump.plane_wave = true;
    for (double g : {0.5, 1.0, 2.0})
    {
        pump.gain = g;
        grid.nz = static_cast<int>(std::ceil(g * 12)) + 8;
        Propagator prop(grid, crystal, pump);
        ComplexField as(prop.grid(), Polarization::ordinary);
        ComplexField ai(prop.grid(), Polarization::extraordinary);
        double amp = 1 / std::sqrt(static_cast<double>(as.size()));
        for (auto& a : as.data())
            a = amp;
        prop.evolve(as, ai, {0, 0});
        double n = std::norm(fft_forward(ai)(0, 0, 0));
        double expect = std::pow(std::sinh(g), 2);
        report(std::abs(n / expect - 1) < 0.01,
               "seeded plane-wave idler / sinh^2(g) at g=" + detail::fmt_num(g),
               n / expect);
    }
    log << (failures ? "selftest FAILED\n" : "selftest passed\n");
    return failures ? selftest_failed : ok;
}

}  // namespace twinbeam::cli
