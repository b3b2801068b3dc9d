#pragma once

#include <utility>

#include "detector.hpp"
#include "propagator.hpp"

namespace twinbeam {

/*!
 * Propagation followed by the detection chain, producing one frame pair per
 * shot.
 */
class Simulation
{
  public:
    Simulation(GridSpec const& grid,
               CrystalConfig const& crystal,
               PumpConfig const& pump,
               DetectorConfig const& det,
               PropagatorOptions const& opts = {})
        : prop_(grid, crystal, pump, opts), det_(det)
    {
        validate(det);
        pixel_geometry(prop_.grid(), det_);
    }

    Propagator const& propagator() const noexcept { return prop_; }
    DetectorConfig const& detector() const noexcept { return det_; }

    FramePair shot(ShotSeed seed) const
    {
        auto res = prop_.run(seed);
        return this->detect(res);
    }

    FramePair detect(ShotResult const& res) const
    {
        auto fs = apply_loss(far_field(res.signal_out, det_), det_.eta,
                             res.seed, stream::loss_signal);
        auto fi = apply_loss(far_field(res.idler_out, det_), det_.eta,
                             res.seed, stream::loss_idler);
        FramePair fp{integrate_pixels(fs, det_, Region::signal),
                     integrate_pixels(fi, det_, Region::idler)};
        for (auto* f : {&fp.signal, &fp.idler})
        {
            auto& m = f->meta();
            m.seed = res.seed;
            m.gain = res.gain;
            m.eta = det_.eta;
            if (det_.sigma_b > 0)
                *f = add_background(std::move(*f), det_.sigma_b, res.seed);
        }
        return fp;
    }

  private:
    Propagator prop_;
    DetectorConfig det_;
};

}  // namespace twinbeam
