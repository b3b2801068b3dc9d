#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace twinbeam {

//---------------------------------------------------------------------------//
// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//---------------------------------------------------------------------------//
struct Philox4x32
{
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) noexcept
    {
        for (int r = 0; r < 10; ++r)
        {
            if (r > 0)
            {
                key[0] += 0x9E3779B9u;
                key[1] += 0xBB67AE85u;
            }
            std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
            std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
            auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            auto lo0 = static_cast<std::uint32_t>(p0);
            auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

struct ShotSeed
{
    std::uint64_t master_seed = 0;
    std::uint64_t shot_index = 0;

    friend bool operator==(ShotSeed const&, ShotSeed const&) = default;
};

// Independent random streams within one shot.
namespace stream {
inline constexpr std::uint32_t vacuum_signal = 1;
inline constexpr std::uint32_t vacuum_idler = 2;
inline constexpr std::uint32_t loss_signal = 3;
inline constexpr std::uint32_t loss_idler = 4;
inline constexpr std::uint32_t background_signal = 5;
inline constexpr std::uint32_t background_idler = 6;
inline constexpr std::uint32_t counts_signal = 7;
inline constexpr std::uint32_t counts_idler = 8;
inline constexpr std::uint32_t test = 9;
// Guard-band vacuum: base + 2 * step + field
inline constexpr std::uint32_t guard_base = 0x1000;
}  // namespace stream

//---------------------------------------------------------------------------//
/*!
 * Random values addressed by (seed, stream, element).
 *
 * Every element index maps to one Philox block, so values are independent of
 * evaluation order and of how work is split across threads.
 */
class StreamRng
{
  public:
    StreamRng(ShotSeed seed, std::uint32_t stream_id) noexcept
        : key_{static_cast<std::uint32_t>(seed.master_seed),
               static_cast<std::uint32_t>(seed.master_seed >> 32)}
        , stream_(stream_id)
        , shot_lo_(static_cast<std::uint32_t>(seed.shot_index))
        , shot_hi_(static_cast<std::uint32_t>(seed.shot_index >> 32))
    {
    }

    Philox4x32::Counter block(std::uint64_t element) const noexcept
    {
        Philox4x32::Counter ctr{static_cast<std::uint32_t>(element),
                                stream_ ^ (static_cast<std::uint32_t>(
                                               element >> 32)
                                           << 20),
                                shot_lo_,
                                shot_hi_};
        return Philox4x32::generate(ctr, key_);
    }

    // Two uniforms: first in (0, 1], second in [0, 1)
    std::array<double, 2> uniform_pair(std::uint64_t element) const noexcept
    {
        auto b = this->block(element);
        constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
        std::uint64_t u0 = ((std::uint64_t{b[0]} << 32) | b[1]) >> 11;
        std::uint64_t u1 = ((std::uint64_t{b[2]} << 32) | b[3]) >> 11;
        return {(static_cast<double>(u0) + 1.0) * scale,
                static_cast<double>(u1) * scale};
    }

    // Pair of independent standard normals (Box-Muller)
    std::array<double, 2> normal_pair(std::uint64_t element) const noexcept
    {
        auto u = this->uniform_pair(element);
        double r = std::sqrt(-2.0 * std::log(u[0]));
        double phi = 2.0 * std::numbers::pi * u[1];
        return {r * std::cos(phi), r * std::sin(phi)};
    }

    // Circular complex Gaussian with E|z|^2 = variance
    std::complex<double>
    complex_normal(std::uint64_t element, double variance) const noexcept
    {
        auto n = this->normal_pair(element);
        double s = std::sqrt(variance / 2);
        return {s * n[0], s * n[1]};
    }

  private:
    Philox4x32::Key key_;
    std::uint32_t stream_;
    std::uint32_t shot_lo_;
    std::uint32_t shot_hi_;
};

}  // namespace twinbeam
