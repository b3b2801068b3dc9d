#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace twinbeam {

//! 64-bit FNV-1a accumulator used for configuration fingerprints
class Fnv1a
{
  public:
    Fnv1a& bytes(void const* p, std::size_t n) noexcept
    {
        auto const* c = static_cast<unsigned char const*>(p);
        for (std::size_t i = 0; i < n; ++i)
        {
            h_ ^= c[i];
            h_ *= 0x100000001b3ull;
        }
        return *this;
    }
    Fnv1a& add(double v) noexcept
    {
        auto u = std::bit_cast<std::uint64_t>(v);
        return this->bytes(&u, sizeof(u));
    }
    Fnv1a& add(std::int64_t v) noexcept { return this->bytes(&v, sizeof(v)); }
    Fnv1a& add(int v) noexcept { return this->add(std::int64_t{v}); }
    Fnv1a& add(bool v) noexcept { return this->add(std::int64_t{v}); }
    Fnv1a& add(std::uint64_t v) noexcept { return this->bytes(&v, sizeof(v)); }
    Fnv1a& add(std::string_view s) noexcept
    {
        this->add(static_cast<std::uint64_t>(s.size()));
        return this->bytes(s.data(), s.size());
    }

    std::uint64_t value() const noexcept { return h_; }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::string hex_digest(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace twinbeam
