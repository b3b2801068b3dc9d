#pragma once

#include <stdexcept>
#include <string>

namespace twinbeam {

class ConfigError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Raised when a propagated field stops being finite.
class NumericalDivergence : public std::runtime_error
{
  public:
    NumericalDivergence(std::string const& what, int step)
        : std::runtime_error(what), step_(step)
    {
    }
    int step() const noexcept { return step_; }

  private:
    int step_;
};

class AnalysisError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class FrameFileError : public std::runtime_error
{
  public:
    enum class Kind
    {
        io,
        bad_magic,
        version,
        truncated,
        checksum,
        parse
    };

    FrameFileError(Kind kind, std::string const& what)
        : std::runtime_error(what), kind_(kind)
    {
    }
    Kind kind() const noexcept { return kind_; }

  private:
    Kind kind_;
};

}  // namespace twinbeam
