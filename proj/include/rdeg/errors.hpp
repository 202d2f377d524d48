#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rdeg
{

//! Root of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error
{
public:
    using Error::Error;
};

class FeasibilityError : public Error
{
public:
    using Error::Error;
};

class PreconditionError : public Error
{
public:
    using Error::Error;
};

class EmptyInputError : public Error
{
public:
    using Error::Error;
};

class NoInteriorSaddleError : public Error
{
public:
    using Error::Error;
};

//! Trimming level ε reached 1/2, so the quantile indices would cross.
class EpsilonOutOfRange : public Error
{
public:
    EpsilonOutOfRange(std::string const& what, double epsilon, std::size_t min_agents)
        : Error(what), epsilon_(epsilon), min_agents_(min_agents)
    {
    }

    double epsilon() const noexcept { return epsilon_; }
    //! Smallest even agent count that admits the same (α, δ), or 0 when none does.
    std::size_t min_agents() const noexcept { return min_agents_; }

private:
    double epsilon_;
    std::size_t min_agents_;
};

//! δ below 4·exp(−M/2).
class ConfidenceOutOfRange : public Error
{
public:
    using Error::Error;
};

//! A NaN or infinity appeared in the server state.
class NumericalAbort : public Error
{
public:
    NumericalAbort(std::string const& what, std::size_t round) : Error(what), round_(round) {}

    std::size_t round() const noexcept { return round_; }

private:
    std::size_t round_;
};

class ConfigError : public Error
{
public:
    ConfigError(std::string const& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line)
    {
    }

    //! 1-based line of the offending entry, 0 if not tied to a line.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error
{
public:
    using Error::Error;
};

} // namespace rdeg
