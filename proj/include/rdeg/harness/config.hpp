#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rdeg/aggregation.hpp"
#include "rdeg/errors.hpp"
#include "rdeg/problems.hpp"
#include "rdeg/protocol.hpp"

namespace rdeg::harness
{

enum class Algo
{
    rdeg,
    vanilla,
};

//! Whether α must stay in the regime covered by the deviation bound.
enum class AlphaRegime
{
    theory,   //!< α < 1/16
    extended, //!< any α the trim fraction still covers
};

enum class AttackName
{
    none,
    signflip,
    gaussian,
    shift,
    collusive,
};

/*!
 * A fully validated experiment description.
 *
 * `eta` and `delta` hold resolved values; the *_auto flags remember that
 * they were derived so that sweeps re-derive them after an override.
 */
struct RunConfig
{
    std::string problem;
    Algo algo = Algo::rdeg;
    std::size_t agents = 100;
    double alpha = 0.06;
    AlphaRegime alpha_regime = AlphaRegime::theory;
    double delta = 0.0;
    bool delta_auto = true;
    double sigma2 = 10.0;
    double eta = 0.0;
    bool eta_auto = true;
    std::size_t rounds = 5000;
    std::uint64_t seed = 1;
    AttackName attack = AttackName::signflip;
    double attack_scale = 3.0;
    PartitionMode partition_mode = PartitionMode::fixed;
    TrimPolicy trim_policy = TrimPolicy::capped;
    std::optional<double> epsilon_cap;
    PresetParams preset;
    std::optional<double> mu; //!< explicit override, SC-SC only
};

//---------------------------------------------------------------------------//
// Number formatting / parsing
//---------------------------------------------------------------------------//

//! Shortest decimal form that parses back to the same double; '.' radix always.
inline std::string format_double(double v)
{
    char buf[64];
    auto const res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s)
{
    double v = 0.0;
    auto const* end = s.data() + s.size();
    auto const res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end || !std::isfinite(v))
        return std::nullopt;
    return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s)
{
    std::uint64_t v = 0;
    auto const* end = s.data() + s.size();
    auto const res = std::from_chars(s.data(), end, v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != end)
        return std::nullopt;
    return v;
}

inline std::string_view trim_ws(std::string_view s)
{
    auto const first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    auto const last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

//---------------------------------------------------------------------------//
// Names
//---------------------------------------------------------------------------//

inline std::string_view to_string(Algo a) { return a == Algo::rdeg ? "rdeg" : "vanilla"; }

inline std::string_view to_string(AttackName a)
{
    switch (a)
    {
    case AttackName::none: return "none";
    case AttackName::signflip: return "signflip";
    case AttackName::gaussian: return "gaussian";
    case AttackName::shift: return "shift";
    case AttackName::collusive: return "collusive";
    }
    return "?";
}

inline std::string_view to_string(AlphaRegime r)
{
    return r == AlphaRegime::theory ? "theory" : "extended";
}

inline std::string_view to_string(PartitionMode m)
{
    return m == PartitionMode::fixed ? "fixed" : "reshuffled";
}

inline std::string_view to_string(TrimPolicy p)
{
    return p == TrimPolicy::strict ? "strict" : "capped";
}

//---------------------------------------------------------------------------//
// Validation
//---------------------------------------------------------------------------//

//! Line numbers of the keys that were set explicitly, for diagnostics.
using KeyLines = std::map<std::string, std::size_t, std::less<>>;

namespace detail
{
inline std::size_t line_of(KeyLines const& lines, std::string_view key)
{
    auto const it = lines.find(key);
    return it == lines.end() ? 0 : it->second;
}
} // namespace detail

inline QuadraticGame build_problem(RunConfig const& cfg)
{
    PresetParams p = cfg.preset;
    p.sigma2 = cfg.sigma2;
    if (cfg.mu)
        p.mu = *cfg.mu;
    return make_preset(cfg.problem, p);
}

inline TrimParams build_trim_params(RunConfig const& cfg)
{
    if (cfg.trim_policy == TrimPolicy::strict)
        return TrimParams::strict(cfg.alpha, cfg.delta, cfg.agents);
    return TrimParams::capped(cfg.alpha, cfg.delta, cfg.agents, cfg.epsilon_cap);
}

/*!
 * Checks every cross-field constraint and resolves "auto" values.
 *
 * Throws ConfigError naming the violated constraint, tagged with the line of
 * the key most responsible when known.
 */
inline void validate(RunConfig& cfg, KeyLines const& lines = {})
{
    auto fail = [&](std::string const& msg, std::string_view key) -> void {
        throw ConfigError(msg, detail::line_of(lines, key));
    };

    if (cfg.problem.empty())
        fail("missing required key 'problem'", "problem");
    if (cfg.problem != kBilinearPreset && cfg.problem != kScScPreset)
    {
        fail("unknown problem '" + cfg.problem + "' (expected " + std::string(kBilinearPreset)
                 + " or " + std::string(kScScPreset) + ")",
             "problem");
    }
    if (cfg.mu && cfg.problem != kScScPreset)
        fail("'mu' only applies to " + std::string(kScScPreset), "mu");
    if (cfg.mu && !(*cfg.mu > 0.0))
        fail("mu must be positive", "mu");
    if (cfg.preset.dim == 0)
        fail("dim must be >= 1", "dim");
    if (!(cfg.preset.rho > 0.0))
        fail("rho must be positive", "rho");
    if (cfg.agents == 0)
        fail("agents must be >= 1", "agents");
    if (cfg.rounds == 0)
        fail("rounds must be >= 1", "rounds");
    if (!(cfg.sigma2 >= 0.0))
        fail("sigma2 must be >= 0", "sigma2");
    if (!(cfg.alpha >= 0.0 && cfg.alpha < 1.0))
        fail("alpha must lie in [0, 1)", "alpha");

    if (cfg.delta_auto)
    {
        double const t = static_cast<double>(cfg.rounds);
        cfg.delta = 1.0 / (4.0 * static_cast<double>(cfg.preset.dim) * t * t);
    }
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0))
        fail("delta must lie in (0, 1)", "delta");

    if (cfg.alpha_regime == AlphaRegime::theory && !(cfg.alpha < kMaxTheoryAlpha))
    {
        fail("alpha=" + format_double(cfg.alpha)
                 + " is outside [0, 1/16), the corruption regime in which the trimmed-mean"
                   " deviation bound holds (set alpha_regime=extended to run it anyway)",
             "alpha");
    }

    if (cfg.algo == Algo::rdeg)
    {
        if (cfg.agents % 2 != 0)
        {
            fail("agents=" + std::to_string(cfg.agents)
                     + " is odd; rdeg splits the agents into two equal chunks",
                 "agents");
        }
        try
        {
            (void)build_trim_params(cfg);
        }
        catch (EpsilonOutOfRange const& e)
        {
            fail(e.what(), "agents");
        }
        catch (ConfidenceOutOfRange const& e)
        {
            fail(e.what(), "delta");
        }
        catch (PreconditionError const& e)
        {
            fail(e.what(), cfg.epsilon_cap ? "epsilon_cap" : "alpha");
        }
    }

    QuadraticGame problem = [&] {
        try
        {
            return build_problem(cfg);
        }
        catch (Error const& e)
        {
            fail(std::string("problem construction failed: ") + e.what(), "problem");
        }
        throw ConfigError("unreachable");
    }();
    try
    {
        (void)problem.saddle_point();
    }
    catch (NoInteriorSaddleError const& e)
    {
        fail(std::string("problem has no interior saddle: ") + e.what(), "problem");
    }

    if (cfg.eta_auto)
        cfg.eta = default_step_size(problem);
    if (!(cfg.eta > 0.0))
        fail("eta must be positive", "eta");
}

//---------------------------------------------------------------------------//
// Parsing
//---------------------------------------------------------------------------//

namespace detail
{
template <typename T>
T parse_enum(std::string_view key, std::string_view value, std::size_t line,
             std::initializer_list<std::pair<std::string_view, T>> options)
{
    std::string allowed;
    for (auto const& [name, v] : options)
    {
        if (name == value)
            return v;
        allowed += (allowed.empty() ? "" : "|") + std::string(name);
    }
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key)
                          + " (expected " + allowed + ")",
                      line);
}
} // namespace detail

/*!
 * Parses `key=value` lines ('#' starts a comment) into a validated RunConfig.
 *
 * Keys: problem, algo, agents, alpha, alpha_regime, delta, sigma2, eta,
 * rounds, seed, attack, attack_scale, partition_mode, trim_policy, epsilon_cap, dim, rho,
 * mu, problem_seed.
 */
inline RunConfig parse_config(std::string_view text)
{
    RunConfig cfg;
    KeyLines lines;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size())
    {
        auto const nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                             : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        if (auto const hash = raw.find('#'); hash != std::string_view::npos)
            raw = raw.substr(0, hash);
        raw = trim_ws(raw);
        if (raw.empty())
            continue;
        auto const eq = raw.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("expected key=value, got '" + std::string(raw) + "'", line_no);
        std::string const key(trim_ws(raw.substr(0, eq)));
        std::string_view const value = trim_ws(raw.substr(eq + 1));
        if (lines.count(key))
            throw ConfigError("duplicate key '" + key + "'", line_no);
        lines[key] = line_no;

        auto bad = [&]() -> ConfigError {
            return ConfigError("cannot parse value '" + std::string(value) + "' for " + key,
                               line_no);
        };
        auto real = [&] {
            auto v = parse_double(value);
            if (!v)
                throw bad();
            return *v;
        };
        auto whole = [&] {
            auto v = parse_uint(value);
            if (!v)
                throw bad();
            return *v;
        };

        if (key == "problem")
            cfg.problem = std::string(value);
        else if (key == "algo")
            cfg.algo = detail::parse_enum<Algo>(key, value, line_no,
                                                {{"rdeg", Algo::rdeg}, {"vanilla", Algo::vanilla}});
        else if (key == "agents")
            cfg.agents = whole();
        else if (key == "alpha")
            cfg.alpha = real();
        else if (key == "delta")
        {
            cfg.delta_auto = value == "auto";
            if (!cfg.delta_auto)
                cfg.delta = real();
        }
        else if (key == "sigma2")
            cfg.sigma2 = real();
        else if (key == "eta")
        {
            cfg.eta_auto = value == "auto";
            if (!cfg.eta_auto)
                cfg.eta = real();
        }
        else if (key == "rounds")
            cfg.rounds = whole();
        else if (key == "seed")
            cfg.seed = whole();
        else if (key == "attack")
            cfg.attack = detail::parse_enum<AttackName>(
                key, value, line_no,
                {{"none", AttackName::none},
                 {"signflip", AttackName::signflip},
                 {"gaussian", AttackName::gaussian},
                 {"shift", AttackName::shift},
                 {"collusive", AttackName::collusive}});
        else if (key == "attack_scale")
            cfg.attack_scale = real();
        else if (key == "partition_mode")
            cfg.partition_mode = detail::parse_enum<PartitionMode>(
                key, value, line_no,
                {{"fixed", PartitionMode::fixed}, {"reshuffled", PartitionMode::reshuffled}});
        else if (key == "alpha_regime")
            cfg.alpha_regime = detail::parse_enum<AlphaRegime>(
                key, value, line_no,
                {{"theory", AlphaRegime::theory}, {"extended", AlphaRegime::extended}});
        else if (key == "trim_policy")
            cfg.trim_policy = detail::parse_enum<TrimPolicy>(
                key, value, line_no,
                {{"capped", TrimPolicy::capped}, {"strict", TrimPolicy::strict}});
        else if (key == "epsilon_cap")
        {
            if (value != "auto")
                cfg.epsilon_cap = real();
        }
        else if (key == "dim")
            cfg.preset.dim = whole();
        else if (key == "rho")
            cfg.preset.rho = real();
        else if (key == "mu")
            cfg.mu = real();
        else if (key == "problem_seed")
            cfg.preset.problem_seed = whole();
        else
            throw ConfigError("unknown key '" + key + "'", line_no);
    }
    validate(cfg, lines);
    return cfg;
}

/*!
 * Canonical key=value form with auto values resolved; parse_config on the
 * result yields an identical configuration.
 */
inline std::string to_config_text(RunConfig const& cfg)
{
    std::ostringstream os;
    os << "problem=" << cfg.problem << '\n'
       << "algo=" << to_string(cfg.algo) << '\n'
       << "agents=" << cfg.agents << '\n'
       << "alpha=" << format_double(cfg.alpha) << '\n'
       << "alpha_regime=" << to_string(cfg.alpha_regime) << '\n'
       << "delta=" << format_double(cfg.delta) << '\n'
       << "sigma2=" << format_double(cfg.sigma2) << '\n'
       << "eta=" << format_double(cfg.eta) << '\n'
       << "rounds=" << cfg.rounds << '\n'
       << "seed=" << cfg.seed << '\n'
       << "attack=" << to_string(cfg.attack) << '\n'
       << "attack_scale=" << format_double(cfg.attack_scale) << '\n'
       << "partition_mode=" << to_string(cfg.partition_mode) << '\n'
       << "trim_policy=" << to_string(cfg.trim_policy) << '\n'
       << "epsilon_cap=" << (cfg.epsilon_cap ? format_double(*cfg.epsilon_cap) : "auto") << '\n'
       << "dim=" << cfg.preset.dim << '\n'
       << "rho=" << format_double(cfg.preset.rho) << '\n'
       << "problem_seed=" << cfg.preset.problem_seed << '\n';
    if (cfg.mu)
        os << "mu=" << format_double(*cfg.mu) << '\n';
    return os.str();
}

//---------------------------------------------------------------------------//
// Sweeps
//---------------------------------------------------------------------------//

enum class SweepParam
{
    alpha,
    agents,
    sigma2,
};

inline std::string_view to_string(SweepParam p)
{
    switch (p)
    {
    case SweepParam::alpha: return "alpha";
    case SweepParam::agents: return "agents";
    case SweepParam::sigma2: return "sigma2";
    }
    return "?";
}

inline SweepParam parse_sweep_param(std::string_view s)
{
    return detail::parse_enum<SweepParam>("param", s, 0,
                                          {{"alpha", SweepParam::alpha},
                                           {"agents", SweepParam::agents},
                                           {"sigma2", SweepParam::sigma2}});
}

struct SweepSpec
{
    RunConfig base;
    SweepParam param = SweepParam::alpha;
    std::vector<double> values;
    std::size_t trials = 1;
};

//! Comma-separated list of finite numbers.
inline std::vector<double> parse_value_list(std::string_view s)
{
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size())
    {
        auto const comma = s.find(',', pos);
        auto const item = trim_ws(s.substr(pos, comma == std::string_view::npos ? s.size() - pos
                                                                              : comma - pos));
        auto v = parse_double(item);
        if (!v)
            throw ConfigError("cannot parse sweep value '" + std::string(item) + "'");
        out.push_back(*v);
        pos = comma == std::string_view::npos ? s.size() + 1 : comma + 1;
    }
    return out;
}

//! The base config with the swept field set to `value`, re-validated.
inline RunConfig derive_config(RunConfig const& base, SweepParam param, double value)
{
    RunConfig cfg = base;
    switch (param)
    {
    case SweepParam::alpha:
        // An alpha sweep probes past the theory regime on purpose.
        cfg.alpha = value;
        if (value >= kMaxTheoryAlpha)
            cfg.alpha_regime = AlphaRegime::extended;
        break;
    case SweepParam::agents:
        if (!(value >= 1.0) || value != std::floor(value))
            throw ConfigError("agent counts must be positive integers, got " + format_double(value));
        cfg.agents = static_cast<std::size_t>(value);
        break;
    case SweepParam::sigma2:
        cfg.sigma2 = value;
        break;
    }
    try
    {
        validate(cfg);
    }
    catch (ConfigError const& e)
    {
        throw ConfigError(std::string(to_string(param)) + "=" + format_double(value) + ": "
                          + e.what());
    }
    return cfg;
}

inline void validate(SweepSpec const& spec)
{
    if (spec.values.empty())
        throw ConfigError("sweep value list is empty");
    if (spec.trials == 0)
        throw ConfigError("sweep needs at least one trial");
    for (double v : spec.values)
        (void)derive_config(spec.base, spec.param, v);
}

} // namespace rdeg::harness
