#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "errors.hpp"
#include "hitting.hpp"
#include "io.hpp"
#include "mellin.hpp"
#include "processes.hpp"
#include "sampling.hpp"
#include "specfun.hpp"
#include "verify.hpp"

#ifndef SQRTLAB_VERSION
#define SQRTLAB_VERSION "unknown"
#endif

namespace sqrtlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Command { specfun, sample, hit, mellin_compare, verify, report };

inline const char* to_string(Command c) {
    switch (c) {
        case Command::specfun: return "specfun";
        case Command::sample: return "sample";
        case Command::hit: return "hit";
        case Command::mellin_compare: return "mellin-compare";
        case Command::verify: return "verify";
        case Command::report: return "report";
    }
    return "?";
}

struct RunConfig {
    Command command = Command::verify;
    ProblemSpec spec;
    std::size_t n_paths = 100000;
    SimParams sim;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::string output_dir = ".";
    std::vector<double> a_grid;
    double z_max = 3.0;
    std::size_t n_allowance = 100000;

    // specfun
    std::string fn = "phi";
    double alpha = 1.0, beta = 2.0, z = 0.5;
    // sample
    std::string what = "Z";
    double alpha_shift = 1.0;
    double path_horizon = 10.0;
    // verify
    std::string identity;
    bool all = false;
    // report
    std::string input;

    std::string help;  // non-empty: print and exit 0
};

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j{{"command", to_string(c.command)},
                     {"nu", c.spec.nu},
                     {"drift", sqrtlab::to_string(c.spec.drift)},
                     {"b", c.spec.b},
                     {"c", c.spec.c},
                     {"boundary", sqrtlab::to_string(c.spec.boundary)},
                     {"n", c.n_paths},
                     {"step", c.sim.step},
                     {"grid-level", c.sim.grid_level},
                     {"horizon", c.sim.horizon},
                     {"bracket-tol", c.sim.bracket_tol},
                     {"seed", c.seed},
                     {"workers", c.workers},
                     {"output-dir", c.output_dir},
                     {"a-grid", c.a_grid},
                     {"z-max", c.z_max},
                     {"n-allowance", c.n_allowance}};
    switch (c.command) {
        case Command::specfun: j.update({{"fn", c.fn}, {"alpha", c.alpha}, {"beta", c.beta}, {"z", c.z}}); break;
        case Command::sample: j.update({{"what", c.what}, {"alpha-shift", c.alpha_shift}}); break;
        case Command::verify: j.update({{"identity", c.identity}, {"all", c.all}}); break;
        case Command::report: j["input"] = c.input; break;
        default: break;
    }
    return j;
}

namespace detail {

inline std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw UsageError("invalid a-grid entry '" + item + "'");
        }
        if (used != item.size()) throw UsageError("invalid a-grid entry '" + item + "'");
        out.push_back(v);
    }
    return out;
}

struct Parsed {
    RunConfig cfg;
    std::string grid, drift = "minus", boundary = "minus", transform, config_file;
    std::optional<std::uint64_t> seed;
};

inline void build(CLI::App& app, Parsed& p) {
    auto& c = p.cfg;
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    app.add_option("--config", p.config_file, "Flat JSON file of option values; command-line flags win");
    app.add_option("--nu", c.spec.nu, "Bessel index nu >= 0")->capture_default_str();
    app.add_option("--drift", p.drift, "Brownian drift sign: plus (+nu) or minus (-nu)")
        ->check(CLI::IsMember({"plus", "minus"}))
        ->capture_default_str();
    app.add_option("--b", c.spec.b, "Boundary parameter b > 0")->capture_default_str();
    app.add_option("--c", c.spec.c, "Boundary parameter c > 0, c != b")->capture_default_str();
    app.add_option("--boundary", p.boundary, "Boundary sign: minus for sigma_-, plus for sigma_+")
        ->check(CLI::IsMember({"plus", "minus"}))
        ->capture_default_str();
    app.add_option("--n", c.n_paths, "Number of paths or draws")->capture_default_str();
    app.add_option("--step", c.sim.step, "Base Brownian time step")->capture_default_str();
    app.add_option("--grid-level", c.sim.grid_level, "Refinement level; effective step is step/2^level")
        ->capture_default_str();
    app.add_option("--horizon", c.sim.horizon, "Brownian-clock safeguard per path")->capture_default_str();
    app.add_option("--bracket-tol", c.sim.bracket_tol, "Hitting-time bracket target (0 means 1e-6*b)")
        ->capture_default_str();
    app.add_option("--seed", p.seed, "Master seed (falls back to SQRTLAB_SEED, then 1)");
    app.add_option("--workers", c.workers, "Worker threads")->capture_default_str();
    app.add_option("--output-dir", c.output_dir, "Directory for CSV and JSON outputs")->capture_default_str();
    app.add_option("--a-grid", p.grid, "Comma-separated exponents");
    app.add_option("--z-max", c.z_max, "z-score threshold")->capture_default_str();
    app.add_option("--n-allowance", c.n_allowance, "Paths rerun two grid levels finer for the allowance")
        ->capture_default_str();

    auto* sf = app.add_subcommand("specfun", "Evaluate a special function and print it");
    sf->add_option("--fn", c.fn, "phi, psi, gamma, lower_gamma, upper_gamma, gamma_p, gamma_q")
        ->check(CLI::IsMember({"phi", "psi", "gamma", "lower_gamma", "upper_gamma", "gamma_p", "gamma_q"}))
        ->capture_default_str();
    sf->add_option("--alpha", c.alpha, "First parameter (order for the gamma family)")->capture_default_str();
    sf->add_option("--beta", c.beta, "Second parameter of phi/psi")->capture_default_str();
    sf->add_option("--z", c.z, "Argument")->capture_default_str();

    auto* sa = app.add_subcommand("sample", "Draw samples to CSV");
    sa->add_option("--what", c.what, "Z, tilted, perpetuity or path")
        ->check(CLI::IsMember({"Z", "tilted", "perpetuity", "path"}))
        ->capture_default_str();
    sa->add_option("--alpha-shift", c.alpha_shift, "Tilt location for --what tilted")->capture_default_str();
    sa->add_option("--path-horizon", c.path_horizon, "Length of a dumped path")->capture_default_str();

    app.add_subcommand("hit", "Simulate hitting times to CSV");

    auto* mc = app.add_subcommand("mellin-compare", "Empirical vs closed-form Mellin transform");
    mc->add_option("--transform", p.transform, "sigma-minus or sigma-plus (sets --boundary)")
        ->check(CLI::IsMember({"sigma-minus", "sigma-plus"}));

    auto* ve = app.add_subcommand("verify", "Run identity checks");
    ve->add_option("--identity", c.identity,
                   "rae_sigma_minus, factorization_blc, factorization_bgc, density_relation, abs_continuity, "
                   "dufresne, lamperti");
    ve->add_flag("--all", c.all, "Run the full suite over the standard grid");

    auto* re = app.add_subcommand("report", "Render a saved verify JSON as text");
    re->add_option("--input", c.input, "Path to a verify JSON report")->required();
}

inline std::vector<std::string> given_options(const CLI::App& app) {
    std::vector<std::string> out;
    auto collect = [&](const CLI::App& a) {
        for (const auto* o : a.get_options())
            if (o->count() > 0) out.push_back(o->get_name(false, true));
    };
    collect(app);
    for (const auto* s : app.get_subcommands()) collect(*s);
    return out;
}

inline bool known_option(const CLI::App& app, const std::string& key) {
    auto has = [&](const CLI::App& a) {
        for (const auto* o : a.get_options())
            if (o->check_lname(key)) return true;
        return false;
    };
    if (has(app)) return true;
    for (const auto* s : app.get_subcommands()) if (has(*s)) return true;
    return false;
}

// "--key value" pairs for config entries not already on the command line.
inline std::vector<std::string> config_args(const std::string& path, const CLI::App& app,
                                            const std::vector<std::string>& given) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception&) {
        throw UsageError("config file '" + path + "' is not valid JSON");
    }
    if (!j.is_object()) throw UsageError("config file must hold a flat JSON object");
    std::vector<std::string> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = it.key();
        for (auto& ch : key)
            if (ch == '_') ch = '-';
        if (key == "config" || !known_option(app, key)) throw UsageError("unknown config key '" + it.key() + "'");
        if (std::find(given.begin(), given.end(), "--" + key) != given.end()) continue;
        const auto& v = it.value();
        if (v.is_boolean()) {
            if (v.get<bool>()) out.push_back("--" + key);
            continue;
        }
        std::string s;
        if (v.is_string())
            s = v.get<std::string>();
        else if (v.is_array()) {
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].dump();
        } else if (v.is_number())
            s = v.dump();
        else
            throw UsageError("config key '" + it.key() + "' must be a number, string, boolean or list");
        out.push_back("--" + key);
        out.push_back(s);
    }
    return out;
}

inline Command command_of(const CLI::App& app) {
    const auto name = app.get_subcommands().at(0)->get_name();
    if (name == "specfun") return Command::specfun;
    if (name == "sample") return Command::sample;
    if (name == "hit") return Command::hit;
    if (name == "mellin-compare") return Command::mellin_compare;
    if (name == "verify") return Command::verify;
    return Command::report;
}

}  // namespace detail

using EnvLookup = std::function<const char*(const char*)>;

/// Parses `args` (without the program name). Flags override config-file
/// values; the seed falls back to SQRTLAB_SEED. Throws UsageError naming the
/// violated precondition.
inline RunConfig parse_config(const std::vector<std::string>& args, const EnvLookup& env = [](const char* k) {
    return std::getenv(k);
}) {
    auto run = [](std::vector<std::string> a, detail::Parsed& p, CLI::App& app) {
        detail::build(app, p);
        std::reverse(a.begin(), a.end());  // CLI11 consumes the vector from the back
        try {
            app.parse(a);
        } catch (const CLI::CallForHelp&) {
            p.cfg.help = app.help();
        } catch (const CLI::CallForAllHelp&) {
            p.cfg.help = app.help("", CLI::AppFormatMode::All);
        } catch (const CLI::ParseError& e) {
            throw UsageError(e.what());
        }
    };
    detail::Parsed first;
    CLI::App app1{"sqrtlab: Bessel hitting times at square-root boundaries"};
    run(args, first, app1);
    if (!first.cfg.help.empty()) return first.cfg;

    detail::Parsed p;
    CLI::App app{"sqrtlab: Bessel hitting times at square-root boundaries"};
    if (!first.config_file.empty()) {
        auto all = args;
        for (auto& s : detail::config_args(first.config_file, app1, detail::given_options(app1))) all.push_back(s);
        run(all, p, app);
    } else {
        run(args, p, app);
    }
    RunConfig c = p.cfg;
    if (!c.help.empty()) return c;
    c.command = detail::command_of(app);
    c.spec.drift = p.drift == "plus" ? Drift::plus : Drift::minus;
    c.spec.boundary = p.boundary == "plus" ? Boundary::plus : Boundary::minus;
    if (!p.transform.empty()) c.spec.boundary = p.transform == "sigma-plus" ? Boundary::plus : Boundary::minus;
    if (!p.grid.empty()) c.a_grid = detail::parse_grid(p.grid);
    if (p.seed) {
        c.seed = *p.seed;
    } else if (const char* s = env("SQRTLAB_SEED"); s && *s) {
        try {
            std::size_t used = 0;
            c.seed = std::stoull(s, &used);
            if (used != std::string(s).size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
            throw UsageError(std::string("SQRTLAB_SEED is not an unsigned integer: ") + s);
        }
    }

    try {
        if (c.command != Command::specfun && c.command != Command::report) {
            if (c.command != Command::sample || c.what == "path") c.spec.validate();
            c.sim.validate();
            if (c.n_paths < 1) throw DomainError("n must be at least 1");
            if (c.workers < 1) throw DomainError("workers must be at least 1");
            if (!(c.z_max > 0.0)) throw DomainError("z-max must be positive");
        }
        if (c.command == Command::sample && (c.what == "Z" || c.what == "tilted" || c.what == "perpetuity") &&
            !(c.spec.nu > 0.0))
            throw DomainError("nu must be positive for this sampler");
        if (c.command == Command::verify && c.all == !c.identity.empty())
            throw DomainError("verify needs exactly one of --identity or --all");
    } catch (const DomainError& e) {
        throw UsageError(e.what());
    }
    return c;
}

namespace detail {

inline std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
    std::filesystem::create_directories(c.output_dir);
    return std::filesystem::path(c.output_dir) / name;
}

/// Writes `<stem>.json` next to a CSV: full config plus version.
inline void write_sidecar(const RunConfig& c, const std::string& stem, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["config"] = to_json(c);
    j["version"] = SQRTLAB_VERSION;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    std::ofstream(out_path(c, stem + ".json")) << j.dump(2) << '\n';
}

inline double eval_specfun(const RunConfig& c) {
    if (c.fn == "phi") return kummer_phi({c.alpha, c.beta, c.z});
    if (c.fn == "psi") return tricomi_psi({c.alpha, c.beta, c.z});
    if (c.fn == "gamma") return gamma_fn(c.alpha);
    if (c.fn == "lower_gamma") return lower_incomplete_gamma(c.alpha, c.z);
    if (c.fn == "upper_gamma") return upper_incomplete_gamma(c.alpha, c.z);
    if (c.fn == "gamma_p") return gamma_p(c.alpha, c.z);
    return gamma_q(c.alpha, c.z);
}

inline int run_sample(const RunConfig& c, std::ostream& out) {
    const StreamLayout layout{c.seed, stream_tag("cli/sample/" + c.what)};
    auto f = out_path(c, "samples.csv");
    std::ofstream csv(f);
    if (c.what == "path") {
        const auto p = simulate_bm_drift(layout.path(0), c.spec.bm_drift(), c.sim.step, c.path_horizon, c.sim.grid_level);
        write_path_csv(csv, p, c.spec.b, c.spec.boundary == Boundary::plus ? EtaSign::plus : EtaSign::minus);
    } else if (c.what == "perpetuity") {
        std::vector<PerpetuityResult> r(c.n_paths);
        parallel_for(c.n_paths, c.workers, [&](std::size_t i) { r[i] = sample_perpetuity(layout.path(i), c.spec.nu); });
        csv << "index,value,converged\n";
        for (std::size_t i = 0; i < r.size(); ++i) csv << i << ',' << fmt_real(r[i].value) << ',' << r[i].converged << '\n';
    } else {
        std::vector<double> z(c.n_paths);
        parallel_for(c.n_paths, c.workers, [&](std::size_t i) {
            auto s = layout.path(i);
            z[i] = sample_Z(s, c.spec.nu);
        });
        if (c.what == "Z") {
            csv << "index,value\n";
            for (std::size_t i = 0; i < z.size(); ++i) csv << i << ',' << fmt_real(z[i]) << '\n';
        } else {
            const auto w = weights_Z_tilted(z, c.spec.nu, c.alpha_shift);
            csv << "index,value,weight\n";
            for (std::size_t i = 0; i < w.size(); ++i)
                csv << i << ',' << fmt_real(w[i].value) << ',' << fmt_real(w[i].weight) << '\n';
        }
    }
    write_sidecar(c, "samples");
    out << f.string() << '\n';
    return kExitOk;
}

inline int run_hit(const RunConfig& c, std::ostream& out) {
    const auto batch = collect(hit_layout(c.seed, c.spec), c.spec, c.n_paths, c.sim, c.workers);
    auto f = out_path(c, "hits.csv");
    {
        std::ofstream csv(f);
        write_hits_csv(csv, batch.results);
    }
    const auto& s = batch.summary;
    write_sidecar(c, "hits",
                  {{"summary",
                    {{"n", s.n},
                     {"hits", s.hits},
                     {"never", s.nevers},
                     {"censored", s.censored},
                     {"inconclusive", s.inconclusive},
                     {"hit_fraction", s.hit_fraction},
                     {"mean_bracket_width", s.mean_bracket_width}}}});
    out << "hit_fraction " << fmt_real(s.hit_fraction) << '\n';
    return kExitOk;
}

inline int run_mellin(const RunConfig& c, std::ostream& out) {
    MellinRun run;
    run.spec = c.spec;
    run.sim = c.sim;
    run.n = c.n_paths;
    run.n_allowance = c.n_allowance;
    run.seed = c.seed;
    run.workers = c.workers;
    run.z_max = c.z_max;
    run.a_grid = c.a_grid;
    const auto rep = mellin_compare(run);
    {
        std::ofstream csv(out_path(c, "mellin_compare.csv"));
        write_comparison_csv(csv, rep);
    }
    write_sidecar(c, "mellin_compare", {{"report", to_json(rep)}});
    write_comparison_csv(out, rep);
    out << "verdict " << (rep.pass ? "pass" : "fail") << '\n';
    return rep.pass ? kExitOk : kExitFail;
}

inline IdentityReport run_identity(const RunConfig& c, const VerifyParams& vp) {
    ProblemSpec s = c.spec;
    auto with = [&](Drift d, Boundary b) {
        s.drift = d;
        s.boundary = b;
        return s;
    };
    if (c.identity == "rae_sigma_minus") return verify_rae_sigma_minus(with(Drift::minus, Boundary::minus), vp);
    if (c.identity == "factorization_blc") return verify_factorization_blc(with(Drift::minus, Boundary::plus), vp);
    if (c.identity == "factorization_bgc") return verify_factorization_bgc(with(Drift::minus, Boundary::plus), vp);
    if (c.identity == "density_relation") return verify_density_relation(with(Drift::plus, Boundary::plus), vp);
    if (c.identity == "abs_continuity") return verify_abs_continuity(with(Drift::minus, Boundary::minus), vp);
    if (c.identity == "dufresne") return verify_dufresne(s.nu, vp);
    if (c.identity == "lamperti") return verify_lamperti(s.nu, vp);
    throw UsageError("unknown identity '" + c.identity + "'");
}

inline int run_verify(const RunConfig& c, std::ostream& out) {
    VerifyParams vp;
    vp.seed = c.seed;
    vp.workers = c.workers;
    vp.n = c.n_paths;
    vp.n_allowance = c.n_allowance;
    vp.sim = c.sim;
    vp.z_max = c.z_max;
    if (!c.all) vp.dufresne_n = vp.lamperti_n = c.n_paths;  // --n is the draw count for a single check
    AggregateReport agg;
    if (c.all)
        agg = run_all(vp);
    else
        agg.identities.push_back(run_identity(c, vp));
    for (std::size_t i = 0; i < agg.identities.size(); ++i) {
        std::ofstream csv(out_path(c, "verify_" + std::to_string(i) + "_" + agg.identities[i].name + ".csv"));
        write_identity_csv(csv, agg.identities[i]);
    }
    auto j = to_json(agg);
    j["config"] = to_json(c);
    j["version"] = SQRTLAB_VERSION;
    std::ofstream(out_path(c, "verify.json")) << j.dump(2) << '\n';
    std::ofstream txt(out_path(c, "verify.txt"));
    write_text_report(txt, j);
    write_text_report(out, j);
    return agg.pass() ? kExitOk : kExitFail;
}

inline int run_report(const RunConfig& c, std::ostream& out) {
    std::ifstream in(c.input);
    if (!in) throw UsageError("cannot read report '" + c.input + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception&) {
        throw UsageError("report '" + c.input + "' is not valid JSON");
    }
    write_text_report(out, j);
    return j.value("verdict", "fail") == "pass" ? kExitOk : kExitFail;
}

}  // namespace detail

/// Runs a parsed config; returns the process exit code.
inline int dispatch(const RunConfig& c, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        switch (c.command) {
            case Command::specfun: out << fmt_real(detail::eval_specfun(c)) << '\n'; return kExitOk;
            case Command::sample: return detail::run_sample(c, out);
            case Command::hit: return detail::run_hit(c, out);
            case Command::mellin_compare: return detail::run_mellin(c, out);
            case Command::verify: return detail::run_verify(c, out);
            case Command::report: return detail::run_report(c, out);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UnsupportedConfiguration& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << " (partial " << fmt_real(e.partial()) << ")\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        // Resource, inconclusive and degenerate-batch failures.
        err << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitUsage;
}

/// parse + dispatch with the exit-code mapping.
inline int main_entry(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr,
                      const EnvLookup& env = [](const char* k) { return std::getenv(k); }) {
    RunConfig c;
    try {
        c = parse_config(args, env);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\nrun with --help for options\n";
        return kExitUsage;
    }
    if (!c.help.empty()) {
        out << c.help;
        return kExitOk;
    }
    return dispatch(c, out, err);
}

}  // namespace sqrtlab::cli
