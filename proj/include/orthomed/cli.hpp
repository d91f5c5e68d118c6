#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "orthomed/json_io.hpp"
#include "orthomed/multi_z.hpp"
#include "orthomed/ortho_mid.hpp"
#include "orthomed/parallel.hpp"
#include "orthomed/sim_harness.hpp"

namespace orthomed::cli {

enum class Command { Fit, Simulate, Bands, ScoreTrace, Generate };

inline std::string_view to_string(Command c)
{
    switch (c) {
    case Command::Fit: return "fit";
    case Command::Simulate: return "simulate";
    case Command::Bands: return "bands";
    case Command::ScoreTrace: return "score-trace";
    case Command::Generate: return "generate";
    }
    return "fit";
}

inline std::optional<Command> parse_command(std::string_view s)
{
    for (Command c : {Command::Fit, Command::Simulate, Command::Bands, Command::ScoreTrace, Command::Generate}) {
        if (to_string(c) == s) {
            return c;
        }
    }
    return std::nullopt;
}

inline constexpr int kExitOk = 0;
inline constexpr int kExitCompute = 1;
inline constexpr int kExitUsage = 2;

/// Everything a run depends on. `threads` only affects speed, never output.
struct RunConfig {
    Command command = Command::Fit;
    std::string input;
    std::string output;
    /// Secondary CSV output: score trace (fit), band table (bands) or long
    /// table (simulate).
    std::string csv;
    std::string algorithm = "alg1";
    /// Unset means 0.1 / log n, resolved after the data are loaded.
    std::optional<double> gamma;
    double c0 = 1.1;
    double c = 1.1;
    double xi = 0.05;
    std::uint64_t seed = 0;
    int threads = 1;
    std::optional<int> reps;
    bool grid = false;
    bool full = false;
    std::optional<double> r2y;
    std::optional<double> r2d;
    std::string profile = "exact10";
    std::vector<std::string> methods;
    int bootstrap_draws = kDefaultBootstrapDraws;
    std::vector<double> truth;
    bool no_penalty_intercept = false;
    std::string jacobian = "instrument";
    std::optional<double> bandwidth_constant;
    int n = 250;
    int p = 300;
    int targets = 0;

    bool operator==(const RunConfig&) const = default;
};

inline Json to_json(const RunConfig& c)
{
    auto opt = [](const auto& o) { return o ? Json(*o) : Json(nullptr); };
    return {{"command", to_string(c.command)},
            {"input", c.input},
            {"output", c.output},
            {"csv", c.csv},
            {"algorithm", c.algorithm},
            {"gamma", opt(c.gamma)},
            {"c0", c.c0},
            {"c", c.c},
            {"xi", c.xi},
            {"seed", c.seed},
            {"threads", c.threads},
            {"reps", opt(c.reps)},
            {"grid", c.grid},
            {"full", c.full},
            {"r2y", opt(c.r2y)},
            {"r2d", opt(c.r2d)},
            {"profile", c.profile},
            {"methods", c.methods},
            {"bootstrap_draws", c.bootstrap_draws},
            {"truth", c.truth},
            {"no_penalty_intercept", c.no_penalty_intercept},
            {"jacobian", c.jacobian},
            {"bandwidth_constant", opt(c.bandwidth_constant)},
            {"n", c.n},
            {"p", c.p},
            {"targets", c.targets}};
}

inline RunConfig config_from_json(const Json& j)
{
    auto opt_d = [&](const char* key) {
        return j.at(key).is_null() ? std::optional<double>() : std::optional<double>(j.at(key).get<double>());
    };
    RunConfig c;
    const auto command = parse_command(j.at("command").get<std::string>());
    if (!command) {
        throw Error(ErrorCode::Parse, "unknown command in configuration");
    }
    c.command = *command;
    c.input = j.at("input").get<std::string>();
    c.output = j.at("output").get<std::string>();
    c.csv = j.at("csv").get<std::string>();
    c.algorithm = j.at("algorithm").get<std::string>();
    c.gamma = opt_d("gamma");
    c.c0 = j.at("c0").get<double>();
    c.c = j.at("c").get<double>();
    c.xi = j.at("xi").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<int>();
    c.reps = j.at("reps").is_null() ? std::optional<int>() : std::optional<int>(j.at("reps").get<int>());
    c.grid = j.at("grid").get<bool>();
    c.full = j.at("full").get<bool>();
    c.r2y = opt_d("r2y");
    c.r2d = opt_d("r2d");
    c.profile = j.at("profile").get<std::string>();
    c.methods = j.at("methods").get<std::vector<std::string>>();
    c.bootstrap_draws = j.at("bootstrap_draws").get<int>();
    c.truth = j.at("truth").get<std::vector<double>>();
    c.no_penalty_intercept = j.at("no_penalty_intercept").get<bool>();
    c.jacobian = j.at("jacobian").get<std::string>();
    c.bandwidth_constant = opt_d("bandwidth_constant");
    c.n = j.at("n").get<int>();
    c.p = j.at("p").get<int>();
    c.targets = j.at("targets").get<int>();
    return c;
}

/// Every problem with the configuration, so they can be reported together.
inline std::vector<std::string> validate(const RunConfig& c)
{
    std::vector<std::string> errs;
    const bool needs_input = c.command == Command::Fit || c.command == Command::Bands || c.command == Command::ScoreTrace;
    if (needs_input && c.input.empty()) {
        errs.push_back("--input is required for " + std::string(to_string(c.command)));
    }
    if (!needs_input && !c.input.empty()) {
        errs.push_back("--input is not used by " + std::string(to_string(c.command)));
    }
    if (c.command == Command::Generate && c.output.empty()) {
        errs.push_back("--output is required for generate");
    }
    if (!(c.xi > 0.0 && c.xi < 1.0)) {
        errs.push_back("--xi must lie in (0, 1)");
    }
    if (c.gamma && !(*c.gamma > 0.0 && *c.gamma < 1.0)) {
        errs.push_back("--gamma must lie in (0, 1)");
    }
    if (!(c.c0 > 1.0)) {
        errs.push_back("--c0 must exceed 1");
    }
    if (!(c.c > 1.0)) {
        errs.push_back("--c must exceed 1");
    }
    if (c.threads < 1) {
        errs.push_back("--threads must be at least 1");
    }
    if (!parse_algorithm(c.algorithm)) {
        errs.push_back("--algorithm must be one of alg1, alg2, double, onestep");
    }
    if (c.jacobian != "instrument" && c.jacobian != "treatment") {
        errs.push_back("--jacobian must be instrument or treatment");
    }
    if (c.bandwidth_constant && !(*c.bandwidth_constant > 0.0)) {
        errs.push_back("--bandwidth-constant must be positive");
    }
    if (c.profile != "exact10" && c.profile != "polydecay") {
        errs.push_back("--profile must be exact10 or polydecay");
    }
    for (const auto& m : c.methods) {
        if (!parse_method(m)) {
            errs.push_back("unknown method '" + m + "'");
        }
    }
    if (c.reps && *c.reps < 1) {
        errs.push_back("--reps must be at least 1");
    }
    if (c.bootstrap_draws < 200) {
        errs.push_back("--bootstrap-draws must be at least 200");
    }
    if ((c.grid || c.full) && (c.r2y || c.r2d)) {
        errs.push_back("--r2y/--r2d select a single design and conflict with --grid/--full");
    }
    for (const auto& r : {c.r2y, c.r2d}) {
        if (r && !(*r >= 0.0 && *r < 1.0)) {
            errs.push_back("--r2y and --r2d must lie in [0, 1)");
            break;
        }
    }
    if ((c.grid || c.full || c.reps || !c.methods.empty()) && c.command != Command::Simulate) {
        errs.push_back("--grid, --full, --reps and --methods only apply to simulate");
    }
    if (!c.truth.empty() && c.command != Command::Bands) {
        errs.push_back("--truth only applies to bands");
    }
    if (c.command == Command::Generate && (c.n < 10 || c.p < 2)) {
        errs.push_back("generate needs --n >= 10 and --p >= 2");
    }
    if (c.targets < 0) {
        errs.push_back("--targets must be non-negative");
    }
    return errs;
}

inline OrthoConfig ortho_config(const RunConfig& c)
{
    OrthoConfig o;
    o.algorithm = parse_algorithm(c.algorithm).value_or(Algorithm::Alg1);
    o.penalty.gamma = c.gamma;
    o.penalty.c0 = c.c0;
    o.penalty.penalize_intercept = !c.no_penalty_intercept;
    o.lasso.gamma = c.gamma;
    o.lasso.c = c.c;
    o.lasso.penalize_intercept = !c.no_penalty_intercept;
    o.xi = c.xi;
    o.jacobian = parse_jacobian_form(c.jacobian);
    if (c.bandwidth_constant) {
        o.bandwidth_constant = *c.bandwidth_constant;
    }
    o.seed = c.seed;
    return o;
}

/// Builds the CLI11 parser writing into `c`. Subcommand selection is read
/// back by parse_cli.
inline void build_app(CLI::App& app, RunConfig& c)
{
    app.require_subcommand(1);
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--input", c.input, "Input CSV");
        sub->add_option("--output", c.output, "Output path (stdout when omitted)");
        sub->add_option("--csv", c.csv, "Secondary CSV output");
        sub->add_option("--algorithm", c.algorithm, "alg1, alg2, double or onestep");
        sub->add_option("--gamma", c.gamma, "Penalty gamma for both stages (default 0.1/log n)");
        sub->add_option("--c0", c.c0, "Step (i) penalty constant");
        sub->add_option("--c", c.c, "Step (ii) lasso constant");
        sub->add_option("--xi", c.xi, "Significance level");
        sub->add_option("--seed", c.seed, "Random seed");
        sub->add_option("--threads", c.threads, "Worker threads (default ORTHOMED_THREADS or 1)");
        sub->add_option("--reps", c.reps, "Replications per design");
        sub->add_flag("--grid", c.grid, "Run the {0,.3,.5,.7,.9}^2 grid");
        sub->add_flag("--full", c.full, "Run the full {0,...,.9}^2 grid (multi-hour)");
        sub->add_option("--r2y", c.r2y, "Single-design R^2 of the outcome equation");
        sub->add_option("--r2d", c.r2d, "Single-design R^2 of the treatment equation");
        sub->add_option("--profile", c.profile, "exact10 or polydecay");
        sub->add_option("--methods", c.methods, "Methods to simulate")->delimiter(',');
        sub->add_option("--bootstrap-draws", c.bootstrap_draws, "Multiplier bootstrap draws");
        sub->add_option("--truth", c.truth, "True coefficients for band coverage")->delimiter(',');
        sub->add_flag("--no-penalty-intercept", c.no_penalty_intercept, "Leave all-ones columns unpenalized");
        sub->add_option("--jacobian", c.jacobian, "Powell J form: instrument or treatment");
        sub->add_option("--bandwidth-constant", c.bandwidth_constant, "c_h in h = c_h sd n^{-1/3}");
        sub->add_option("--n", c.n, "generate: sample size");
        sub->add_option("--p", c.p, "generate: control columns including the intercept");
        sub->add_option("--targets", c.targets, "generate: number of target columns (0 = single treatment)");
    };
    add_common(app.add_subcommand("fit", "Inference on alpha from a y,d,x1..xp CSV"));
    add_common(app.add_subcommand("simulate", "Monte Carlo rejection, coverage and error tables"));
    add_common(app.add_subcommand("bands", "Simultaneous bands from a y,d1..dK,x1..xp CSV"));
    add_common(app.add_subcommand("score-trace", "Dump n L_n(alpha) over the search interval as CSV"));
    add_common(app.add_subcommand("generate", "Write a simulated CSV input"));
}

struct ParseOutcome {
    std::optional<RunConfig> config;
    int exit_code = kExitOk;
    std::string message;
};

inline ParseOutcome parse_cli(std::vector<std::string> args)
{
    RunConfig c;
    c.threads = threads_from_env(1);
    CLI::App app{"orthomed: inference on a treatment effect in high-dimensional median regression"};
    build_app(app, c);
    ParseOutcome out;
    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out.message = app.help();
        return out;
    } catch (const CLI::CallForAllHelp&) {
        out.message = app.help("", CLI::AppFormatMode::All);
        return out;
    } catch (const CLI::ParseError& e) {
        out.exit_code = kExitUsage;
        out.message = std::string("usage error: ") + e.what() + "\n" + "run with --help for usage\n";
        return out;
    }
    for (const auto* sub : app.get_subcommands()) {
        c.command = *parse_command(sub->get_name());
    }
    const auto errs = validate(c);
    if (!errs.empty()) {
        out.exit_code = kExitUsage;
        for (const auto& e : errs) {
            out.message += "usage error: " + e + "\n";
        }
        return out;
    }
    out.config = c;
    return out;
}

namespace detail {

inline std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::vector<Method> methods_of(const RunConfig& c)
{
    if (c.methods.empty()) {
        return default_methods();
    }
    std::vector<Method> out;
    for (const auto& m : c.methods) {
        out.push_back(*parse_method(m));
    }
    return out;
}

inline void write_text(const std::string& path, const std::string& text)
{
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error(ErrorCode::InvalidArgument, "cannot open output file '" + path + "'");
    }
    f << text;
}

inline Json run_fit(const RunConfig& c, std::string* trace_csv)
{
    const Sample sample = read_sample_csv(c.input);
    const OrthoConfig oc = ortho_config(c);
    const InferenceResult r = run_algorithm(sample, oc);
    if (trace_csv != nullptr) {
        std::ostringstream os;
        write_score_trace_csv(os, r.score_trace);
        *trace_csv = os.str();
    }
    Json out = to_json(r);
    out["gamma_resolved"] = c.gamma.value_or(default_gamma(sample.n()));
    return out;
}

inline Json run_simulate(const RunConfig& c, std::string* table_csv)
{
    DesignSpec base;
    base.seed = c.seed;
    base.theta_profile = c.profile == "polydecay" ? ThetaProfile::PolyDecayAll : ThetaProfile::ExactSparse10;
    std::vector<DesignSpec> designs;
    if (c.grid || c.full) {
        designs = grid_designs(base, default_r2_levels(c.full));
    } else {
        base.r2y = c.r2y.value_or(0.5);
        base.r2d = c.r2d.value_or(0.5);
        designs.push_back(base);
    }
    const int reps = c.reps.value_or(c.full ? 500 : 200);
    const GridResult g = run_grid(designs, reps, methods_of(c), c.threads, ortho_config(c));
    if (table_csv != nullptr) {
        std::ostringstream os;
        write_grid_csv(os, g);
        *table_csv = os.str();
    }
    return to_json(g);
}

inline Json run_bands(const RunConfig& c, std::string* bands_csv, bool& degenerate)
{
    const MultiTargetData data = read_multi_csv(c.input);
    if (!c.truth.empty() && static_cast<Eigen::Index>(c.truth.size()) != data.D.cols()) {
        throw Error(ErrorCode::InvalidArgument, "--truth has " + std::to_string(c.truth.size()) + " values for " +
                                                    std::to_string(data.D.cols()) + " targets");
    }
    const OrthoConfig oc = ortho_config(c);
    const TargetEstimates est = fit_all_targets(data.y, data.D, data.U, oc, c.threads);
    const InfluenceMatrix inf = influence_matrix(est);
    degenerate = inf.targets.empty();
    Json out;
    Json status = Json::array();
    for (int j = 0; j < est.targets(); ++j) {
        const auto& st = est.status[static_cast<std::size_t>(j)];
        status.push_back({{"target", j + 1}, {"ok", st.ok}, {"error", st.error}});
    }
    out["targets"] = est.targets();
    out["usable_targets"] = inf.targets.size();
    out["status"] = status;
    if (degenerate) {
        return out;
    }
    const BootstrapResult boot =
        multiplier_bootstrap(inf.phi, c.bootstrap_draws, c.xi, bootstrap_seed(c.seed), c.threads);
    const auto simultaneous = simultaneous_bands(est, boot.c_hat);
    const auto marginal = marginal_bands(est, c.xi);
    Vector truth;
    if (!c.truth.empty()) {
        truth = Eigen::Map<const Vector>(c.truth.data(), static_cast<Eigen::Index>(c.truth.size()));
    }
    Json sim = Json::array();
    Json marg = Json::array();
    for (std::size_t k = 0; k < simultaneous.size(); ++k) {
        std::optional<double> t;
        if (truth.size()) {
            t = truth(simultaneous[k].target);
        }
        Json s = to_json(simultaneous[k], t);
        Json m = to_json(marginal[k], t);
        s["target"] = simultaneous[k].target + 1;
        m["target"] = marginal[k].target + 1;
        sim.push_back(s);
        marg.push_back(m);
    }
    out["bootstrap"] = {{"draws", c.bootstrap_draws}, {"c_hat", boot.c_hat}, {"xi", c.xi}};
    out["simultaneous"] = sim;
    out["marginal"] = marg;
    if (bands_csv != nullptr) {
        std::ostringstream os;
        write_bands_csv(os, simultaneous, truth.size() ? &truth : nullptr);
        *bands_csv = os.str();
    }
    return out;
}

inline void run_generate(const RunConfig& c)
{
    std::ostringstream os;
    if (c.targets > 0) {
        MultiTargetSpec spec;
        spec.n = c.n;
        spec.p1 = c.targets;
        spec.pu = std::max(c.p, c.targets + 1);
        spec.r2y = c.r2y.value_or(0.5);
        spec.seed = c.seed;
        RngStream rng(spec.seed, 0);
        const MultiTargetSample s = generate_multi(spec, rng);
        write_multi_csv(os, s.y, s.D, s.U);
    } else {
        DesignSpec spec;
        spec.n = c.n;
        spec.p = c.p;
        spec.r2y = c.r2y.value_or(0.5);
        spec.r2d = c.r2d.value_or(0.5);
        spec.theta_profile = c.profile == "polydecay" ? ThetaProfile::PolyDecayAll : ThetaProfile::ExactSparse10;
        spec.seed = c.seed;
        RngStream rng(spec.seed, 0);
        write_sample_csv(os, generate(prepare(spec), rng));
    }
    write_text(c.output, os.str());
}

inline int exit_code_for(ErrorCode code)
{
    return code == ErrorCode::InvalidArgument || code == ErrorCode::Parse ? kExitUsage : kExitCompute;
}

} // namespace detail

/// Report skeleton. The `runtime` block (threads, timestamp, wall time) is
/// the only part allowed to differ between reruns with the same config.
inline Json report_header(const RunConfig& c)
{
    Json cfg = to_json(c);
    cfg.erase("threads");
    return {{"schema_version", kSchemaVersion},
            {"library", {{"name", "orthomed"}, {"version", kLibraryVersion}}},
            {"command", to_string(c.command)},
            {"seed", c.seed},
            {"config", cfg}};
}

/// Copy of a report with the runtime block removed, for rerun comparisons.
inline Json deterministic_part(Json report)
{
    report.erase("runtime");
    return report;
}

struct RunOutput {
    int exit_code = kExitOk;
    Json report;
    std::string csv;
};

/// Runs a validated configuration. Nothing is written; see run().
inline RunOutput execute(const RunConfig& c)
{
    const auto start = std::chrono::steady_clock::now();
    RunOutput out;
    out.report = report_header(c);
    try {
        std::string* csv = c.csv.empty() && c.command != Command::ScoreTrace ? nullptr : &out.csv;
        switch (c.command) {
        case Command::Fit:
        case Command::ScoreTrace: out.report["result"] = detail::run_fit(c, csv); break;
        case Command::Simulate: out.report["result"] = detail::run_simulate(c, csv); break;
        case Command::Bands: {
            bool degenerate = false;
            out.report["result"] = detail::run_bands(c, csv, degenerate);
            if (degenerate) {
                out.exit_code = kExitCompute;
                out.report["error"] = {{"code", to_string(ErrorCode::InstrumentDegenerate)},
                                       {"message", "no target produced a usable estimate"}};
            }
            break;
        }
        case Command::Generate: detail::run_generate(c); break;
        }
    } catch (const Error& e) {
        out.exit_code = detail::exit_code_for(e.code());
        out.report["error"] = {{"code", to_string(e.code())}, {"message", e.what()}};
    } catch (const std::exception& e) {
        out.exit_code = kExitCompute;
        out.report["error"] = {{"code", "Internal"}, {"message", e.what()}};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.report["runtime"] = {{"threads", c.threads}, {"timestamp", detail::utc_timestamp()}, {"wall_time_seconds", wall}};
    return out;
}

/// Executes and writes outputs. fit/simulate/bands write the JSON report to
/// --output (stdout if empty) and the CSV to --csv; score-trace writes the
/// CSV to --output; generate writes the data CSV to --output.
inline int run(const RunConfig& c)
{
    const RunOutput out = execute(c);
    try {
        if (c.command == Command::ScoreTrace) {
            if (out.exit_code == kExitOk) {
                detail::write_text(c.output, out.csv);
            }
        } else if (c.command != Command::Generate || out.exit_code != kExitOk) {
            detail::write_text(c.command == Command::Generate ? std::string() : c.output, out.report.dump(2) + "\n");
            if (!c.csv.empty() && out.exit_code == kExitOk) {
                detail::write_text(c.csv, out.csv);
            }
        }
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
    }
    if (out.exit_code != kExitOk && out.report.contains("error")) {
        std::cerr << "error: " << out.report["error"]["message"].get<std::string>() << '\n';
    }
    return out.exit_code;
}

inline int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    const ParseOutcome parsed = parse_cli(args);
    if (!parsed.config) {
        (parsed.exit_code == kExitOk ? std::cout : std::cerr) << parsed.message;
        return parsed.exit_code;
    }
    return run(*parsed.config);
}

} // namespace orthomed::cli
