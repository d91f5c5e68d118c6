#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "orthomed/core_data.hpp"
#include "orthomed/multi_z.hpp"
#include "orthomed/ortho_mid.hpp"
#include "orthomed/sim_harness.hpp"

namespace orthomed {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

#ifndef ORTHOMED_VERSION
#define ORTHOMED_VERSION "0.1.0"
#endif

inline constexpr std::string_view kLibraryVersion = ORTHOMED_VERSION;

namespace detail {

/// Non-finite values become null so the output stays valid JSON.
inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vector_json(const Vector& v)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(number(v(i)));
    }
    return out;
}

inline Json sparse_json(const Vector& v, const IndexSet& support)
{
    Json out = Json::array();
    for (int j : support) {
        out.push_back({{"index", j}, {"value", number(v(j))}});
    }
    return out;
}

inline std::string_view status_name(SolverStatus s) { return s == SolverStatus::Optimal ? "optimal" : "iteration_limit"; }

} // namespace detail

inline Json to_json(const Interval& i) { return {{"lo", detail::number(i.lo)}, {"hi", detail::number(i.hi)}}; }

inline Json to_json(const LadFit& f)
{
    return {{"alpha", detail::number(f.alpha)},
            {"beta", detail::sparse_json(f.beta, f.support)},
            {"support", f.support},
            {"objective", detail::number(f.objective)},
            {"lambda", detail::number(f.lambda)},
            {"status", detail::status_name(f.solver_status)},
            {"iterations", f.iterations},
            {"duality_gap", detail::number(f.duality_gap)},
            {"warnings", f.warnings}};
}

inline Json to_json(const LassoFit& f)
{
    return {{"theta", detail::sparse_json(f.theta, f.support)},
            {"support", f.support},
            {"lambda", detail::number(f.lambda)},
            {"loading_rounds", f.iterations_of_loadings},
            {"sweeps", f.sweeps},
            {"status", detail::status_name(f.status)}};
}

inline Json to_json(const VarianceEstimate& v)
{
    return {{"omega", detail::number(v.omega)},
            {"j_hat", detail::number(v.j_hat)},
            {"sigma2", detail::number(v.sigma2)},
            {"sigma2_homoscedastic", detail::number(v.sigma2_homoscedastic)},
            {"f_eps0", detail::number(v.f_eps0)},
            {"bandwidth", detail::number(v.bandwidth)},
            {"j_degenerate", v.j_degenerate},
            {"zero_density", v.zero_density}};
}

inline Json to_json(const ScoreRegion& r)
{
    Json pieces = Json::array();
    for (const auto& p : r.pieces) {
        pieces.push_back(to_json(p));
    }
    return {{"threshold", detail::number(r.threshold)},
            {"pieces", pieces},
            {"hull", r.empty ? Json(nullptr) : to_json(r.hull)},
            {"disconnected", r.disconnected},
            {"empty", r.empty},
            {"argmin", detail::number(r.argmin)}};
}

/// At most `max_points` (alpha, n L_n) pairs, one per cell, evenly thinned.
inline Json score_trace_json(const std::vector<ScoreCell>& cells, std::size_t max_points = 200)
{
    Json out = Json::array();
    if (cells.empty()) {
        return out;
    }
    const std::size_t stride = std::max<std::size_t>(1, (cells.size() + max_points - 1) / max_points);
    for (std::size_t k = 0; k < cells.size(); k += stride) {
        const auto& c = cells[k];
        out.push_back({detail::number(0.5 * (c.lo + c.hi)), detail::number(c.n_ln)});
    }
    return out;
}

inline Json to_json(const InferenceResult& r)
{
    const auto& d = r.diagnostics;
    return {{"algorithm", to_string(r.algorithm)},
            {"n", r.n},
            {"xi", r.xi},
            {"alpha_initial", detail::number(r.alpha_initial)},
            {"alpha_check", detail::number(r.alpha_check)},
            {"sigma_hat", detail::number(r.sigma_hat)},
            {"sigma_hat_homoscedastic", detail::number(r.sigma_hat_homoscedastic)},
            {"wald_ci", r.wald_ci ? to_json(*r.wald_ci) : Json(nullptr)},
            {"score_region", to_json(r.score_region)},
            {"n_ln_at_alpha_check", detail::number(r.n_ln_at_alpha_check)},
            {"search_interval", {{"lo", r.search.lo}, {"hi", r.search.hi}, {"b", r.search.b}}},
            {"variance", to_json(r.variance)},
            {"score_at_alpha", score_trace_json(r.score_trace)},
            {"diagnostics",
             {{"step1_support", d.step1_support},
              {"step1_lambda", detail::number(d.step1_lambda)},
              {"step1_status", detail::status_name(d.step1_status)},
              {"refit_support", d.refit_support},
              {"step2_support", d.step2_support},
              {"step2_lambda", detail::number(d.step2_lambda)},
              {"loading_rounds", d.loading_rounds},
              {"epsilon_n", 0.0},
              {"warnings", d.warnings}}}};
}

inline Json to_json(const Metrics& m)
{
    return {{"reps", m.reps},
            {"failures", m.failures},
            {"rejection_rate", detail::number(m.rejection_rate)},
            {"coverage", detail::number(m.coverage)},
            {"mean_bias", detail::number(m.mean_bias)},
            {"sd", detail::number(m.sd)},
            {"rmse", detail::number(m.rmse)}};
}

inline Json to_json(const DesignSpec& d)
{
    return {{"n", d.n},         {"p", d.p},         {"rho", d.rho},       {"r2y", d.r2y},
            {"r2d", d.r2d},     {"alpha0", d.alpha0}, {"profile", to_string(d.theta_profile)}, {"seed", d.seed}};
}

/// Rows keyed by (r2y, r2d, method) plus one provenance row per
/// replication naming the stream that produced it.
inline Json to_json(const GridResult& g)
{
    Json methods = Json::array();
    for (Method m : g.methods) {
        methods.push_back(to_string(m));
    }
    Json rows = Json::array();
    for (const auto& row : g.rows) {
        rows.push_back({{"r2y", row.design.r2y},
                        {"r2d", row.design.r2d},
                        {"method", to_string(row.method)},
                        {"metrics", to_json(row.metrics)}});
    }
    Json designs = Json::array();
    Json provenance = Json::array();
    for (std::size_t di = 0; di < g.runs.size(); ++di) {
        const auto& run = g.runs[di];
        designs.push_back(to_json(run.design));
        for (std::size_t rep = 0; rep < run.outcomes.size(); ++rep) {
            int failed = 0;
            for (const auto& o : run.outcomes[rep]) {
                failed += o.ok ? 0 : 1;
            }
            provenance.push_back({{"design", di}, {"rep", rep}, {"seed", run.design.seed}, {"failed_methods", failed}});
        }
    }
    return {{"methods", methods}, {"reps", g.reps}, {"designs", designs}, {"rows", rows}, {"provenance", provenance}};
}

inline Json to_json(const Band& b, std::optional<double> truth = std::nullopt)
{
    Json out = {{"target", b.target},
                {"ok", b.ok},
                {"alpha_hat", detail::number(b.alpha)},
                {"sigma_hat", detail::number(b.sigma)},
                {"lo", detail::number(b.interval.lo)},
                {"hi", detail::number(b.interval.hi)}};
    if (truth) {
        out["covered"] = b.ok && b.interval.contains(*truth);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(field);
    return out;
}

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

/// Whole-field float parse; anything left over is an error.
inline double parse_double(const std::string& field, std::size_t line, std::size_t column)
{
    const std::string t = trim(field);
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (t.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw Error(ErrorCode::Parse, "line " + std::to_string(line) + ", column " + std::to_string(column) +
                                          ": '" + t + "' is not a finite number");
    }
    return v;
}

/// Matches `prefix` followed by the 1-based index `expected`.
inline bool is_indexed(const std::string& name, std::string_view prefix, int expected)
{
    return name == std::string(prefix) + std::to_string(expected);
}

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;
};

inline CsvTable read_csv_table(std::istream& in)
{
    CsvTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            break;
        }
    }
    if (trim(line).empty()) {
        throw Error(ErrorCode::Parse, "CSV input is empty");
    }
    for (const auto& h : split_csv_line(line)) {
        t.header.push_back(trim(h));
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != t.header.size()) {
            throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                              " fields, header has " + std::to_string(t.header.size()));
        }
        std::vector<double> row;
        for (std::size_t k = 0; k < fields.size(); ++k) {
            row.push_back(parse_double(fields[k], line_no, k + 1));
        }
        rows.push_back(std::move(row));
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
    }
    return t;
}

inline std::ifstream open_input(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::InvalidArgument, "cannot open input file '" + path + "'");
    }
    return in;
}

inline std::string header_error(const std::vector<std::string>& header, std::string_view expected)
{
    std::string got;
    for (std::size_t k = 0; k < header.size(); ++k) {
        got += (k ? "," : "") + header[k];
    }
    return "CSV header must be " + std::string(expected) + ", got '" + got + "'";
}

} // namespace detail

/// Header `y,d,x1,...,xp`, one observation per row.
inline Sample read_sample_csv(std::istream& in)
{
    const auto t = detail::read_csv_table(in);
    const auto& h = t.header;
    bool good = h.size() >= 3 && h[0] == "y" && h[1] == "d";
    for (std::size_t k = 2; good && k < h.size(); ++k) {
        good = detail::is_indexed(h[k], "x", static_cast<int>(k - 1));
    }
    if (!good) {
        throw Error(ErrorCode::Parse, detail::header_error(h, "y,d,x1,...,xp"));
    }
    if (t.values.rows() < 2) {
        throw Error(ErrorCode::Parse, "CSV input needs at least two data rows");
    }
    return Sample(t.values.col(0), t.values.col(1), t.values.rightCols(t.values.cols() - 2));
}

inline Sample read_sample_csv(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_sample_csv(in);
}

struct MultiTargetData {
    Vector y;
    Matrix D;
    Matrix U;
};

/// Header `y,d1,...,dK,x1,...,xp` (p may be 0).
inline MultiTargetData read_multi_csv(std::istream& in)
{
    const auto t = detail::read_csv_table(in);
    const auto& h = t.header;
    bool good = h.size() >= 2 && h[0] == "y";
    std::size_t k = 1;
    int targets = 0;
    while (good && k < h.size() && detail::is_indexed(h[k], "d", targets + 1)) {
        ++targets;
        ++k;
    }
    int controls = 0;
    while (good && k < h.size() && detail::is_indexed(h[k], "x", controls + 1)) {
        ++controls;
        ++k;
    }
    good = good && targets >= 1 && k == h.size();
    if (!good) {
        throw Error(ErrorCode::Parse, detail::header_error(h, "y,d1,...,dK,x1,...,xp"));
    }
    if (t.values.rows() < 2) {
        throw Error(ErrorCode::Parse, "CSV input needs at least two data rows");
    }
    return {t.values.col(0), t.values.middleCols(1, targets), t.values.rightCols(controls)};
}

inline MultiTargetData read_multi_csv(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_multi_csv(in);
}

namespace detail {

/// Shortest representation that round-trips.
inline std::string csv_number(double v)
{
    if (!std::isfinite(v)) {
        return "nan";
    }
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace detail

inline void write_sample_csv(std::ostream& out, const Sample& s)
{
    out << "y,d";
    for (int j = 0; j < s.p(); ++j) {
        out << ",x" << j + 1;
    }
    out << '\n';
    for (int i = 0; i < s.n(); ++i) {
        out << detail::csv_number(s.y()(i)) << ',' << detail::csv_number(s.d()(i));
        for (int j = 0; j < s.p(); ++j) {
            out << ',' << detail::csv_number(s.x()(i, j));
        }
        out << '\n';
    }
}

inline void write_multi_csv(std::ostream& out, const Vector& y, const Matrix& D, const Matrix& U)
{
    out << 'y';
    for (Eigen::Index j = 0; j < D.cols(); ++j) {
        out << ",d" << j + 1;
    }
    for (Eigen::Index j = 0; j < U.cols(); ++j) {
        out << ",x" << j + 1;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        out << detail::csv_number(y(i));
        for (Eigen::Index j = 0; j < D.cols(); ++j) {
            out << ',' << detail::csv_number(D(i, j));
        }
        for (Eigen::Index j = 0; j < U.cols(); ++j) {
            out << ',' << detail::csv_number(U(i, j));
        }
        out << '\n';
    }
}

/// `alpha,nLn` with one row per cell: breakpoints at their location, open
/// segments at their midpoint.
inline void write_score_trace_csv(std::ostream& out, const std::vector<ScoreCell>& cells)
{
    out << "alpha,nLn\n";
    for (const auto& c : cells) {
        out << detail::csv_number(0.5 * (c.lo + c.hi)) << ',' << detail::csv_number(c.n_ln) << '\n';
    }
}

/// `target,alpha_hat,sigma_hat,lo,hi,covered_flag`; covered_flag is empty
/// without a truth vector. Targets are numbered from 1 as in the d1..dK
/// header.
inline void write_bands_csv(std::ostream& out, const std::vector<Band>& bands, const Vector* truth = nullptr)
{
    out << "target,alpha_hat,sigma_hat,lo,hi,covered_flag\n";
    for (const auto& b : bands) {
        out << b.target + 1 << ',' << detail::csv_number(b.alpha) << ',' << detail::csv_number(b.sigma) << ','
            << detail::csv_number(b.interval.lo) << ',' << detail::csv_number(b.interval.hi) << ',';
        if (truth != nullptr) {
            out << (b.ok && b.interval.contains((*truth)(b.target)) ? 1 : 0);
        }
        out << '\n';
    }
}

/// Long format `r2y,r2d,method,metric,value`.
inline void write_grid_csv(std::ostream& out, const GridResult& g)
{
    out << "r2y,r2d,method,metric,value\n";
    for (const auto& row : g.rows) {
        const auto& m = row.metrics;
        const std::pair<const char*, double> metrics[] = {
            {"rejection_rate", m.rejection_rate}, {"coverage", m.coverage}, {"mean_bias", m.mean_bias},
            {"sd", m.sd},                         {"rmse", m.rmse},         {"reps", static_cast<double>(m.reps)},
            {"failures", static_cast<double>(m.failures)}};
        for (const auto& [name, value] : metrics) {
            out << detail::csv_number(row.design.r2y) << ',' << detail::csv_number(row.design.r2d) << ','
                << to_string(row.method) << ',' << name << ',' << detail::csv_number(value) << '\n';
        }
    }
}

} // namespace orthomed
