#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "obswave/dynamics.hpp"
#include "obswave/errors.hpp"
#include "obswave/grid.hpp"
#include "obswave/metric.hpp"
#include "obswave/weight.hpp"

namespace obswave {

using Json = nlohmann::ordered_json;

struct CarlemanParams {
    double lambda = 1.0;
    double c0 = 1.0;
    double c1 = 0.5;
    double lambda_lo = 1e-3;
    double lambda_hi = 1e4;
};

struct EnsembleParams {
    std::uint64_t seed = 1;
    std::size_t n_paths = 200;
    int n_data = 50;
    int modes = 5;
};

/// Parsed experiment configuration. `raw` is the document as written;
/// resolved_json() gives it back with every default filled in.
struct ExperimentConfig {
    std::string source = "<memory>";
    Grid grid;
    MetricField metric;
    WeightSpec weight;
    double delta = 0.2;
    ProblemSpec spec;
    CarlemanParams carleman;
    EnsembleParams ensemble;
    Expr z0{"0"};  // initial data, also the ground truth for reconstruction
    Expr z1{"0"};
    std::string weight_expr;  // source of a tabulated weight
    Json task = Json::object();
    std::string output_dir = "out";
    Json raw;

    /// task.<section>.<key>, or `fallback` when absent.
    template <class T>
    T task_value(const std::string& section, const std::string& key, T fallback) const {
        if (!task.contains(section) || !task[section].contains(key)) return fallback;
        return task[section][key].get<T>();
    }
};

namespace detail {

inline int line_of(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

/// Line of the member named by a JSON pointer, found by walking the keys in
/// order through the source text. Array indices keep the parent's position.
inline int locate(const std::string& text, const std::string& pointer) {
    std::size_t pos = 0;
    std::stringstream ss(pointer);
    std::string tok;
    std::getline(ss, tok, '/');
    while (std::getline(ss, tok, '/')) {
        if (!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos) continue;
        const std::regex key("\"" + std::regex_replace(tok, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") + "\"\\s*:");
        std::smatch m;
        auto begin = text.cbegin() + static_cast<std::ptrdiff_t>(pos);
        if (!std::regex_search(begin, text.cend(), m, key)) break;
        pos += static_cast<std::size_t>(m.position(0));
    }
    return line_of(text, pos);
}

class Reader {
public:
    Reader(const Json& doc, const std::string& text, std::string source)
        : doc_(doc), text_(text), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
        throw Error(ErrorKind::ConfigError,
                    source_ + ":" + std::to_string(locate(text_, pointer)) + ": " + (pointer.empty() ? "/" : pointer) + ": " + msg);
    }

    const Json* find(const std::string& pointer) const {
        const Json::json_pointer p(pointer);
        return doc_.contains(p) ? &doc_.at(p) : nullptr;
    }

    bool has(const std::string& pointer) const { return find(pointer) != nullptr; }

    double number(const std::string& pointer, std::optional<double> fallback = std::nullopt) const {
        const Json* v = find(pointer);
        if (!v) {
            if (fallback) return *fallback;
            fail(pointer, "required number is missing");
        }
        if (v->is_string() && (v->get<std::string>() == "inf" || v->get<std::string>() == "infinity"))
            return std::numeric_limits<double>::infinity();
        if (!v->is_number()) fail(pointer, "expected a number");
        return v->get<double>();
    }

    double positive(const std::string& pointer, std::optional<double> fallback = std::nullopt) const {
        const double x = number(pointer, fallback);
        if (!(x > 0.0)) fail(pointer, "must be positive");
        return x;
    }

    std::int64_t integer(const std::string& pointer, std::optional<std::int64_t> fallback = std::nullopt) const {
        const Json* v = find(pointer);
        if (!v) {
            if (fallback) return *fallback;
            fail(pointer, "required integer is missing");
        }
        if (!v->is_number_integer()) fail(pointer, "expected an integer");
        return v->get<std::int64_t>();
    }

    std::string string(const std::string& pointer, std::optional<std::string> fallback = std::nullopt) const {
        const Json* v = find(pointer);
        if (!v) {
            if (fallback) return *fallback;
            fail(pointer, "required string is missing");
        }
        if (!v->is_string()) fail(pointer, "expected a string");
        return v->get<std::string>();
    }

    bool boolean(const std::string& pointer, bool fallback) const {
        const Json* v = find(pointer);
        if (!v) return fallback;
        if (!v->is_boolean()) fail(pointer, "expected true or false");
        return v->get<bool>();
    }

    std::vector<double> numbers(const std::string& pointer, std::size_t n, std::optional<std::vector<double>> fallback = std::nullopt) const {
        const Json* v = find(pointer);
        if (!v) {
            if (fallback) return *fallback;
            fail(pointer, "required array is missing");
        }
        if (!v->is_array() || v->size() != n) fail(pointer, "expected an array of " + std::to_string(n) + " numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(number(pointer + "/" + std::to_string(i)));
        return out;
    }

    Expr expr(const std::string& pointer, const std::string& fallback = "0") const {
        const Json* v = find(pointer);
        std::string s = fallback;
        if (v) {
            if (v->is_number()) {
                std::ostringstream os;
                os.precision(17);
                os << v->get<double>();
                s = os.str();
            } else if (v->is_string()) {
                s = v->get<std::string>();
            } else {
                fail(pointer, "expected an expression string or a number");
            }
        }
        try {
            return Expr(s);
        } catch (const Error& e) {
            fail(pointer, e.what());
        }
    }

private:
    const Json& doc_;
    const std::string& text_;
    std::string source_;
};

}  // namespace detail

/// Parses and validates a config document. Errors carry file:line and the
/// JSON pointer of the offending member.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<memory>") {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
        throw Error(ErrorKind::ConfigError, source + ":" + std::to_string(detail::line_of(text, at)) + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::ConfigError, source + ":1: top level must be an object");
    detail::Reader rd(doc, text, source);
    ExperimentConfig c;
    c.source = source;

    if (!rd.has("/seed")) rd.fail("/seed", "master seed is mandatory");
    const std::int64_t seed = rd.integer("/seed");
    if (seed < 0) rd.fail("/seed", "seed must be nonnegative");
    c.ensemble.seed = static_cast<std::uint64_t>(seed);

    // geometry
    const int dim = static_cast<int>(rd.integer("/geometry/dim", 1));
    if (dim != 1 && dim != 2) rd.fail("/geometry/dim", "must be 1 or 2");
    const auto lo = rd.numbers("/geometry/lo", static_cast<std::size_t>(dim), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    const auto hi = rd.numbers("/geometry/hi", static_cast<std::size_t>(dim), std::vector<double>(static_cast<std::size_t>(dim), 1.0));
    const auto nxd = rd.numbers("/geometry/nx", static_cast<std::size_t>(dim));
    std::array<int, 2> nx{1, 1};
    std::array<double, 2> alo{0, 0}, ahi{0, 0};
    for (int k = 0; k < dim; ++k) {
        nx[k] = static_cast<int>(nxd[static_cast<std::size_t>(k)]);
        if (nx[k] != nxd[static_cast<std::size_t>(k)] || nx[k] < 3) rd.fail("/geometry/nx", "node counts must be integers >= 3");
        alo[k] = lo[static_cast<std::size_t>(k)];
        ahi[k] = hi[static_cast<std::size_t>(k)];
        if (!(ahi[k] > alo[k])) rd.fail("/geometry/hi", "each hi must exceed lo");
    }
    const double T = rd.positive("/geometry/T");
    const std::int64_t nt = rd.integer("/geometry/nt");
    if (nt < 2) rd.fail("/geometry/nt", "need nt >= 2");
    c.grid = Grid::make(dim, alo, ahi, nx, T, static_cast<int>(nt));

    c.metric = MetricField::identity(dim);
    const auto base = rd.numbers("/geometry/metric/base", 3, std::vector<double>{1.0, 0.0, 1.0});
    const auto sx = rd.numbers("/geometry/metric/slope_x", 3, std::vector<double>{0.0, 0.0, 0.0});
    const auto sy = rd.numbers("/geometry/metric/slope_y", 3, std::vector<double>{0.0, 0.0, 0.0});
    for (int s = 0; s < 3; ++s) {
        c.metric.base[static_cast<std::size_t>(s)] = base[static_cast<std::size_t>(s)];
        c.metric.slope[0][static_cast<std::size_t>(s)] = sx[static_cast<std::size_t>(s)];
        c.metric.slope[1][static_cast<std::size_t>(s)] = dim == 2 ? sy[static_cast<std::size_t>(s)] : 0.0;
    }
    c.metric.s0 = rd.positive("/geometry/metric/s0", 1e-3);

    const std::string wkind = rd.string("/geometry/weight/kind", "quadratic");
    if (wkind == "quadratic") {
        const auto center = rd.numbers("/geometry/weight/center", static_cast<std::size_t>(dim));
        Vec2 x0{center[0], dim == 2 ? center[1] : 0.0};
        c.weight = WeightSpec::quadratic(rd.positive("/geometry/weight/a"), x0, rd.number("/geometry/weight/shift", 0.0));
    } else if (wkind == "tabulated") {
        const Expr d = rd.expr("/geometry/weight/expr");
        c.weight_expr = d.source();
        std::vector<double> vals;
        for (int p = 0; p < c.grid.size(); ++p) vals.push_back(d.at(0.0, c.grid.coords(p)));
        c.weight = WeightSpec::tabulated(c.grid, vals);
    } else {
        rd.fail("/geometry/weight/kind", "must be \"quadratic\" or \"tabulated\"");
    }
    c.delta = rd.number("/geometry/delta", 0.2);
    if (!(c.delta >= 0.0)) rd.fail("/geometry/delta", "collar width must be nonnegative");

    // dynamics
    ProblemSpec& s = c.spec;
    s.metric = c.metric;
    const std::string mode = rd.string("/dynamics/mode", "linear");
    if (mode == "linear") s.mode = DynamicsMode::Linear;
    else if (mode == "nonlinear") s.mode = DynamicsMode::Nonlinear;
    else rd.fail("/dynamics/mode", "must be \"linear\" or \"nonlinear\"");
    s.linear.b1 = rd.expr("/dynamics/b1");
    s.linear.b2[0] = rd.expr("/dynamics/b2/0");
    s.linear.b2[1] = rd.expr("/dynamics/b2/1");
    s.linear.b3 = rd.expr("/dynamics/b3");
    s.linear.b3_p = rd.number("/dynamics/b3_p", std::numeric_limits<double>::infinity());
    if (!(s.linear.b3_p > dim)) rd.fail("/dynamics/b3_p", "need p > n");
    s.linear.b4 = rd.expr("/dynamics/b4");
    s.linear.f = rd.expr("/dynamics/f");
    s.linear.g = rd.expr("/dynamics/g");
    auto& nl = s.nonlinear;
    nl.f_sin = rd.number("/dynamics/nonlinear/f_sin", 0.0);
    nl.f_linear = rd.number("/dynamics/nonlinear/f_linear", 0.0);
    nl.f_velocity = rd.number("/dynamics/nonlinear/f_velocity", 0.0);
    const auto fg = rd.numbers("/dynamics/nonlinear/f_gradient", 2, std::vector<double>{0.0, 0.0});
    nl.f_gradient = {fg[0], fg[1]};
    nl.k_linear = rd.number("/dynamics/nonlinear/k_linear", 0.0);
    nl.k_sin = rd.number("/dynamics/nonlinear/k_sin", 0.0);
    s.noise = rd.boolean("/dynamics/noise", true);
    s.picard = static_cast<int>(rd.integer("/dynamics/picard", 0));
    if (s.picard < 0) rd.fail("/dynamics/picard", "must be >= 0");

    // carleman
    c.carleman.lambda = rd.positive("/carleman/lambda", 1.0);
    c.carleman.c0 = rd.number("/carleman/c0", 1.0);
    c.carleman.c1 = rd.positive("/carleman/c1", 0.5);
    c.carleman.lambda_lo = rd.positive("/carleman/lambda_lo", 1e-3);
    c.carleman.lambda_hi = rd.positive("/carleman/lambda_hi", 1e4);
    if (!(c.carleman.lambda_hi > c.carleman.lambda_lo)) rd.fail("/carleman/lambda_hi", "must exceed lambda_lo");

    // ensemble
    const std::int64_t np = rd.integer("/ensemble/n_paths", 200);
    if (np < 1) rd.fail("/ensemble/n_paths", "must be >= 1");
    c.ensemble.n_paths = static_cast<std::size_t>(np);
    c.ensemble.n_data = static_cast<int>(rd.integer("/ensemble/n_data", 50));
    if (c.ensemble.n_data < 1) rd.fail("/ensemble/n_data", "must be >= 1");
    c.ensemble.modes = static_cast<int>(rd.integer("/ensemble/modes", 5));
    if (c.ensemble.modes < 1) rd.fail("/ensemble/modes", "must be >= 1");

    c.z0 = rd.expr("/task/initial/z0", dim == 1 ? "sin(pi*x)" : "sin(pi*x)*sin(pi*y)");
    c.z1 = rd.expr("/task/initial/z1", "0");

    if (const Json* t = rd.find("/task")) {
        if (!t->is_object()) rd.fail("/task", "expected an object");
        c.task = *t;
    }
    c.output_dir = rd.string("/task/output_dir", "out");

    c.raw = doc;
    return c;
}

/// The configuration with every default made explicit.
inline Json resolved_json(const ExperimentConfig& c) {
    auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json("inf"); };
    Json j;
    j["seed"] = c.ensemble.seed;
    const int dim = c.grid.dim;
    Json g;
    g["dim"] = dim;
    g["lo"] = Json::array();
    g["hi"] = Json::array();
    g["nx"] = Json::array();
    for (int k = 0; k < dim; ++k) {
        g["lo"].push_back(c.grid.lo[static_cast<std::size_t>(k)]);
        g["hi"].push_back(c.grid.hi[static_cast<std::size_t>(k)]);
        g["nx"].push_back(c.grid.nx[static_cast<std::size_t>(k)]);
    }
    g["T"] = c.grid.T;
    g["nt"] = c.grid.nt;
    g["metric"] = {{"base", c.metric.base}, {"slope_x", c.metric.slope[0]}, {"slope_y", c.metric.slope[1]}, {"s0", c.metric.s0}};
    if (c.weight.analytic()) {
        Json center = Json::array();
        for (int k = 0; k < dim; ++k) center.push_back(c.weight.center[static_cast<std::size_t>(k)]);
        g["weight"] = {{"kind", "quadratic"}, {"a", c.weight.a}, {"center", center}, {"shift", c.weight.shift}};
    }
    else
        g["weight"] = {{"kind", "tabulated"}, {"expr", c.weight_expr}};
    g["delta"] = c.delta;
    j["geometry"] = g;
    const auto& s = c.spec;
    const auto& nl = s.nonlinear;
    j["dynamics"] = {{"mode", s.mode == DynamicsMode::Linear ? "linear" : "nonlinear"},
                     {"b1", s.linear.b1.source()},
                     {"b2", {s.linear.b2[0].source(), s.linear.b2[1].source()}},
                     {"b3", s.linear.b3.source()},
                     {"b3_p", num(s.linear.b3_p)},
                     {"b4", s.linear.b4.source()},
                     {"f", s.linear.f.source()},
                     {"g", s.linear.g.source()},
                     {"nonlinear",
                      {{"f_sin", nl.f_sin}, {"f_linear", nl.f_linear}, {"f_velocity", nl.f_velocity},
                       {"f_gradient", nl.f_gradient}, {"k_linear", nl.k_linear}, {"k_sin", nl.k_sin}}},
                     {"noise", s.noise},
                     {"picard", s.picard}};
    j["carleman"] = {{"lambda", c.carleman.lambda}, {"c0", c.carleman.c0}, {"c1", c.carleman.c1},
                     {"lambda_lo", c.carleman.lambda_lo}, {"lambda_hi", c.carleman.lambda_hi}};
    j["ensemble"] = {{"n_paths", c.ensemble.n_paths}, {"n_data", c.ensemble.n_data}, {"modes", c.ensemble.modes}};
    Json t = c.task;
    t["initial"] = {{"z0", c.z0.source()}, {"z1", c.z1.source()}};
    t["output_dir"] = c.output_dir;
    j["task"] = t;
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::ConfigError, path + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

} // namespace obswave
