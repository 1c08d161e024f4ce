#include "sgt/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sgt/errors.hpp"

namespace sgt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_real(const std::string& s, double& out) {
    std::istringstream in(s);
    in >> out;
    if (in.fail()) return false;
    std::string rest;
    in >> rest;
    return rest.empty() && std::isfinite(out);
}

bool parse_int(const std::string& s, int& out) {
    double v = 0.0;
    if (!parse_real(s, v)) return false;
    if (v != std::floor(v) || std::abs(v) > 1e9) return false;
    out = static_cast<int>(v);
    return true;
}

bool parse_mode(const std::string& s, TrigPoly::Mode& out) {
    std::istringstream in(s);
    double k1 = 0.0, k2 = 0.0;
    in >> k1 >> k2 >> out.cos_coef >> out.sin_coef;
    if (in.fail()) return false;
    std::string rest;
    in >> rest;
    if (!rest.empty()) return false;
    if (k1 != std::floor(k1) || k2 != std::floor(k2)) return false;
    out.k1 = static_cast<int>(k1);
    out.k2 = static_cast<int>(k2);
    return true;
}

struct LocatedMin {
    double value = 0.0;
    Vec2 at{0.0, 0.0};
};

LocatedMin located_min(const Field& f) {
    const GridSpec g = f.grid();
    LocatedMin m;
    m.value = f.sample(0, 0);
    m.at = g.node(0, 0);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            const double v = f.sample(i, j);
            if (v < m.value) {
                m.value = v;
                m.at = g.node(i, j);
            }
        }
    }
    return m;
}

LocatedMin located_min_eigenvalue(const MatrixField& s) {
    const GridSpec g = s.m11.grid();
    LocatedMin m;
    m.value = lambda_min_sym(s.at(0, 0));
    m.at = g.node(0, 0);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            const double v = lambda_min_sym(s.at(i, j));
            if (v < m.value) {
                m.value = v;
                m.at = g.node(i, j);
            }
        }
    }
    return m;
}

std::string loc(const Vec2& x) {
    std::ostringstream os;
    os << "(" << x(0) << "," << x(1) << ")";
    return os.str();
}

bool grid_usable(int n) { return n >= 8 && n <= 1024 && n % 2 == 0; }

void apply_key(RunConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value, int lineno, std::vector<std::string>& violations) {
    std::ostringstream bad;
    bad << "line " << lineno << ": ";
    if (section == "model") {
        if (key == "model") {
            if (value == "sg") cfg.model = Model::SG;
            else if (value == "sgsw") cfg.model = Model::SGSW;
            else {
                bad << "model must be sg or sgsw, got '" << value << "'";
                violations.push_back(bad.str());
            }
            return;
        }
        if (key == "dt") {
            if (!parse_real(value, cfg.dt)) violations.push_back(bad.str() + "dt not a number");
            return;
        }
        if (key == "T") {
            if (!parse_real(value, cfg.T)) violations.push_back(bad.str() + "T not a number");
            return;
        }
    } else if (section == "grid") {
        if (key == "n") {
            if (!parse_int(value, cfg.n)) violations.push_back(bad.str() + "n not an integer");
            return;
        }
    } else if (section == "coriolis") {
        if (key == "f0") {
            if (!parse_real(value, cfg.f_spec.c0))
                violations.push_back(bad.str() + "f0 not a number");
            return;
        }
        if (key == "mode") {
            TrigPoly::Mode m;
            if (!parse_mode(value, m))
                violations.push_back(bad.str() + "mode must be 'k1 k2 cos_coef sin_coef'");
            else cfg.f_spec.modes.push_back(m);
            return;
        }
    } else if (section == "init") {
        if (key == "c0") {
            if (!parse_real(value, cfg.c0_declared))
                violations.push_back(bad.str() + "c0 not a number");
            return;
        }
        if (key == "mode") {
            TrigPoly::Mode m;
            if (!parse_mode(value, m))
                violations.push_back(bad.str() + "mode must be 'k1 k2 cos_coef sin_coef'");
            else cfg.init_spec.modes.push_back(m);
            return;
        }
    } else if (section == "tolerances") {
        double* slot = nullptr;
        if (key == "map_tol") slot = &cfg.tol.map_tol;
        else if (key == "newton_tol") slot = &cfg.tol.newton_tol;
        else if (key == "elliptic_tol") slot = &cfg.tol.elliptic_tol;
        else if (key == "convexity_slack") slot = &cfg.convexity_slack;
        else if (key == "lip_cap") slot = &cfg.lip_cap;
        if (slot != nullptr) {
            if (!parse_real(value, *slot))
                violations.push_back(bad.str() + key + " not a number");
            return;
        }
    } else if (section == "output") {
        if (key == "snapshot_every") {
            if (!parse_int(value, cfg.snapshot_every))
                violations.push_back(bad.str() + "snapshot_every not an integer");
            return;
        }
        if (key == "out_dir") {
            cfg.out_dir = value;
            return;
        }
    }
    bad << "unknown key '" << key << "' in section [" << section << "]";
    violations.push_back(bad.str());
}

} // namespace

RunConfig parse_and_validate(const std::string& text) {
    RunConfig cfg;
    std::vector<std::string> violations;

    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                std::ostringstream os;
                os << "line " << lineno << ": unterminated section header";
                violations.push_back(os.str());
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "grid" && section != "coriolis" &&
                section != "init" && section != "tolerances" && section != "output") {
                std::ostringstream os;
                os << "line " << lineno << ": unknown section [" << section << "]";
                violations.push_back(os.str());
                section.clear();
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            std::ostringstream os;
            os << "line " << lineno << ": expected key=value";
            violations.push_back(os.str());
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            std::ostringstream os;
            os << "line " << lineno << ": key '" << key << "' outside any section";
            violations.push_back(os.str());
            continue;
        }
        apply_key(cfg, section, key, value, lineno, violations);
    }

    if (!grid_usable(cfg.n)) {
        std::ostringstream os;
        os << "n must be even and in [8, 1024]: n=" << cfg.n;
        violations.push_back(os.str());
    }
    if (!(cfg.dt > 0.0)) violations.push_back("dt not positive");
    if (!(cfg.T >= 0.0)) violations.push_back("T negative");
    if (!(cfg.tol.map_tol > 0.0)) violations.push_back("map_tol not positive");
    if (!(cfg.tol.newton_tol > 0.0)) violations.push_back("newton_tol not positive");
    if (!(cfg.tol.elliptic_tol > 0.0)) violations.push_back("elliptic_tol not positive");
    if (!(cfg.c0_declared > 0.0)) violations.push_back("declared convexity floor c0 not positive");
    if (!(cfg.convexity_slack >= 0.0)) violations.push_back("convexity_slack negative");
    if (!(cfg.lip_cap > 0.0)) violations.push_back("lip_cap not positive");
    if (cfg.snapshot_every < 1) violations.push_back("snapshot_every must be >= 1");
    for (const auto& m : cfg.f_spec.modes) {
        if (m.k1 == 0 && m.k2 == 0)
            violations.push_back("coriolis mode (0,0) not allowed; use f0 for the constant part");
    }
    for (const auto& m : cfg.init_spec.modes) {
        if (m.k1 == 0 && m.k2 == 0)
            violations.push_back("init mode (0,0) not allowed; the constant part is fixed");
    }

    if (grid_usable(cfg.n)) {
        const GridSpec grid(cfg.n);
        const int top_mode = std::max(cfg.f_spec.max_mode(), cfg.init_spec.max_mode());
        if (top_mode > cfg.n / 4) {
            std::ostringstream os;
            os << "highest mode " << top_mode << " exceeds n/4=" << cfg.n / 4;
            violations.push_back(os.str());
        }
        const Field f = cfg.f_spec.sample(grid);
        const LocatedMin fmin = located_min(f);
        if (!(fmin.value > 0.0)) {
            std::ostringstream os;
            os << "f not positive: min=" << fmin.value << " at " << loc(fmin.at);
            violations.push_back(os.str());
        } else {
            const CoriolisContext cor = CoriolisContext::build(f);
            Field field0 = cfg.init_spec.sample(grid);
            if (cfg.model == Model::SG) {
                field0 = mean_project(field0);
            } else {
                std::vector<double> v = field0.samples();
                for (double& x : v) x += 1.0;
                field0 = Field(grid, std::move(v));
                const LocatedMin hmin = located_min(field0);
                if (!(hmin.value > 0.0)) {
                    std::ostringstream os;
                    os << "initial height not positive: min=" << hmin.value << " at "
                       << loc(hmin.at);
                    violations.push_back(os.str());
                }
            }
            const LocatedMin smin = located_min_eigenvalue(stability_matrix(field0, cor));
            if (smin.value < cfg.c0_declared) {
                std::ostringstream os;
                os << "convexity floor violated: min eigenvalue=" << smin.value << " at "
                   << loc(smin.at) << " (declared c0=" << cfg.c0_declared << ")";
                violations.push_back(os.str());
            }
        }
    }

    if (!violations.empty()) throw ConfigInvalid(violations);
    return cfg;
}

RunConfig parse_and_validate_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_and_validate(buf.str());
}

Field initial_field(const RunConfig& cfg) {
    const GridSpec grid(cfg.n);
    Field base = cfg.init_spec.sample(grid);
    if (cfg.model == Model::SG) return mean_project(base);
    std::vector<double> v = base.samples();
    for (double& x : v) x += 1.0;
    return Field(grid, std::move(v));
}

CoriolisContext coriolis_from(const RunConfig& cfg) {
    return CoriolisContext::build(GridSpec(cfg.n), cfg.f_spec);
}

} // namespace sgt
