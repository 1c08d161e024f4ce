#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sgt/config.hpp"
#include "sgt/diagnostics.hpp"
#include "sgt/errors.hpp"
#include "sgt/stepper.hpp"

namespace py = pybind11;

namespace {

sgt::Field field_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(0) != a.shape(1)) {
        throw std::invalid_argument("expected a square 2-D array of samples");
    }
    const int n = static_cast<int>(a.shape(0));
    std::vector<double> v(a.data(), a.data() + static_cast<std::size_t>(n) * n);
    return sgt::Field(sgt::GridSpec(n), std::move(v));
}

py::array_t<double> field_to_array(const sgt::Field& f) {
    const int n = f.n();
    py::array_t<double> a({n, n});
    std::memcpy(a.mutable_data(), f.samples().data(),
                sizeof(double) * static_cast<std::size_t>(n) * n);
    return a;
}

sgt::Model model_from_string(const std::string& s) {
    if (s == "sg") return sgt::Model::SG;
    if (s == "sgsw") return sgt::Model::SGSW;
    throw std::invalid_argument("model must be 'sg' or 'sgsw'");
}

py::dict monitors_dict(const sgt::Monitors& m) {
    py::dict d;
    d["nu_sup"] = m.nu_sup;
    d["convexity_min"] = m.convexity_min;
    d["step_increment"] = m.step_increment;
    d["det_err"] = m.det_err;
    d["mass"] = m.mass;
    return d;
}

} // namespace

PYBIND11_MODULE(_sgtorus, m) {
    m.doc() = "solver core for rotating balanced flow on the unit torus";

    py::register_exception<sgt::Error>(m, "SolverError");

    py::class_<sgt::CoriolisContext>(m, "Coriolis")
        .def(py::init([](const py::array_t<double, py::array::c_style | py::array::forcecast>& f) {
                 return sgt::CoriolisContext::build(field_from_array(f));
             }),
             py::arg("f"), "build from rotation-rate samples on the grid")
        .def_readonly("f_min", &sgt::CoriolisContext::f_min);

    m.def(
        "derivative",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f, int d1,
           int d2) { return field_to_array(sgt::derivative(field_from_array(f), d1, d2)); },
        py::arg("f"), py::arg("d1"), py::arg("d2"),
        "spectral partial derivative of order (d1, d2)");

    m.def(
        "stability_min_eigenvalue",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
           const sgt::CoriolisContext& cor) {
            return sgt::min_lambda_min(sgt::stability_matrix(field_from_array(p), cor));
        },
        py::arg("p"), py::arg("coriolis"),
        "min over nodes of the symmetric-part eigenvalue of the stability matrix");

    m.def(
        "residual",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& p, double dt,
           const std::string& model, const sgt::CoriolisContext& cor) {
            return field_to_array(sgt::residual(field_from_array(q), field_from_array(p), dt,
                                                model_from_string(model), cor));
        },
        py::arg("q"), py::arg("p"), py::arg("dt"), py::arg("model"), py::arg("coriolis"),
        "nonlinear one-step residual of candidate q against previous field p");

    m.def(
        "ma_solve",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p, double dt,
           const std::string& model, const sgt::CoriolisContext& cor, double convexity_slack,
           double map_tol, double newton_tol, double elliptic_tol) {
            const sgt::Field p_field = field_from_array(p);
            const sgt::Model mdl = model_from_string(model);
            sgt::Tolerances tol;
            tol.map_tol = map_tol;
            tol.newton_tol = newton_tol;
            tol.elliptic_tol = elliptic_tol;
            const double lambda =
                sgt::min_lambda_min(sgt::stability_matrix(p_field, cor));
            sgt::MAStepResult r;
            {
                py::gil_scoped_release release;
                r = sgt::ma_solve(p_field, dt, mdl, cor,
                                  sgt::derived_params(tol, lambda - convexity_slack));
            }
            py::dict report;
            report["newton_iterations"] = r.report.newton_iterations;
            report["final_residual"] = r.report.final_residual;
            report["lambda_min"] = r.report.lambda_min_s_q;
            report["lambda_min_certificate"] = r.report.lambda_min_certificate;
            report["sup_a"] = r.report.sup_a;
            report["sup_b"] = r.report.sup_b;
            return py::make_tuple(field_to_array(r.q), field_to_array(r.zmap.w1),
                                  field_to_array(r.zmap.w2), report);
        },
        py::arg("p"), py::arg("dt"), py::arg("model"), py::arg("coriolis"),
        py::arg("convexity_slack") = 0.0, py::arg("map_tol") = 1e-12,
        py::arg("newton_tol") = 1e-11, py::arg("elliptic_tol") = 1e-10,
        "one implicit step; returns (q, map_w1, map_w2, report)");

    m.def(
        "geostrophic_velocity",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
           const sgt::CoriolisContext& cor) {
            const sgt::VectorField u = sgt::geostrophic_velocity(field_from_array(p), cor);
            return py::make_tuple(field_to_array(u.x1), field_to_array(u.x2));
        },
        py::arg("p"), py::arg("coriolis"), "balanced velocity components");

    m.def(
        "dt_field",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p,
           const std::string& model, const sgt::CoriolisContext& cor, double elliptic_tol) {
            const sgt::Field p_field = field_from_array(p);
            const sgt::Model mdl = model_from_string(model);
            sgt::Field out;
            {
                py::gil_scoped_release release;
                out = sgt::dt_field(p_field, mdl, cor, elliptic_tol);
            }
            return field_to_array(out);
        },
        py::arg("p"), py::arg("model"), py::arg("coriolis"), py::arg("elliptic_tol") = 1e-10,
        "time derivative of the field from its elliptic diagnostic equation");

    m.def(
        "run_config",
        [](const std::string& text) {
            const sgt::RunConfig cfg = sgt::parse_and_validate(text);
            py::dict d;
            d["model"] = cfg.model == sgt::Model::SG ? "sg" : "sgsw";
            d["n"] = cfg.n;
            d["dt"] = cfg.dt;
            d["T"] = cfg.T;
            d["snapshot_every"] = cfg.snapshot_every;
            d["out_dir"] = cfg.out_dir;
            return d;
        },
        py::arg("text"), "parse and validate a config document, returning its header fields");

    m.def(
        "run",
        [](const std::string& text) {
            const sgt::RunConfig cfg = sgt::parse_and_validate(text);
            sgt::Trajectory traj;
            {
                py::gil_scoped_release release;
                traj = sgt::run(cfg);
            }
            py::list times, fields, monitors;
            for (const auto& s : traj.snapshots) {
                times.append(s.t);
                fields.append(field_to_array(s.field));
                monitors.append(monitors_dict(s.monitors));
            }
            py::dict summary;
            summary["max_det_err"] = traj.summary.max_det_err;
            summary["min_convexity"] = traj.summary.min_convexity;
            summary["nu_drift"] = traj.summary.nu_drift;
            py::dict out;
            out["times"] = times;
            out["fields"] = fields;
            out["monitors"] = monitors;
            out["summary"] = summary;
            return out;
        },
        py::arg("text"), "execute a run from a config document and return its snapshots");
}
