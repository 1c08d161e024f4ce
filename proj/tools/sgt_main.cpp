#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sgt/diagnostics.hpp"
#include "sgt/errors.hpp"
#include "sgt/snapshot.hpp"
#include "sgt/stepper.hpp"

namespace {

std::string snapshot_path(const std::string& out_dir, int step) {
    std::ostringstream os;
    os << out_dir << "/snap_" << std::setw(6) << std::setfill('0') << step << ".bin";
    return os.str();
}

int run_command(const std::string& cfg_path) {
    const sgt::RunConfig cfg = sgt::parse_and_validate_file(cfg_path);
    std::filesystem::create_directories(cfg.out_dir);
    const sgt::Trajectory traj = sgt::run(
        cfg,
        [&](int step, const sgt::StepState& s) {
            sgt::write_snapshot(s, snapshot_path(cfg.out_dir, step));
        },
        nullptr);
    sgt::write_monitor_csv(traj.series, cfg.out_dir + "/monitors.csv");

    std::cout << std::setprecision(17);
    std::cout << "steps: " << traj.series.size() << "\n";
    std::cout << "final t: " << (traj.series.empty() ? 0.0 : traj.series.back().t) << "\n";
    std::cout << "max det_err: " << traj.summary.max_det_err << "\n";
    std::cout << "min convexity: " << traj.summary.min_convexity << "\n";
    std::cout << "nu drift: " << traj.summary.nu_drift << "\n";
    std::cout << "snapshots: " << traj.snapshots.size() << " in " << cfg.out_dir << "\n";
    return 0;
}

int check_command(const std::string& cfg_path) {
    const sgt::RunConfig cfg = sgt::parse_and_validate_file(cfg_path);
    const sgt::CoriolisContext cor = sgt::coriolis_from(cfg);
    const sgt::Field field0 = sgt::initial_field(cfg);
    const double lambda = sgt::min_lambda_min(sgt::stability_matrix(field0, cor));
    std::cout << std::setprecision(17);
    std::cout << "f_min: " << cor.f_min << "\n";
    std::cout << "lambda_min: " << lambda << "\n";
    std::cout << "c0: " << lambda - cfg.convexity_slack << "\n";
    std::cout << "declared c0: " << cfg.c0_declared << "\n";
    return 0;
}

int convergence_command(const std::string& cfg_path, int halvings) {
    sgt::RunConfig cfg = sgt::parse_and_validate_file(cfg_path);
    const int base_steps = static_cast<int>(std::floor(cfg.T / cfg.dt + 1e-9));
    if (base_steps < 1) {
        throw sgt::ConfigInvalid({"convergence needs T >= dt so at least one step runs"});
    }
    cfg.T = base_steps * cfg.dt;

    std::vector<sgt::Field> finals;
    std::vector<double> dts;
    for (int level = 0; level <= halvings; ++level) {
        sgt::RunConfig c = cfg;
        c.dt = cfg.dt / static_cast<double>(1 << level);
        c.snapshot_every = base_steps << level; // keep only the endpoints
        const sgt::Trajectory traj = sgt::run(c);
        finals.push_back(traj.snapshots.back().field);
        dts.push_back(c.dt);
    }

    std::cout << std::setprecision(17);
    std::vector<double> errs;
    for (std::size_t j = 0; j + 1 < finals.size(); ++j) {
        const double e = sgt::sup_abs(sgt::scale_add(finals[j], 1.0, finals[j + 1], -1.0));
        errs.push_back(e);
        std::cout << "dt " << dts[j] << " vs " << dts[j + 1] << ": err " << e << "\n";
    }
    for (std::size_t j = 0; j + 1 < errs.size(); ++j) {
        const double ratio = errs[j] / errs[j + 1];
        std::cout << "ratio " << ratio << " order " << std::log2(ratio) << "\n";
    }
    return 0;
}

int oracle_command(const std::string& cfg_path) {
    const sgt::RunConfig cfg = sgt::parse_and_validate_file(cfg_path);
    if (cfg.n > 8) {
        throw sgt::ConfigInvalid({"oracle command requires n <= 8"});
    }
    const sgt::CoriolisContext cor = sgt::coriolis_from(cfg);
    const sgt::Field field0 = sgt::initial_field(cfg);
    const double lambda = sgt::min_lambda_min(sgt::stability_matrix(field0, cor));
    const sgt::MAStepParams params =
        sgt::derived_params(cfg.tol, lambda - cfg.convexity_slack);

    const sgt::MAStepResult solved = sgt::ma_solve(field0, cfg.dt, cfg.model, cor, params);
    const sgt::MAStepResult reference =
        sgt::ma_solve_coupled_reference(field0, cfg.dt, cfg.model, cor, params.newton_tol);
    const double diff_q = sgt::sup_abs(sgt::scale_add(solved.q, 1.0, reference.q, -1.0));
    const double diff_z = std::max(
        sgt::sup_abs(sgt::scale_add(solved.zmap.w1, 1.0, reference.zmap.w1, -1.0)),
        sgt::sup_abs(sgt::scale_add(solved.zmap.w2, 1.0, reference.zmap.w2, -1.0)));
    const double diff = std::max(diff_q, diff_z);

    std::cout << std::setprecision(17);
    std::cout << "field sup difference: " << diff_q << "\n";
    std::cout << "map sup difference: " << diff_z << "\n";
    std::cout << "sup difference: " << diff << "\n";
    const bool pass = diff <= 1e-8;
    std::cout << (pass ? "PASS" : "FAIL") << " (bound 1e-8)\n";
    return pass ? 0 : 20;
}

int diff_command(const std::string& path_a, const std::string& path_b) {
    const sgt::StepState a = sgt::read_snapshot(path_a);
    const sgt::StepState b = sgt::read_snapshot(path_b);
    const sgt::SnapshotDiff d = sgt::snapshot_diff(a, b);
    std::cout << std::setprecision(17);
    std::cout << "t: |dt| " << d.t_abs << "\n";
    std::cout << "field: sup " << d.field.sup << " mean " << d.field.mean_abs << "\n";
    std::cout << "flow_w1: sup " << d.flow_w1.sup << " mean " << d.flow_w1.mean_abs << "\n";
    std::cout << "flow_w2: sup " << d.flow_w2.sup << " mean " << d.flow_w2.mean_abs << "\n";
    std::cout << "det_check: sup " << d.det_check.sup << " mean " << d.det_check.mean_abs
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lagrangian solver for rotating balanced flow on the unit torus"};
    app.require_subcommand(1);

    std::string run_cfg, check_cfg, conv_cfg, oracle_cfg, diff_a, diff_b;
    int halvings = 2;

    CLI::App* cmd_run = app.add_subcommand("run", "execute a configured run");
    cmd_run->add_option("config", run_cfg, "config file")->required();
    CLI::App* cmd_check =
        app.add_subcommand("check", "validate a config and print initial certificates");
    cmd_check->add_option("config", check_cfg, "config file")->required();
    CLI::App* cmd_conv =
        app.add_subcommand("convergence", "dt self-convergence study with step halving");
    cmd_conv->add_option("config", conv_cfg, "config file")->required();
    cmd_conv->add_option("--halvings", halvings, "number of dt halvings")
        ->check(CLI::Range(1, 6));
    CLI::App* cmd_oracle =
        app.add_subcommand("oracle", "compare one step against the coupled dense reference");
    cmd_oracle->add_option("config", oracle_cfg, "config file")->required();
    CLI::App* cmd_diff = app.add_subcommand("diff", "print per-array differences of snapshots");
    cmd_diff->add_option("a", diff_a, "first snapshot")->required();
    cmd_diff->add_option("b", diff_b, "second snapshot")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) return run_command(run_cfg);
        if (cmd_check->parsed()) return check_command(check_cfg);
        if (cmd_conv->parsed()) return convergence_command(conv_cfg, halvings);
        if (cmd_oracle->parsed()) return oracle_command(oracle_cfg);
        if (cmd_diff->parsed()) return diff_command(diff_a, diff_b);
    } catch (const sgt::ConfigInvalid& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const sgt::NonFiniteField& e) {
        std::cerr << "non-finite field: " << e.what() << "\n";
        return 3;
    } catch (const sgt::MapSolveFailed& e) {
        std::cerr << "map solve failed: " << e.what() << "\n";
        return 4;
    } catch (const sgt::ContractionLost& e) {
        std::cerr << "contraction lost: " << e.what() << "\n";
        return 5;
    } catch (const sgt::EllipticSingular& e) {
        std::cerr << "elliptic solve singular: " << e.what() << "\n";
        return 6;
    } catch (const sgt::IncompatibleRHS& e) {
        std::cerr << "incompatible right-hand side: " << e.what() << "\n";
        return 7;
    } catch (const sgt::ABTooLarge& e) {
        std::cerr << "correction matrices too large: " << e.what() << "\n";
        return 8;
    } catch (const sgt::DegenerateDeterminant& e) {
        std::cerr << "degenerate determinant: " << e.what() << "\n";
        return 9;
    } catch (const sgt::ConvexityLost& e) {
        std::cerr << "convexity lost: " << e.what() << "\n";
        return 10;
    } catch (const sgt::NewtonDiverged& e) {
        std::cerr << "newton diverged: " << e.what() << "\n";
        return 11;
    } catch (const sgt::PositivityLost& e) {
        std::cerr << "positivity lost: " << e.what() << "\n";
        return 12;
    } catch (const sgt::LipschitzCapExceeded& e) {
        std::cerr << "step increment cap exceeded: " << e.what() << "\n";
        return 13;
    } catch (const sgt::FlowRoundTripFailed& e) {
        std::cerr << "flow round trip failed: " << e.what() << "\n";
        return 14;
    } catch (const sgt::InsufficientSnapshots& e) {
        std::cerr << "insufficient snapshots: " << e.what() << "\n";
        return 15;
    } catch (const sgt::IOError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 16;
    } catch (const sgt::ChecksumMismatch& e) {
        std::cerr << "checksum mismatch: " << e.what() << "\n";
        return 17;
    } catch (const sgt::VersionMismatch& e) {
        std::cerr << "version mismatch: " << e.what() << "\n";
        return 18;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
