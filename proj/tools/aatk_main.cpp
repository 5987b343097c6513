// Batch front door: load a system (built-in or JSON document), run pipeline
// stages, and emit CSV tables, text reports, and a JSON run manifest.
// Exit codes: 0 = pass, 1 = analysis failure, 2 = input error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aatk/chart.hpp"

using namespace aatk;

namespace {

struct Options {
    std::string builtin_name;
    std::string input_file;
    std::string seed_csv;
    std::string out_dir = ".";
    std::string hamiltonian;
    std::string grid_lo;
    std::string grid_hi;
    double time = 1.0;
    int grid = 11;
    double window = 0.02;
    double tol = -1.0;    // < 0: use the owning module's default
    long samples = -1;    // < 0: use the subcommand's default
    bool straighten = false;
    ChartConfig chart;    // threshold and solver knobs, exposed as flags
};

std::string vec_str(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << fmt17(v[i]);
    os << ")";
    return os.str();
}

std::vector<double> parse_csv_doubles(const std::string& flag, const std::string& text,
                                      int expected) {
    std::vector<double> xs;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            xs.push_back(std::stod(item, &used));
            while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
                ++used;
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw SpecError(flag + ": not a number: '" + item + "'");
        }
    }
    if (static_cast<int>(xs.size()) != expected)
        throw SpecError(flag + ": expected " + std::to_string(expected) + " values, got " +
                        std::to_string(xs.size()));
    return xs;
}

/// Manifest accumulator: stage timings, outcomes, and emitted files.
struct Run {
    std::string command;
    std::string source;
    std::string document;
    SystemSpec spec;
    std::filesystem::path out;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json stages = nlohmann::json::array();
    std::vector<std::string> outputs;

    template <class F>
    auto stage(const std::string& name, F&& body) {
        const auto t0 = std::chrono::steady_clock::now();
        auto record = [&](const std::string& outcome) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            stages.push_back({{"name", name}, {"outcome", outcome}, {"wall_ms", ms}});
        };
        try {
            if constexpr (std::is_void_v<decltype(body())>) {
                body();
                record("ok");
            } else {
                auto result = body();
                record("ok");
                return result;
            }
        } catch (const std::exception& e) {
            record(std::string("error: ") + e.what());
            throw;
        }
    }

    void emit(const std::string& filename, const std::string& content) {
        std::filesystem::create_directories(out);
        std::ofstream f(out / filename, std::ios::binary);
        if (!f) throw SpecError("cannot write output file: " + (out / filename).string());
        f << content;
        outputs.push_back(filename);
    }

    void write_manifest() {
        try {
            outputs.push_back("manifest.json");
            nlohmann::json m = {{"command", command},
                                {"input", {{"source", source}, {"digest", fnv1a_hex(document)}}},
                                {"config", config},
                                {"stages", stages},
                                {"outputs", outputs}};
            std::filesystem::create_directories(out);
            std::ofstream f(out / "manifest.json", std::ios::binary);
            f << m.dump(2) << "\n";
        } catch (...) {
            // manifest write failure must not mask the command's own outcome
        }
    }
};

void load_into(Run& run, const Options& opt) {
    run.stage("load", [&] {
        const bool has_builtin = !opt.builtin_name.empty();
        const bool has_input = !opt.input_file.empty();
        if (has_builtin == has_input)
            throw SpecError("exactly one of --builtin or --input is required");
        if (has_builtin) {
            run.source = "builtin:" + opt.builtin_name;
            run.document = builtin_document(opt.builtin_name);
        } else {
            run.source = opt.input_file;
            std::ifstream f(opt.input_file, std::ios::binary);
            if (!f) throw SpecError("cannot read input file: " + opt.input_file);
            std::ostringstream buf;
            buf << f.rdbuf();
            run.document = buf.str();
        }
        run.spec = load_system(run.document);
        if (!opt.seed_csv.empty()) {
            const std::vector<double> xs =
                parse_csv_doubles("--seed", opt.seed_csv, run.spec.n());
            run.spec.seed_point =
                Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<long>(xs.size()));
            run.config["seed_override"] = xs;
        }
    });
    run.config["source"] = run.source;
}

FlowConfig flow_config(const Options& opt) {
    FlowConfig cfg;
    if (opt.tol > 0.0) cfg.abs_tol = cfg.rel_tol = opt.tol;
    return cfg;
}

ChartConfig chart_config(const Options& opt) {
    ChartConfig cfg = opt.chart;
    cfg.flow = flow_config(opt);
    return cfg;
}

/// Base grid for continuation: explicit --lo/--hi bounds when given, otherwise
/// a window centered on the seed fiber, +- window * max(1, |c_d|) per axis.
BaseGrid default_grid(const SystemSpec& spec, const Options& opt) {
    const Eigen::VectorXd c = spec.F_at(spec.seed_point).head(spec.r());
    BaseGrid grid;
    grid.lo.resize(spec.r());
    grid.hi.resize(spec.r());
    grid.shape.assign(static_cast<std::size_t>(spec.r()), opt.grid);
    if (opt.grid_lo.empty() != opt.grid_hi.empty())
        throw SpecError("--lo and --hi must be given together");
    if (!opt.grid_lo.empty()) {
        const std::vector<double> lo = parse_csv_doubles("--lo", opt.grid_lo, spec.r());
        const std::vector<double> hi = parse_csv_doubles("--hi", opt.grid_hi, spec.r());
        for (int d = 0; d < spec.r(); ++d) {
            if (!(lo[static_cast<std::size_t>(d)] < hi[static_cast<std::size_t>(d)]))
                throw SpecError("--lo must be strictly below --hi in every direction");
            grid.lo[d] = lo[static_cast<std::size_t>(d)];
            grid.hi[d] = hi[static_cast<std::size_t>(d)];
        }
        return grid;
    }
    for (int d = 0; d < spec.r(); ++d) {
        const double w = opt.window * std::max(1.0, std::abs(c[d]));
        grid.lo[d] = c[d] - w;
        grid.hi[d] = c[d] + w;
    }
    return grid;
}

std::string render_validation(const PoissonReport& pr, const ValidationReport& vr) {
    std::ostringstream os;
    os << "jacobi identity: " << (pr.pass ? "pass" : "FAIL") << "\n";
    os << "  max residual: " << fmt17(pr.max_abs) << "  tol: " << fmt17(pr.tol)
       << "  eval failures: " << pr.eval_failures << "\n";
    for (const auto& t : pr.triples)
        if (t.symbolic_zero)
            os << "  triple (" << t.i + 1 << "," << t.j + 1 << "," << t.k + 1
               << "): symbolically zero\n";
    os << "conditions:\n";
    for (const auto& c : vr.conditions) {
        os << "  " << c.label << ": " << (c.pass ? "pass" : "FAIL")
           << "  residual: " << fmt17(c.residual);
        if (!c.note.empty()) os << "  [" << c.note << "]";
        os << "\n";
        if (c.witness.size() > 0) os << "    witness: " << vec_str(c.witness) << "\n";
    }
    os << "overall: " << (pr.pass && vr.pass ? "pass" : "FAIL") << "\n";
    return os.str();
}

int cmd_validate(Run& run, const Options& opt) {
    const double tol = opt.tol > 0.0 ? opt.tol : 1e-9;
    const int n_poisson = static_cast<int>(opt.samples > 0 ? opt.samples : 100);
    run.config["tol"] = tol;
    run.config["poisson_samples"] = n_poisson;

    const PoissonReport pr = run.stage("poisson", [&] {
        return verify_poisson(run.spec.structure, run.spec.domain_box, n_poisson, tol);
    });
    const ValidationReport vr = run.stage("definition", [&] {
        return run.spec.kind == SystemKind::Commutative
                   ? validate_commutative(run.spec, 20, tol)
                   : validate_noncommutative(run.spec, 20, tol);
    });

    std::ostringstream os;
    os << "system: " << run.source << "\n"
       << "kind: " << (run.spec.kind == SystemKind::Commutative ? "commutative" : "noncommutative")
       << "\n"
       << render_validation(pr, vr);
    run.emit("validate_report.txt", os.str());
    return pr.pass && vr.pass ? 0 : 1;
}

int cmd_flow(Run& run, const Options& opt) {
    const std::string name = opt.hamiltonian.empty()
                                 ? run.spec.functions.front().name
                                 : opt.hamiltonian;
    const FlowConfig cfg = flow_config(opt);
    run.config["hamiltonian"] = name;
    run.config["time"] = opt.time;
    run.config["abs_tol"] = cfg.abs_tol;

    const int segments = 32;
    std::ostringstream csv;
    csv << "t";
    for (const auto& c : run.spec.structure.coords) csv << "," << c;
    csv << ",f_drift\n";

    Eigen::VectorXd state = run.spec.seed_point;
    const Eigen::VectorXd f0 = run.spec.F_at(state);
    long steps = 0;
    run.stage("integrate", [&] {
        for (int j = 0; j <= segments; ++j) {
            if (j > 0) {
                FlowResult leg = integrate_flow(run.spec, name, state, opt.time / segments, cfg);
                state = leg.state;
                steps += leg.steps;
            }
            csv << fmt17(opt.time * j / segments);
            for (int i = 0; i < state.size(); ++i) csv << "," << fmt17(state[i]);
            csv << "," << fmt17((run.spec.F_at(state) - f0).lpNorm<Eigen::Infinity>()) << "\n";
        }
    });
    run.emit("flow.csv", csv.str());

    std::ostringstream rep;
    rep << "system: " << run.source << "\n"
        << "hamiltonian: " << name << "\n"
        << "time: " << fmt17(opt.time) << "\n"
        << "final state: " << vec_str(state) << "\n"
        << "integral drift: " << fmt17((run.spec.F_at(state) - f0).lpNorm<Eigen::Infinity>())
        << "\n"
        << "integrator steps: " << steps << "\n";
    run.emit("flow_report.txt", rep.str());
    return 0;
}

/// Shared periods stage: seed lattice at the seed fiber, then grid continuation.
LatticeField run_periods(Run& run, const Options& opt, PeriodLattice& seed_out) {
    const FlowConfig cfg = flow_config(opt);
    run.config["grid"] = opt.grid;
    run.config["window"] = opt.window;
    run.config["abs_tol"] = cfg.abs_tol;
    if (!opt.grid_lo.empty()) {
        run.config["grid_lo"] = opt.grid_lo;
        run.config["grid_hi"] = opt.grid_hi;
    }

    seed_out = run.stage("seed_lattice", [&] { return seed_period_lattice(run.spec, cfg); });
    const BaseGrid grid = default_grid(run.spec, opt);
    return run.stage("continue", [&] { return continue_lattice(run.spec, grid, seed_out, cfg); });
}

std::string render_lattice(const Run& run, const PeriodLattice& seed, const LatticeField& field) {
    std::ostringstream os;
    os << "system: " << run.source << "\n";
    os << "seed fiber: " << vec_str(seed.base) << "\n";
    for (int i = 0; i < seed.basis.rows(); ++i)
        os << "lambda_" << i + 1 << ": " << vec_str(seed.basis.row(i).transpose()) << "\n";
    os << "seed defect: " << fmt17(seed.defect) << "\n";
    if (!seed.note.empty()) os << "note: " << seed.note << "\n";
    os << "grid: lo " << vec_str(field.grid.lo) << " hi " << vec_str(field.grid.hi) << " shape (";
    for (std::size_t d = 0; d < field.grid.shape.size(); ++d)
        os << (d ? ", " : "") << field.grid.shape[d];
    os << ")\n";
    os << "nodes: " << field.nodes.size() << "  failed: " << field.failed.size() << "\n";
    os << "overall: " << (field.ok ? "pass" : "FAIL") << "\n";
    return os.str();
}

int cmd_periods(Run& run, const Options& opt) {
    PeriodLattice seed;
    LatticeField field;
    try {
        field = run_periods(run, opt, seed);
    } catch (const NonCompactError& e) {
        // the negative control: the diagnostic belongs in the report
        std::ostringstream os;
        os << "system: " << run.source << "\n"
           << "diagnostic: " << e.what() << "\n"
           << "overall: FAIL\n";
        run.emit("periods_report.txt", os.str());
        return 1;
    }
    run.emit("lattice.csv", lattice_csv(run.spec, field));
    run.emit("periods_report.txt", render_lattice(run, seed, field));
    return field.ok ? 0 : 1;
}

int cmd_actions(Run& run, const Options& opt) {
    PeriodLattice seed;
    const LatticeField field = run_periods(run, opt, seed);
    const ChartConfig ccfg = chart_config(opt);
    const Chart chart = run.stage("chart", [&] { return build_chart(run.spec, field, ccfg); });
    const ClosednessReport closed = run.stage("closedness", [&] { return closedness_check(field); });

    run.emit("chart.csv", chart_csv(run.spec, chart));
    std::ostringstream os;
    os << "system: " << run.source << "\n";
    os << "action anchor node: (";
    for (std::size_t d = 0; d < chart.actions.anchor_node.size(); ++d)
        os << (d ? ", " : "") << chart.actions.anchor_node[d];
    os << ")  c0: " << vec_str(chart.actions.c0) << "\n";
    os << "quadrature panels: " << chart.actions.panels << "\n";
    os << "closedness residual: " << fmt17(closed.residual)
       << "  relative: " << fmt17(closed.relative) << "  interior nodes: " << closed.checked
       << "\n";
    run.emit("actions_report.txt", os.str());
    return 0;
}

int cmd_chart(Run& run, const Options& opt, bool emit_csv) {
    PeriodLattice seed;
    const LatticeField field = run_periods(run, opt, seed);
    const ChartConfig ccfg = chart_config(opt);
    const long n_samples = opt.samples > 0 ? opt.samples : 50;
    run.config["straighten"] = opt.straighten;
    run.config["samples"] = n_samples;
    Chart chart = run.stage("chart", [&] { return build_chart(run.spec, field, ccfg); });
    if (opt.straighten)
        chart = run.stage("straighten", [&] { return straighten_section(run.spec, chart, ccfg); });
    const CanonicalReport rep = run.stage(
        "verify", [&] { return verify_canonical(run.spec, chart, n_samples, ccfg); });

    if (emit_csv) run.emit("chart.csv", chart_csv(run.spec, chart));
    std::ostringstream os;
    os << "system: " << run.source << "\n";
    if (!chart.note.empty()) os << "straighten: " << chart.note << "\n";
    os << rep.text;
    run.emit(emit_csv ? "chart_report.txt" : "verify_report.txt", os.str());
    return rep.pass ? 0 : 1;
}

int cmd_verify(Run& run, const Options& opt) {
    // the full certificate: definition checks, then the chart residuals
    const double tol = opt.tol > 0.0 ? opt.tol : 1e-9;
    const PoissonReport pr = run.stage("poisson", [&] {
        return verify_poisson(run.spec.structure, run.spec.domain_box, 100, tol);
    });
    const ValidationReport vr = run.stage("definition", [&] {
        return run.spec.kind == SystemKind::Commutative
                   ? validate_commutative(run.spec, 20, tol)
                   : validate_noncommutative(run.spec, 20, tol);
    });
    run.emit("validate_report.txt",
             "system: " + run.source + "\n" + render_validation(pr, vr));
    if (!(pr.pass && vr.pass)) return 1;
    return cmd_chart(run, opt, /*emit_csv=*/false);
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"action-angle toolkit for integrable systems on Poisson manifolds"};
    app.require_subcommand(1);

    std::string builtin_help = "built-in system name (";
    {
        const auto& names = builtin_names();
        for (std::size_t i = 0; i < names.size(); ++i)
            builtin_help += (i ? ", " : "") + names[i];
        builtin_help += ")";
    }

    auto add_common = [&](CLI::App* c) {
        c->add_option("--builtin", opt.builtin_name, builtin_help);
        c->add_option("--input", opt.input_file, "path to a JSON system document");
        c->add_option("--out", opt.out_dir, "output directory (default .)");
        c->add_option("--seed", opt.seed_csv, "override seed point: \"x1,...,xn\"");
        c->add_option("--tol", opt.tol, "principal tolerance of this command");
    };
    auto add_grid = [&](CLI::App* c) {
        c->add_option("--grid", opt.grid, "lattice nodes per base direction (default 11)");
        c->add_option("--window", opt.window,
                      "relative half-width of the base grid around the seed fiber");
        c->add_option("--lo", opt.grid_lo, "explicit grid lower bounds: \"c1,...,cr\"");
        c->add_option("--hi", opt.grid_hi, "explicit grid upper bounds: \"c1,...,cr\"");
    };

    CLI::App* validate = app.add_subcommand("validate", "check the integrability definition");
    add_common(validate);
    validate->add_option("--samples", opt.samples, "jacobiator sample count (default 100)");

    CLI::App* flow = app.add_subcommand("flow", "integrate one Hamiltonian flow from the seed");
    add_common(flow);
    flow->add_option("--hamiltonian", opt.hamiltonian, "function name (default: the first)");
    flow->add_option("--time", opt.time, "integration time (default 1)");

    CLI::App* periods = app.add_subcommand("periods", "period lattice over a base grid");
    add_common(periods);
    add_grid(periods);

    CLI::App* actions = app.add_subcommand("actions", "section and action table over the grid");
    add_common(actions);
    add_grid(actions);

    auto add_chart_knobs = [&](CLI::App* c) {
        c->add_flag("--straighten", opt.straighten, "correct angle cross-terms");
        c->add_option("--samples", opt.samples, "verification samples (default 50)");
        c->add_option("--section-tol", opt.chart.section_tol, "fiber solve tolerance");
        c->add_option("--angle-tol", opt.chart.angle_tol, "angle solve tolerance");
        c->add_option("--fd-step", opt.chart.fd_step, "relative step for bracket gradients");
        c->add_option("--quad-tol", opt.chart.quad_tol, "action quadrature threshold");
        c->add_option("--tol-theta-p", opt.chart.tol_theta_p, "pass bound on |{theta,p}-I|");
        c->add_option("--tol-p-p", opt.chart.tol_p_p, "pass bound on |{p,p}|");
        c->add_option("--tol-z", opt.chart.tol_z, "pass bound on the Casimir block");
        c->add_option("--tol-theta-theta", opt.chart.tol_theta_theta,
                      "pass bound on |{theta,theta}|");
    };

    CLI::App* chart = app.add_subcommand("chart", "build and certify the action-angle chart");
    add_common(chart);
    add_grid(chart);
    add_chart_knobs(chart);

    CLI::App* verify = app.add_subcommand("verify", "definition checks plus chart certificate");
    add_common(verify);
    add_grid(verify);
    add_chart_knobs(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are input errors
    }

    Run run;
    run.out = opt.out_dir;
    run.command = app.get_subcommands().front()->get_name();

    int rc = 0;
    try {
        load_into(run, opt);
        if (validate->parsed()) rc = cmd_validate(run, opt);
        else if (flow->parsed()) rc = cmd_flow(run, opt);
        else if (periods->parsed()) rc = cmd_periods(run, opt);
        else if (actions->parsed()) rc = cmd_actions(run, opt);
        else if (chart->parsed()) rc = cmd_chart(run, opt, /*emit_csv=*/true);
        else rc = cmd_verify(run, opt);
    } catch (const ParseError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        rc = 2;
    } catch (const SpecError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        rc = 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "analysis failure: %s\n", e.what());
        rc = 1;
    }
    run.write_manifest();
    return rc;
}
