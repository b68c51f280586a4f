#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mofi/bench.hpp"
#include "mofi/config.hpp"
#include "mofi/io.hpp"
#include "mofi/metrics.hpp"
#include "mofi/pipeline.hpp"
#include "mofi/simgen.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> threads_override;
    bool verbose = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "path to the run config file")->required();
    cmd->add_option("--out", args.out_override, "output directory (overrides [global] out)");
    cmd->add_option("--seed", args.seed_override, "seed override");
    cmd->add_option("--threads", args.threads_override, "worker threads (0 = all cores)");
    cmd->add_flag("--verbose", args.verbose, "chatty progress output");
}

mofi::RunConfig load_config(const CommonArgs& args) {
    mofi::RunConfig rc = mofi::RunConfig::load(args.config_path);
    if (!args.out_override.empty()) rc.out_dir = args.out_override;
    if (args.seed_override) {
        rc.seed = *args.seed_override;
        rc.sim.seed = *args.seed_override;
        rc.mofi.cv_seed = *args.seed_override;
    }
    if (args.threads_override) rc.threads = *args.threads_override;
    rc.verbose = rc.verbose || args.verbose;
    return rc;
}

mofi::KernelSet kernels_for(const mofi::RunConfig& rc, mofi::Index n_grid) {
    return mofi::KernelSet::make_shared(rc.kernel.build(n_grid));
}

void write_surface_csv(const fs::path& path, const mofi::TuningRecord& r1,
                       const mofi::TuningRecord* r2) {
    std::ofstream out(path);
    out << "stage,alpha,theta,m,lambda,cv_error\n";
    for (const auto& pt : r1.surface)
        out << "1," << mofi::format_full(pt.alpha) << ',' << mofi::format_full(pt.theta) << ','
            << pt.m << ',' << mofi::format_full(pt.lambda) << ','
            << mofi::format_full(pt.cv_error) << '\n';
    if (r2 != nullptr)
        for (const auto& pt : r2->surface)
            out << "2," << mofi::format_full(pt.alpha) << ',' << mofi::format_full(pt.theta) << ','
                << pt.m << ',' << mofi::format_full(pt.lambda) << ','
                << mofi::format_full(pt.cv_error) << '\n';
}

int cmd_simulate(const mofi::RunConfig& rc) {
    const mofi::SimulationTruth truth = mofi::gen_coefficients(rc.sim);
    const mofi::Dataset ds = mofi::simulate(rc.sim, truth);
    mofi::write_dataset_bundle(rc.out_dir, ds, truth);
    if (rc.verbose)
        std::cout << "wrote " << ds.x.size() << " predictors (" << rc.sim.n << "x" << rc.sim.n_grid
                  << ") to " << rc.out_dir << "\n";
    return kExitOk;
}

int cmd_fit(const mofi::RunConfig& rc) {
    if (rc.fit_predictors.empty() || rc.fit_response.empty())
        throw mofi::ConfigError("fit requires [fit] predictors and response paths");
    const std::vector<mofi::Matrix> x = mofi::read_predictor_bundle(rc.fit_predictors);
    const mofi::Vector y = mofi::read_vector_csv(rc.fit_response);
    if (y.size() != x.front().rows())
        throw mofi::ConfigError("response length does not match predictor rows");
    const mofi::KernelSet kernels = kernels_for(rc, x.front().cols());

    mofi::MofiResult result = mofi::run_mofi(x, kernels, y, rc.mofi);
    mofi::write_result_bundle(rc.out_dir, result, rc.mofi.strategy);
    if (rc.dump_surface)
        write_surface_csv(fs::path(rc.out_dir) / "cv_surface.csv", result.record1,
                          result.stage2_run ? &result.record2 : nullptr);
    if (result.stage1.selected.empty())
        std::cerr << "warning: the penalty zeroed every predictor; null model recorded\n";
    if (rc.verbose)
        std::cout << "selected " << result.stage1.selected.size() << " predictors ("
                  << result.stage2.simple_set.size() << " simple, "
                  << result.stage2.complex_set.size() << " complex)\n";
    return kExitOk;
}

int cmd_cv(const mofi::RunConfig& rc) {
    if (rc.fit_predictors.empty() || rc.fit_response.empty())
        throw mofi::ConfigError("cv requires [fit] predictors and response paths");
    const std::vector<mofi::Matrix> x = mofi::read_predictor_bundle(rc.fit_predictors);
    const mofi::Vector y = mofi::read_vector_csv(rc.fit_response);
    const mofi::KernelSet kernels = kernels_for(rc, x.front().cols());
    mofi::MofiOptions options = rc.mofi;
    options.fixed_lambda = options.fixed_alpha = options.fixed_theta = -1.0;  // always search
    mofi::StageOnePack pack = mofi::run_step1_tuned(x, kernels, y, options);

    fs::create_directories(rc.out_dir);
    std::ofstream rec(fs::path(rc.out_dir) / "tuning.txt");
    rec << "stage1.lambda = " << mofi::format_full(pack.record.lambda) << '\n';
    rec << "stage1.alpha = " << mofi::format_full(pack.record.alpha) << '\n';
    rec << "stage1.theta = " << mofi::format_full(pack.record.theta) << '\n';
    rec << "stage1.m = " << pack.record.m << '\n';
    rec << "stage1.cv_error = " << mofi::format_full(pack.record.cv_error) << '\n';
    write_surface_csv(fs::path(rc.out_dir) / "cv_surface.csv", pack.record, nullptr);
    if (rc.verbose)
        std::cout << "chosen lambda=" << pack.record.lambda << " alpha=" << pack.record.alpha
                  << " theta=" << pack.record.theta << "\n";
    return kExitOk;
}

int cmd_bench(const mofi::RunConfig& rc) {
    const mofi::BenchOutput output = mofi::run_bench(rc);
    fs::create_directories(rc.out_dir);
    mofi::write_bench_rows(fs::path(rc.out_dir) / "results.csv", output.rows);
    mofi::write_bench_failures(fs::path(rc.out_dir) / "failures.csv", output.rows);
    mofi::write_bench_diagnostics(fs::path(rc.out_dir) / "diagnostics.csv", output.diagnostics);
    mofi::write_bench_summary(fs::path(rc.out_dir) / "summary.csv",
                              mofi::summarize_bench(output.rows));
    if (rc.verbose) {
        int failed = 0;
        for (const auto& r : output.rows) failed += r.failed ? 1 : 0;
        std::cout << "bench finished: " << output.rows.size() << " rows, " << failed
                  << " failures\n";
    }
    return kExitOk;
}

int cmd_evaluate(const mofi::RunConfig& rc) {
    if (rc.eval_result.empty() || rc.eval_truth.empty())
        throw mofi::ConfigError("evaluate requires [evaluate] result and truth paths");
    const mofi::ResultBundle bundle = mofi::read_result_bundle(rc.eval_result);
    const mofi::TruthManifest manifest = mofi::read_truth_manifest(rc.eval_truth);
    if (manifest.cfg.n_test < 2)
        throw mofi::ConfigError("truth manifest has n_test < 2; cannot compute excess risk");

    const mofi::Dataset ds = mofi::simulate(manifest.cfg, manifest.truth);
    const mofi::Matrix phi = mofi::cosine_basis_matrix(manifest.cfg.n_grid, manifest.cfg.n_basis);
    std::vector<mofi::Vector> beta_true(manifest.cfg.p), beta_hat(manifest.cfg.p);
    for (int j = 0; j < manifest.cfg.p; ++j) {
        beta_true[j] = phi * manifest.truth.beta_coeffs.row(j).transpose();
        beta_hat[j] = mofi::Vector::Zero(manifest.cfg.n_grid);
    }
    for (std::size_t s = 0; s < bundle.curve_ids.size(); ++s)
        beta_hat[static_cast<std::size_t>(bundle.curve_ids[s] - 1)] = bundle.beta[s];

    mofi::EvaluationReport report;
    report.rer = mofi::rer(beta_hat, beta_true, ds.x_test);
    std::tie(report.fpr, report.fnr) =
        mofi::selection_metrics(bundle.selected, manifest.truth.s_true, manifest.cfg.p);
    std::tie(report.r01, report.r10) = mofi::form_metrics(
        bundle.simple_set, bundle.complex_set, manifest.truth.s0_true, manifest.truth.s1_true);

    // Prediction summaries on the regenerated noiseless test responses.
    std::vector<mofi::RowVector> zero_means(beta_hat.size(),
                                            mofi::RowVector::Zero(manifest.cfg.n_grid));
    const mofi::Vector pred = mofi::predict_from_curves(ds.x_test, zero_means, 0.0, beta_hat);
    const mofi::PredictionMetrics pm =
        mofi::prediction_metrics(ds.y_test_noiseless, pred, ds.y_test_noiseless.mean());
    report.rmse = pm.rmse;
    report.pearson = pm.pearson;

    fs::create_directories(rc.out_dir);
    std::ofstream out(fs::path(rc.out_dir) / "evaluation.csv");
    out << "rer,fpr,fnr,r01,r10,rmse,pearson\n";
    out << mofi::format_full(report.rer) << ',' << mofi::format_full(report.fpr) << ','
        << mofi::format_full(report.fnr) << ',' << mofi::format_full(report.r01) << ','
        << mofi::format_full(report.r10) << ',' << mofi::format_full(report.rmse) << ','
        << mofi::format_full(report.pearson) << '\n';
    if (rc.verbose)
        std::cout << "rer=" << report.rer << " fpr=" << report.fpr << " fnr=" << report.fnr
                  << " r01=" << report.r01 << " r10=" << report.r10 << "\n";
    return kExitOk;
}

int run_command(const std::string& name, const CommonArgs& args) {
    std::string out_dir = args.out_override.empty() ? "out" : args.out_override;
    try {
        const mofi::RunConfig rc = load_config(args);
        out_dir = rc.out_dir;
        if (name == "simulate") return cmd_simulate(rc);
        if (name == "fit") return cmd_fit(rc);
        if (name == "cv") return cmd_cv(rc);
        if (name == "bench") return cmd_bench(rc);
        return cmd_evaluate(rc);
    } catch (const mofi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        mofi::write_error_record(out_dir, kExitConfig, e.what());
        return kExitConfig;
    } catch (const mofi::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        mofi::write_error_record(out_dir, kExitIo, e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        mofi::write_error_record(out_dir, kExitNumeric, e.what());
        return kExitNumeric;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoFI-FLR: two-stage functional linear regression with model-form identification"};
    app.require_subcommand(1);

    CommonArgs sim_args, fit_args, cv_args, bench_args, eval_args;
    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset bundle");
    add_common(sim, sim_args);
    auto* fit = app.add_subcommand("fit", "fit the two-stage model to a dataset bundle");
    add_common(fit, fit_args);
    auto* cv = app.add_subcommand("cv", "run the Step-One cross-validation search only");
    add_common(cv, cv_args);
    auto* bench = app.add_subcommand("bench", "run the replicated comparison study");
    add_common(bench, bench_args);
    auto* eval = app.add_subcommand("evaluate", "score a result bundle against a truth manifest");
    add_common(eval, eval_args);

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) return run_command("simulate", sim_args);
    if (fit->parsed()) return run_command("fit", fit_args);
    if (cv->parsed()) return run_command("cv", cv_args);
    if (bench->parsed()) return run_command("bench", bench_args);
    return run_command("evaluate", eval_args);
}
