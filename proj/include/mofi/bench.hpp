#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mofi/common.hpp"
#include "mofi/config.hpp"
#include "mofi/io.hpp"
#include "mofi/metrics.hpp"
#include "mofi/pipeline.hpp"
#include "mofi/simgen.hpp"

namespace mofi {

struct BenchRow {
    std::string scenario;
    int n = 0;
    double sigma = 0.0;
    std::string method;
    int replicate = 0;
    double rer = 0.0, fpr = 0.0, fnr = 0.0;
    double r01 = std::numeric_limits<double>::quiet_NaN();
    double r10 = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string error;
};

struct BenchDiagnostic {
    std::string scenario;
    int n = 0;
    double sigma = 0.0;
    int replicate = 0;
    std::string method;
    double kkt_max = 0.0;
    int sweeps = 0;
};

struct BenchOutput {
    std::vector<BenchRow> rows;
    std::vector<BenchDiagnostic> diagnostics;
};

namespace detail {

/// Linear-interpolation sample quantile (the common type-7 definition).
inline double quantile(std::vector<double> v, double prob) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = prob * (static_cast<double>(v.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

struct ReplicateTask {
    Scenario scenario;
    int n = 0;
    double sigma = 0.0;
    int replicate = 0;
};

}  // namespace detail

/// One replicate of the comparison study: simulate, tune Step-One once,
/// then evaluate each requested method against the generating truth.
inline void run_bench_replicate(const RunConfig& rc, const KernelSet& kernels, Scenario scenario,
                                int n, double sigma, int replicate, std::vector<BenchRow>& rows,
                                std::vector<BenchDiagnostic>& diagnostics) {
    SimConfig cfg = rc.sim;
    cfg.scenario = scenario;
    cfg.n = n;
    cfg.sigma = sigma;
    cfg.validate();

    const SimulationTruth truth = gen_coefficients(cfg, static_cast<std::uint64_t>(replicate));
    const Dataset ds = simulate(cfg, truth, static_cast<std::uint64_t>(replicate));

    std::vector<Vector> beta_true(cfg.p);
    const Matrix phi = cosine_basis_matrix(cfg.n_grid, cfg.n_basis);
    for (int j = 0; j < cfg.p; ++j) beta_true[j] = phi * truth.beta_coeffs.row(j).transpose();

    MofiOptions options = rc.mofi;
    options.cv_seed = derive_seed(rc.mofi.cv_seed, 40, static_cast<std::uint64_t>(replicate));

    const auto want = [&](const std::string& m) {
        return std::find(rc.bench.methods.begin(), rc.bench.methods.end(), m) !=
               rc.bench.methods.end();
    };
    const std::string scen_name = to_string(scenario);
    auto make_row = [&](const std::string& method) {
        BenchRow row;
        row.scenario = scen_name;
        row.n = n;
        row.sigma = sigma;
        row.method = method;
        row.replicate = replicate;
        return row;
    };
    auto push_diag = [&](const std::string& method, const KktReport& kkt, int sweeps) {
        diagnostics.push_back({scen_name, n, sigma, replicate, method, kkt.max_violation, sweeps});
    };

    StageOnePack s1 = run_step1_tuned(ds.x, kernels, ds.y, options);
    const auto [fpr, fnr] = selection_metrics(s1.result.selected, truth.s_true, cfg.p);
    push_diag("step1", s1.result.kkt, s1.result.fit.diagnostics.sweeps);

    if (want("fenet")) {
        BenchRow row = make_row("fenet");
        row.rer = rer(s1.result.beta_hat, beta_true, ds.x_test);
        row.fpr = fpr;
        row.fnr = fnr;
        rows.push_back(row);
    }
    if (want("fenet-refine")) {
        BenchRow row = make_row("fenet-refine");
        const std::vector<double> l2_grid =
            default_lambda_grid(std::max(s1.record.lambda, 1e-12), options.lambda_count,
                                options.lambda_min_ratio);
        RefineResult refined = fenet_refine(ds.x, kernels, ds.y, s1.result, options, l2_grid);
        row.rer = rer(refined.beta_hat, beta_true, ds.x_test);
        row.fpr = fpr;
        row.fnr = fnr;
        rows.push_back(row);
    }

    for (const auto& [method, strategy] :
         std::initializer_list<std::pair<std::string, Strategy>>{
             {"mofi-fix", Strategy::Fix}, {"mofi-optim", Strategy::Optim}}) {
        if (!want(method)) continue;
        BenchRow row = make_row(method);
        StageTwoPack s2 = run_step2_tuned(ds.x, kernels, ds.y, s1.result, s1.record, options,
                                          strategy);
        std::vector<Vector> beta_hat(cfg.p, Vector::Zero(cfg.n_grid));
        for (std::size_t s = 0; s < s2.result.selected.size(); ++s)
            beta_hat[static_cast<std::size_t>(s2.result.selected[s] - 1)] = s2.result.beta_hat[s];
        row.rer = rer(beta_hat, beta_true, ds.x_test);
        row.fpr = fpr;
        row.fnr = fnr;
        const auto [r01, r10] = form_metrics(s2.result.simple_set, s2.result.complex_set,
                                             truth.s0_true, truth.s1_true);
        row.r01 = r01;
        row.r10 = r10;
        rows.push_back(row);
        if (!s2.result.selected.empty())
            push_diag(method, s2.result.kkt, s2.result.fit.diagnostics.sweeps);
    }
}

inline BenchOutput run_bench(const RunConfig& rc) {
    if (rc.sim.n_test < 2)
        throw ConfigError("bench requires [simulate] n_test >= 2 for the excess-risk metric");

    std::vector<detail::ReplicateTask> tasks;
    std::map<std::string, KernelSet> kernel_cache;
    for (Scenario scenario : rc.bench.scenarios) {
        KernelSpec spec;
        spec.kind = KernelSpec::Kind::SobolevScenario;
        spec.scenario = scenario;
        kernel_cache.emplace(to_string(scenario),
                             KernelSet::make_shared(spec.build(rc.sim.n_grid)));
        for (int n : rc.bench.n_list)
            for (double sigma : rc.bench.sigma_list)
                for (int rep = 1; rep <= rc.bench.replicates; ++rep)
                    tasks.push_back({scenario, n, sigma, rep});
    }

    std::vector<std::vector<BenchRow>> row_slots(tasks.size());
    std::vector<std::vector<BenchDiagnostic>> diag_slots(tasks.size());
    parallel_for(tasks.size(), rc.threads, [&](std::size_t i) {
        const auto& t = tasks[i];
        try {
            run_bench_replicate(rc, kernel_cache.at(to_string(t.scenario)), t.scenario, t.n,
                                t.sigma, t.replicate, row_slots[i], diag_slots[i]);
        } catch (const std::exception& e) {
            row_slots[i].clear();
            for (const auto& method : rc.bench.methods) {
                BenchRow row;
                row.scenario = to_string(t.scenario);
                row.n = t.n;
                row.sigma = t.sigma;
                row.method = method;
                row.replicate = t.replicate;
                row.failed = true;
                row.error = e.what();
                row_slots[i].push_back(row);
            }
        }
    });

    BenchOutput out;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        out.rows.insert(out.rows.end(), row_slots[i].begin(), row_slots[i].end());
        out.diagnostics.insert(out.diagnostics.end(), diag_slots[i].begin(), diag_slots[i].end());
    }
    return out;
}

inline void write_bench_rows(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "scenario,n,sigma,method,replicate,rer,fpr,fnr,r01,r10\n";
    for (const auto& r : rows) {
        if (r.failed) continue;
        out << r.scenario << ',' << r.n << ',' << format_full(r.sigma) << ',' << r.method << ','
            << r.replicate << ',' << format_full(r.rer) << ',' << format_full(r.fpr) << ','
            << format_full(r.fnr) << ',' << format_full(r.r01) << ',' << format_full(r.r10)
            << '\n';
    }
}

inline void write_bench_failures(const std::filesystem::path& path,
                                 const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "scenario,n,sigma,method,replicate,error\n";
    for (const auto& r : rows) {
        if (!r.failed) continue;
        std::string msg = r.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        out << r.scenario << ',' << r.n << ',' << format_full(r.sigma) << ',' << r.method << ','
            << r.replicate << ',' << msg << '\n';
    }
}

inline void write_bench_diagnostics(const std::filesystem::path& path,
                                    const std::vector<BenchDiagnostic>& diags) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "scenario,n,sigma,replicate,method,kkt_max,sweeps\n";
    for (const auto& d : diags)
        out << d.scenario << ',' << d.n << ',' << format_full(d.sigma) << ',' << d.replicate << ','
            << d.method << ',' << format_full(d.kkt_max) << ',' << d.sweeps << '\n';
}

struct SummaryCell {
    std::string scenario;
    int n = 0;
    double sigma = 0.0;
    std::string method;
    int n_ok = 0, n_failed = 0;
    double rer_mean, rer_q05, rer_q95;
    double fpr_mean, fpr_q05, fpr_q95;
    double fnr_mean, fnr_q05, fnr_q95;
    double r01_mean, r01_q05, r01_q95;
    double r10_mean, r10_q05, r10_q95;
};

/// Per-cell mean and (5%, 95%) quantiles; failed replicates are excluded
/// and counted.
inline std::vector<SummaryCell> summarize_bench(const std::vector<BenchRow>& rows) {
    std::map<std::string, std::vector<const BenchRow*>> cells;
    for (const auto& r : rows) {
        const std::string key =
            r.scenario + "|" + std::to_string(r.n) + "|" + format_full(r.sigma) + "|" + r.method;
        cells[key].push_back(&r);
    }
    std::vector<SummaryCell> out;
    for (const auto& [key, members] : cells) {
        SummaryCell cell;
        cell.scenario = members.front()->scenario;
        cell.n = members.front()->n;
        cell.sigma = members.front()->sigma;
        cell.method = members.front()->method;
        std::vector<double> rer_v, fpr_v, fnr_v, r01_v, r10_v;
        for (const auto* r : members) {
            if (r->failed) {
                ++cell.n_failed;
                continue;
            }
            ++cell.n_ok;
            rer_v.push_back(r->rer);
            fpr_v.push_back(r->fpr);
            fnr_v.push_back(r->fnr);
            if (!std::isnan(r->r01)) r01_v.push_back(r->r01);
            if (!std::isnan(r->r10)) r10_v.push_back(r->r10);
        }
        cell.rer_mean = detail::mean_of(rer_v);
        cell.rer_q05 = detail::quantile(rer_v, 0.05);
        cell.rer_q95 = detail::quantile(rer_v, 0.95);
        cell.fpr_mean = detail::mean_of(fpr_v);
        cell.fpr_q05 = detail::quantile(fpr_v, 0.05);
        cell.fpr_q95 = detail::quantile(fpr_v, 0.95);
        cell.fnr_mean = detail::mean_of(fnr_v);
        cell.fnr_q05 = detail::quantile(fnr_v, 0.05);
        cell.fnr_q95 = detail::quantile(fnr_v, 0.95);
        cell.r01_mean = detail::mean_of(r01_v);
        cell.r01_q05 = detail::quantile(r01_v, 0.05);
        cell.r01_q95 = detail::quantile(r01_v, 0.95);
        cell.r10_mean = detail::mean_of(r10_v);
        cell.r10_q05 = detail::quantile(r10_v, 0.05);
        cell.r10_q95 = detail::quantile(r10_v, 0.95);
        out.push_back(std::move(cell));
    }
    return out;
}

inline void write_bench_summary(const std::filesystem::path& path,
                                const std::vector<SummaryCell>& cells) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "scenario,n,sigma,method,n_ok,n_failed,"
           "rer_mean,rer_q05,rer_q95,fpr_mean,fpr_q05,fpr_q95,"
           "fnr_mean,fnr_q05,fnr_q95,r01_mean,r01_q05,r01_q95,r10_mean,r10_q05,r10_q95\n";
    for (const auto& c : cells)
        out << c.scenario << ',' << c.n << ',' << format_full(c.sigma) << ',' << c.method << ','
            << c.n_ok << ',' << c.n_failed << ',' << format_full(c.rer_mean) << ','
            << format_full(c.rer_q05) << ',' << format_full(c.rer_q95) << ','
            << format_full(c.fpr_mean) << ',' << format_full(c.fpr_q05) << ','
            << format_full(c.fpr_q95) << ',' << format_full(c.fnr_mean) << ','
            << format_full(c.fnr_q05) << ',' << format_full(c.fnr_q95) << ','
            << format_full(c.r01_mean) << ',' << format_full(c.r01_q05) << ','
            << format_full(c.r01_q95) << ',' << format_full(c.r10_mean) << ','
            << format_full(c.r10_q05) << ',' << format_full(c.r10_q95) << '\n';
}

}  // namespace mofi
