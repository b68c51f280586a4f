#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mofi/common.hpp"
#include "mofi/kernels.hpp"
#include "mofi/pipeline.hpp"
#include "mofi/simgen.hpp"

namespace mofi {

/// Strict sectioned key=value config. Unknown sections or keys are errors,
/// so misspellings fail fast instead of silently using defaults.
class ConfigFile {
  public:
    static ConfigFile parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path.string());
    }

    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>") {
        ConfigFile cfg;
        std::stringstream in(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto comment = line.find_first_of("#;");
            if (comment != std::string::npos) line = line.substr(0, comment);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                cfg.sections_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            if (section.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside any [section]");
            if (!cfg.sections_[section].emplace(key, value).second)
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        return cfg;
    }

    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

    /// Typed access; every get marks the key as consumed.
    std::string get_string(const std::string& sec, const std::string& key, const std::string& dflt) {
        const auto* v = lookup(sec, key);
        return v ? *v : dflt;
    }
    double get_double(const std::string& sec, const std::string& key, double dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        try { return std::stod(*v); } catch (...) { throw ConfigError("[" + sec + "] " + key + ": not a number: " + *v); }
    }
    long long get_int(const std::string& sec, const std::string& key, long long dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        try { return std::stoll(*v); } catch (...) { throw ConfigError("[" + sec + "] " + key + ": not an integer: " + *v); }
    }
    std::uint64_t get_uint(const std::string& sec, const std::string& key, std::uint64_t dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        try { return std::stoull(*v); } catch (...) { throw ConfigError("[" + sec + "] " + key + ": not an unsigned integer: " + *v); }
    }
    bool get_bool(const std::string& sec, const std::string& key, bool dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        if (*v == "true" || *v == "1") return true;
        if (*v == "false" || *v == "0") return false;
        throw ConfigError("[" + sec + "] " + key + ": expected true/false");
    }
    std::vector<double> get_doubles(const std::string& sec, const std::string& key,
                                    std::vector<double> dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        std::vector<double> out;
        for (const auto& item : split_list(*v)) {
            try { out.push_back(std::stod(item)); } catch (...) { throw ConfigError("[" + sec + "] " + key + ": not a number: " + item); }
        }
        return out;
    }
    std::vector<int> get_int_list(const std::string& sec, const std::string& key,
                                  std::vector<int> dflt) {
        const auto* v = lookup(sec, key);
        if (!v) return dflt;
        std::vector<int> out;
        for (const auto& item : split_list(*v)) {
            try { out.push_back(std::stoi(item)); } catch (...) { throw ConfigError("[" + sec + "] " + key + ": not an integer: " + item); }
        }
        return out;
    }
    std::vector<std::string> get_strings(const std::string& sec, const std::string& key,
                                         std::vector<std::string> dflt) {
        const auto* v = lookup(sec, key);
        return v ? split_list(*v) : dflt;
    }

    /// Fails on unconsumed keys in the given sections and on unknown sections.
    void finish(const std::set<std::string>& known_sections) const {
        for (const auto& [sec, kv] : sections_) {
            if (!known_sections.count(sec)) throw ConfigError("unknown config section [" + sec + "]");
            for (const auto& [key, value] : kv)
                if (!consumed_.count(sec + "\n" + key))
                    throw ConfigError("unknown key '" + key + "' in [" + sec + "]");
        }
    }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    const std::string* lookup(const std::string& sec, const std::string& key) {
        auto sit = sections_.find(sec);
        if (sit == sections_.end()) return nullptr;
        auto kit = sit->second.find(key);
        if (kit == sit->second.end()) return nullptr;
        consumed_.insert(sec + "\n" + key);
        return &kit->second;
    }

    std::map<std::string, std::map<std::string, std::string>> sections_;
    mutable std::set<std::string> consumed_;
};

struct BenchSettings {
    int replicates = 50;
    std::vector<Scenario> scenarios = {Scenario::I};
    std::vector<int> n_list = {250};
    std::vector<double> sigma_list = {1.0};
    std::vector<std::string> methods = {"fenet", "fenet-refine", "mofi-fix", "mofi-optim"};
};

/// Everything the CLI needs, validated against module preconditions before
/// any work starts.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 0;  // 0 -> hardware concurrency
    bool verbose = false;

    SimConfig sim;
    KernelSpec kernel;
    std::string fit_predictors, fit_response;
    Strategy strategy = Strategy::Optim;
    MofiOptions mofi;
    bool dump_surface = false;
    BenchSettings bench;
    std::string eval_result, eval_truth;

    static RunConfig load(const std::filesystem::path& path) {
        ConfigFile f = ConfigFile::parse_file(path);
        return from_config(f);
    }

    static RunConfig from_config(ConfigFile& f) {
        RunConfig rc;
        rc.seed = f.get_uint("global", "seed", rc.seed);
        rc.out_dir = f.get_string("global", "out", rc.out_dir);
        rc.threads = static_cast<int>(f.get_int("global", "threads", rc.threads));
        rc.verbose = f.get_bool("global", "verbose", rc.verbose);

        rc.sim.scenario = scenario_from_string(f.get_string("simulate", "scenario", "I"));
        rc.sim.n = static_cast<int>(f.get_int("simulate", "n", rc.sim.n));
        rc.sim.p = static_cast<int>(f.get_int("simulate", "p", rc.sim.p));
        rc.sim.q = static_cast<int>(f.get_int("simulate", "q", rc.sim.q));
        rc.sim.q0 = static_cast<int>(f.get_int("simulate", "q0", rc.sim.q0));
        rc.sim.rho = f.get_double("simulate", "rho", rc.sim.rho);
        rc.sim.sigma = f.get_double("simulate", "sigma", rc.sim.sigma);
        rc.sim.n_basis = static_cast<int>(f.get_int("simulate", "n_basis", rc.sim.n_basis));
        rc.sim.n_grid = static_cast<int>(f.get_int("simulate", "N", rc.sim.n_grid));
        rc.sim.n_test = static_cast<int>(f.get_int("simulate", "n_test", rc.sim.n_test));
        rc.sim.seed = f.get_uint("simulate", "seed", rc.seed);
        rc.sim.validate();

        const std::string ktype = f.get_string("kernel", "type", "builtin");
        if (ktype == "builtin") {
            rc.kernel.kind = KernelSpec::Kind::SobolevScenario;
            rc.kernel.scenario = scenario_from_string(
                f.get_string("kernel", "scenario", to_string(rc.sim.scenario)));
        } else if (ktype == "gaussian") {
            rc.kernel.kind = KernelSpec::Kind::GaussianAnchors;
            rc.kernel.scale = f.get_double("kernel", "scale", 50.0);
            rc.kernel.anchors = f.get_doubles("kernel", "anchors", {0.3, 0.5, 0.7});
            if (!(rc.kernel.scale > 0.0)) throw ConfigError("[kernel] scale must be positive");
            if (rc.kernel.anchors.empty()) throw ConfigError("[kernel] anchors must be nonempty");
            for (double a : rc.kernel.anchors)
                if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("[kernel] anchors must lie in [0,1]");
        } else {
            throw ConfigError("[kernel] type must be builtin or gaussian");
        }

        rc.fit_predictors = f.get_string("fit", "predictors", "");
        rc.fit_response = f.get_string("fit", "response", "");
        rc.strategy = strategy_from_string(f.get_string("fit", "strategy", "optim"));
        rc.mofi.strategy = rc.strategy;
        rc.mofi.m = f.get_int("fit", "m", -1);
        rc.mofi.solver.kappa = f.get_double("fit", "kappa", 1.0);
        rc.mofi.solver.outer_tol = f.get_double("fit", "outer_tol", 1e-8);
        rc.mofi.solver.inner_tol = f.get_double("fit", "inner_tol", 1e-8);
        rc.mofi.solver.max_outer_iters =
            static_cast<int>(f.get_int("fit", "max_outer_iters", 500));
        rc.mofi.solver.max_inner_iters =
            static_cast<int>(f.get_int("fit", "max_inner_iters", 200));
        rc.mofi.fixed_lambda = f.get_double("fit", "lambda", -1.0);
        rc.mofi.fixed_alpha = f.get_double("fit", "alpha", -1.0);
        rc.mofi.fixed_theta = f.get_double("fit", "theta", -1.0);
        if (rc.mofi.solver.kappa < 1.0) throw ConfigError("[fit] kappa must be >= 1");
        if (!(rc.mofi.solver.outer_tol > 0.0) || !(rc.mofi.solver.inner_tol > 0.0))
            throw ConfigError("[fit] tolerances must be positive");
        if (rc.mofi.solver.max_outer_iters < 1 || rc.mofi.solver.max_inner_iters < 1)
            throw ConfigError("[fit] iteration caps must be positive");
        const int has_fixed = (rc.mofi.fixed_lambda > 0) + (rc.mofi.fixed_alpha > 0) + (rc.mofi.fixed_theta > 0);
        if (has_fixed != 0 && has_fixed != 3)
            throw ConfigError("[fit] lambda, alpha, theta must be given together (or none)");
        if (rc.mofi.fixed_alpha > 0 && !(rc.mofi.fixed_alpha < 1.0))
            throw ConfigError("[fit] alpha must lie in (0,1)");

        rc.mofi.folds = static_cast<int>(f.get_int("cv", "folds", 5));
        rc.mofi.lambda_count = static_cast<int>(f.get_int("cv", "lambda_count", 20));
        rc.mofi.lambda_min_ratio = f.get_double("cv", "lambda_min_ratio", 1e-3);
        rc.mofi.alpha_grid = f.get_doubles("cv", "alpha_grid", default_alpha_grid());
        rc.mofi.theta_multipliers = f.get_doubles("cv", "theta_multipliers", {0.01, 0.1, 1.0});
        rc.mofi.alpha_window_half_width = f.get_double("cv", "alpha_window", 0.2);
        rc.mofi.cv_outer_tol = f.get_double("cv", "cv_outer_tol", 1e-6);
        rc.dump_surface = f.get_bool("cv", "dump_surface", false);
        rc.mofi.cv_seed = f.get_uint("cv", "seed", rc.seed);
        if (rc.mofi.folds < 2) throw ConfigError("[cv] folds must be >= 2");
        if (rc.mofi.lambda_count < 1) throw ConfigError("[cv] lambda_count must be >= 1");
        if (!(rc.mofi.lambda_min_ratio > 0.0 && rc.mofi.lambda_min_ratio <= 1.0))
            throw ConfigError("[cv] lambda_min_ratio must lie in (0,1]");
        for (double a : rc.mofi.alpha_grid)
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("[cv] alpha_grid entries must lie in (0,1)");
        for (double t : rc.mofi.theta_multipliers)
            if (!(t > 0.0)) throw ConfigError("[cv] theta_multipliers must be positive");

        rc.bench.replicates = static_cast<int>(f.get_int("bench", "replicates", rc.bench.replicates));
        {
            std::vector<std::string> scen = f.get_strings("bench", "scenarios", {"I"});
            rc.bench.scenarios.clear();
            for (const auto& s : scen) rc.bench.scenarios.push_back(scenario_from_string(s));
        }
        rc.bench.n_list = f.get_int_list("bench", "n_list", rc.bench.n_list);
        rc.bench.sigma_list = f.get_doubles("bench", "sigma_list", rc.bench.sigma_list);
        rc.bench.methods = f.get_strings("bench", "methods", rc.bench.methods);
        if (rc.bench.replicates < 1) throw ConfigError("[bench] replicates must be >= 1");
        if (rc.bench.methods.empty()) throw ConfigError("[bench] methods must be nonempty");
        for (const auto& mname : rc.bench.methods)
            if (mname != "fenet" && mname != "fenet-refine" && mname != "mofi-fix" &&
                mname != "mofi-optim")
                throw ConfigError("[bench] unknown method: " + mname);
        for (int n : rc.bench.n_list)
            if (n < 10) throw ConfigError("[bench] n_list entries must be >= 10");
        for (double s : rc.bench.sigma_list)
            if (s < 0.0) throw ConfigError("[bench] sigma_list entries must be nonnegative");

        rc.eval_result = f.get_string("evaluate", "result", "");
        rc.eval_truth = f.get_string("evaluate", "truth", "");

        f.finish({"global", "simulate", "kernel", "fit", "cv", "bench", "evaluate"});
        return rc;
    }
};

}  // namespace mofi
