#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mofi/common.hpp"
#include "mofi/metrics.hpp"
#include "mofi/pipeline.hpp"
#include "mofi/simgen.hpp"

namespace mofi {

/// Full-precision decimal so CSV round-trips are lossless.
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out << ',';
            out << format_full(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline void write_vector_csv(const std::filesystem::path& path, const Vector& v) {
    write_matrix_csv(path, v);
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("non-numeric cell in " + path.string() + ": '" + cell + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw IoError("ragged rows in " + path.string());
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError("empty CSV: " + path.string());
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return m;
}

inline Vector read_vector_csv(const std::filesystem::path& path) {
    const Matrix m = read_matrix_csv(path);
    if (m.cols() != 1) throw IoError("expected a single column in " + path.string());
    return m.col(0);
}

inline void write_kernel_csv(const std::filesystem::path& path, const KernelMatrix& k) {
    write_matrix_csv(path, k.values);
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    int v;
    while (ss >> v) out.push_back(v);
    return out;
}

}  // namespace detail

/// Truth manifest: everything needed to rebuild the generating model and
/// its test set (config scalars, index sets, signs, activity flags).
inline void write_truth_manifest(const std::filesystem::path& path, const SimConfig& cfg,
                                 const SimulationTruth& truth) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "mofi truth manifest v1\n";
    out << "seed = " << cfg.seed << '\n';
    out << "scenario = " << to_string(cfg.scenario) << '\n';
    out << "n = " << cfg.n << '\n';
    out << "p = " << cfg.p << '\n';
    out << "q = " << cfg.q << '\n';
    out << "q0 = " << cfg.resolved_q0() << '\n';
    out << "rho = " << format_full(cfg.rho) << '\n';
    out << "sigma = " << format_full(cfg.sigma) << '\n';
    out << "n_basis = " << cfg.n_basis << '\n';
    out << "N = " << cfg.n_grid << '\n';
    out << "n_test = " << cfg.n_test << '\n';
    out << "S = " << detail::join_ints(truth.s_true) << '\n';
    out << "S0 = " << detail::join_ints(truth.s0_true) << '\n';
    out << "S1 = " << detail::join_ints(truth.s1_true) << '\n';
    for (int j = 0; j < cfg.q; ++j) {
        out << "u " << (j + 1) << " =";
        for (int k = 0; k < cfg.n_basis; ++k) out << ' ' << static_cast<int>(truth.u_signs(j, k));
        out << '\n';
        out << "gamma " << (j + 1) << " =";
        for (int k = 0; k < cfg.n_basis; ++k) out << ' ' << static_cast<int>(truth.gamma_flags(j, k));
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

struct TruthManifest {
    SimConfig cfg;
    SimulationTruth truth;
};

inline TruthManifest read_truth_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string header;
    std::getline(in, header);
    if (header != "mofi truth manifest v1") throw IoError("not a truth manifest: " + path.string());
    TruthManifest m;
    m.cfg.q0 = 0;
    std::string line;
    std::vector<std::pair<int, std::vector<int>>> u_rows, gamma_rows;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        if (key == "seed") m.cfg.seed = std::stoull(value);
        else if (key == "scenario") {
            std::string v = value;
            v.erase(0, v.find_first_not_of(' '));
            m.cfg.scenario = scenario_from_string(v);
        } else if (key == "n") m.cfg.n = std::stoi(value);
        else if (key == "p") m.cfg.p = std::stoi(value);
        else if (key == "q") m.cfg.q = std::stoi(value);
        else if (key == "q0") m.cfg.q0 = std::stoi(value);
        else if (key == "rho") m.cfg.rho = std::stod(value);
        else if (key == "sigma") m.cfg.sigma = std::stod(value);
        else if (key == "n_basis") m.cfg.n_basis = std::stoi(value);
        else if (key == "N") m.cfg.n_grid = std::stoi(value);
        else if (key == "n_test") m.cfg.n_test = std::stoi(value);
        else if (key == "S") m.truth.s_true = detail::parse_ints(value);
        else if (key == "S0") m.truth.s0_true = detail::parse_ints(value);
        else if (key == "S1") m.truth.s1_true = detail::parse_ints(value);
        else if (key.rfind("u ", 0) == 0)
            u_rows.emplace_back(std::stoi(key.substr(2)), detail::parse_ints(value));
        else if (key.rfind("gamma ", 0) == 0)
            gamma_rows.emplace_back(std::stoi(key.substr(6)), detail::parse_ints(value));
        else throw IoError("unknown manifest key: " + key);
    }
    m.cfg.validate();
    const int q = m.cfg.q;
    m.truth.u_signs = Matrix::Zero(std::max(q, 1), m.cfg.n_basis);
    m.truth.gamma_flags = Matrix::Zero(std::max(q, 1), m.cfg.n_basis);
    m.truth.beta_coeffs = Matrix::Zero(m.cfg.p, m.cfg.n_basis);
    for (const auto& [j, vals] : u_rows)
        for (int k = 0; k < m.cfg.n_basis && k < static_cast<int>(vals.size()); ++k)
            m.truth.u_signs(j - 1, k) = vals[k];
    for (const auto& [j, vals] : gamma_rows)
        for (int k = 0; k < m.cfg.n_basis && k < static_cast<int>(vals.size()); ++k)
            m.truth.gamma_flags(j - 1, k) = vals[k];
    for (int j = 0; j < q; ++j)
        for (int k = 1; k <= m.cfg.n_basis; ++k)
            if (m.truth.gamma_flags(j, k - 1) > 0.5) {
                const double sign = m.truth.u_signs(j, k - 1) > 0.5 ? -1.0 : 1.0;
                m.truth.beta_coeffs(j, k - 1) = 4.0 * sign * nu_decay(k);
            }
    return m;
}

/// Writes the dataset bundle: X_<j>.csv (n x N, 1-based j), Y.csv, the
/// truth manifest, and a test bundle when n_test > 0.
inline void write_dataset_bundle(const std::filesystem::path& dir, const Dataset& ds,
                                 const SimulationTruth& truth) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir.string());
    for (std::size_t j = 0; j < ds.x.size(); ++j)
        write_matrix_csv(dir / ("X_" + std::to_string(j + 1) + ".csv"), ds.x[j]);
    write_vector_csv(dir / "Y.csv", ds.y);
    write_truth_manifest(dir / "truth_manifest.txt", ds.cfg, truth);
    if (ds.cfg.n_test > 0) {
        for (std::size_t j = 0; j < ds.x_test.size(); ++j)
            write_matrix_csv(dir / ("X_test_" + std::to_string(j + 1) + ".csv"), ds.x_test[j]);
        write_vector_csv(dir / "Y_test.csv", ds.y_test_noiseless);
    }
}

/// Loads X_1.csv .. X_p.csv (contiguous 1-based ids) from a directory.
inline std::vector<Matrix> read_predictor_bundle(const std::filesystem::path& dir) {
    std::vector<Matrix> x;
    for (int j = 1;; ++j) {
        const auto path = dir / ("X_" + std::to_string(j) + ".csv");
        if (!std::filesystem::exists(path)) break;
        x.push_back(read_matrix_csv(path));
        if (x.back().rows() != x.front().rows() || x.back().cols() != x.front().cols())
            throw IoError("predictor files disagree in shape: " + path.string());
    }
    if (x.empty()) throw IoError("no X_<j>.csv files found in " + dir.string());
    return x;
}

/// Result bundle: selected sets, reconstructed curves, tuning record,
/// solver diagnostics.
inline void write_result_bundle(const std::filesystem::path& dir, const MofiResult& result,
                                Strategy strategy) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir.string());

    {
        std::ofstream out(dir / "selection.txt");
        out << "S = " << detail::join_ints(result.stage1.selected) << '\n';
        out << "S0 = " << detail::join_ints(result.stage2.simple_set) << '\n';
        out << "S1 = " << detail::join_ints(result.stage2.complex_set) << '\n';
        if (!out) throw IoError("write failed: selection.txt");
    }
    {
        std::ofstream out(dir / "curves.csv");
        out << "predictor,grid_index,beta,beta0,beta1\n";
        for (std::size_t s = 0; s < result.stage2.selected.size(); ++s) {
            const int id = result.stage2.selected[s];
            const Vector& beta = result.stage2.beta_hat[s];
            const Vector& beta0 = result.stage2.beta0_hat[s];
            const Vector& beta1 = result.stage2.beta1_hat[s];
            for (Index t = 0; t < beta.size(); ++t)
                out << id << ',' << (t + 1) << ',' << format_full(beta[t]) << ','
                    << format_full(beta0[t]) << ',' << format_full(beta1[t]) << '\n';
        }
        if (!out) throw IoError("write failed: curves.csv");
    }
    {
        std::ofstream out(dir / "tuning.txt");
        out << "strategy = " << (strategy == Strategy::Fix ? "fix" : "optim") << '\n';
        out << "stage1.lambda = " << format_full(result.record1.lambda) << '\n';
        out << "stage1.alpha = " << format_full(result.record1.alpha) << '\n';
        out << "stage1.theta = " << format_full(result.record1.theta) << '\n';
        out << "stage1.m = " << result.record1.m << '\n';
        out << "stage1.cv_error = " << format_full(result.record1.cv_error) << '\n';
        if (result.stage2_run) {
            out << "stage2.lambda = " << format_full(result.record2.lambda) << '\n';
            out << "stage2.alpha = " << format_full(result.record2.alpha) << '\n';
            out << "stage2.theta = " << format_full(result.record2.theta) << '\n';
            out << "stage2.m = " << result.record2.m << '\n';
            out << "stage2.cv_error = " << format_full(result.record2.cv_error) << '\n';
        }
        if (!out) throw IoError("write failed: tuning.txt");
    }
    {
        std::ofstream out(dir / "diagnostics.txt");
        out << "stage1.kkt_max = " << format_full(result.stage1.kkt.max_violation) << '\n';
        out << "stage1.sweeps = " << result.stage1.fit.diagnostics.sweeps << '\n';
        out << "stage1.converged = " << (result.stage1.fit.diagnostics.converged ? 1 : 0) << '\n';
        if (result.stage2_run) {
            out << "stage2.kkt_max = " << format_full(result.stage2.kkt.max_violation) << '\n';
            out << "stage2.sweeps = " << result.stage2.fit.diagnostics.sweeps << '\n';
            out << "stage2.converged = " << (result.stage2.fit.diagnostics.converged ? 1 : 0) << '\n';
        }
        if (!out) throw IoError("write failed: diagnostics.txt");
    }
}

struct ResultBundle {
    std::vector<int> selected, simple_set, complex_set;
    std::vector<int> curve_ids;        // predictor id per curve row group
    std::vector<Vector> beta, beta0, beta1;
};

inline ResultBundle read_result_bundle(const std::filesystem::path& dir) {
    ResultBundle bundle;
    {
        std::ifstream in(dir / "selection.txt");
        if (!in) throw IoError("cannot open " + (dir / "selection.txt").string());
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, line.find(' '));
            const auto vals = detail::parse_ints(line.substr(eq + 1));
            if (key == "S") bundle.selected = vals;
            else if (key == "S0") bundle.simple_set = vals;
            else if (key == "S1") bundle.complex_set = vals;
        }
    }
    {
        std::ifstream in(dir / "curves.csv");
        if (!in) throw IoError("cannot open " + (dir / "curves.csv").string());
        std::string line;
        std::getline(in, line);  // header
        std::vector<double> beta, beta0, beta1;
        int current_id = -1;
        auto flush = [&]() {
            if (current_id < 0) return;
            bundle.curve_ids.push_back(current_id);
            bundle.beta.push_back(Eigen::Map<Vector>(beta.data(), static_cast<Index>(beta.size())));
            bundle.beta0.push_back(Eigen::Map<Vector>(beta0.data(), static_cast<Index>(beta0.size())));
            bundle.beta1.push_back(Eigen::Map<Vector>(beta1.data(), static_cast<Index>(beta1.size())));
            beta.clear();
            beta0.clear();
            beta1.clear();
        };
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != 5) throw IoError("malformed curves.csv row: " + line);
            const int id = std::stoi(cells[0]);
            if (id != current_id) {
                flush();
                current_id = id;
            }
            beta.push_back(std::stod(cells[2]));
            beta0.push_back(std::stod(cells[3]));
            beta1.push_back(std::stod(cells[4]));
        }
        flush();
    }
    return bundle;
}

/// Machine-readable error record for failed CLI runs.
inline void write_error_record(const std::filesystem::path& dir, int code,
                               const std::string& message) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(dir / "error.txt");
    out << "code = " << code << '\n' << "message = " << message << '\n';
}

}  // namespace mofi
