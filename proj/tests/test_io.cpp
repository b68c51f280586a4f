#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mofi/config.hpp"
#include "mofi/io.hpp"

using namespace mofi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mofi_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST(Csv, RoundTripIsLossless) {
    TempDir tmp;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> gauss;
    Matrix m(7, 5);
    for (Index i = 0; i < 7; ++i)
        for (Index j = 0; j < 5; ++j) m(i, j) = gauss(rng) * std::pow(10.0, (int)(rng() % 7) - 3);
    const fs::path p = tmp.path / "m.csv";
    write_matrix_csv(p, m);
    const Matrix back = read_matrix_csv(p);
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), m.cols());
    EXPECT_TRUE(back.isApprox(m, 0.0));  // bitwise via %.17g
}

TEST(Csv, RejectsRaggedAndMissing) {
    TempDir tmp;
    const fs::path p = tmp.path / "bad.csv";
    std::ofstream(p) << "1,2,3\n4,5\n";
    EXPECT_THROW(read_matrix_csv(p), IoError);
    EXPECT_THROW(read_matrix_csv(tmp.path / "nope.csv"), IoError);
}

TEST(TruthManifest, RoundTrip) {
    SimConfig cfg;
    cfg.n = 20;
    cfg.p = 6;
    cfg.q = 4;
    cfg.q0 = 2;
    cfg.sigma = 2.0;
    cfg.n_grid = 30;
    cfg.n_test = 50;
    cfg.seed = 42;
    cfg.scenario = Scenario::II;
    const SimulationTruth truth = gen_coefficients(cfg);

    TempDir tmp;
    const fs::path p = tmp.path / "truth.txt";
    write_truth_manifest(p, cfg, truth);
    const TruthManifest back = read_truth_manifest(p);
    EXPECT_EQ(back.cfg.n, cfg.n);
    EXPECT_EQ(back.cfg.p, cfg.p);
    EXPECT_EQ(back.cfg.q, cfg.q);
    EXPECT_EQ(back.cfg.q0, cfg.resolved_q0());
    EXPECT_EQ(back.cfg.seed, cfg.seed);
    EXPECT_EQ(back.cfg.scenario, cfg.scenario);
    EXPECT_EQ(back.truth.s_true, truth.s_true);
    EXPECT_EQ(back.truth.s0_true, truth.s0_true);
    EXPECT_EQ(back.truth.s1_true, truth.s1_true);
    EXPECT_TRUE(back.truth.u_signs.isApprox(truth.u_signs, 0.0));
    EXPECT_TRUE(back.truth.gamma_flags.isApprox(truth.gamma_flags, 0.0));
    EXPECT_TRUE(back.truth.beta_coeffs.isApprox(truth.beta_coeffs, 0.0));
}

TEST(DatasetBundle, SimulateWriteReadMatches) {
    SimConfig cfg;
    cfg.n = 15;
    cfg.p = 3;
    cfg.q = 2;
    cfg.q0 = 1;
    cfg.n_grid = 25;
    cfg.n_test = 10;
    cfg.seed = 9;
    const SimulationTruth truth = gen_coefficients(cfg);
    const Dataset ds = simulate(cfg, truth);

    TempDir tmp;
    write_dataset_bundle(tmp.path, ds, truth);
    const std::vector<Matrix> x = read_predictor_bundle(tmp.path);
    ASSERT_EQ(x.size(), 3u);
    for (int j = 0; j < 3; ++j) EXPECT_TRUE(x[j].isApprox(ds.x[j], 0.0));
    const Vector y = read_vector_csv(tmp.path / "Y.csv");
    EXPECT_TRUE(y.isApprox(ds.y, 0.0));
    EXPECT_TRUE(fs::exists(tmp.path / "X_test_1.csv"));
    EXPECT_TRUE(fs::exists(tmp.path / "Y_test.csv"));
    EXPECT_TRUE(fs::exists(tmp.path / "truth_manifest.txt"));
}

TEST(ResultBundle, RoundTrip) {
    MofiResult result;
    result.stage1.selected = {2, 5};
    result.stage2.selected = {2, 5};
    result.stage2.simple_set = {2};
    result.stage2.complex_set = {5};
    result.stage2_run = true;
    for (int s = 0; s < 2; ++s) {
        result.stage2.beta_hat.push_back(Vector::LinSpaced(4, 0.25 + s, 1.0 + s));
        result.stage2.beta0_hat.push_back(Vector::Constant(4, 0.5));
        result.stage2.beta1_hat.push_back(result.stage2.beta_hat.back().array() - 0.5);
    }
    TempDir tmp;
    write_result_bundle(tmp.path, result, Strategy::Optim);
    const ResultBundle back = read_result_bundle(tmp.path);
    EXPECT_EQ(back.selected, result.stage1.selected);
    EXPECT_EQ(back.simple_set, result.stage2.simple_set);
    EXPECT_EQ(back.complex_set, result.stage2.complex_set);
    ASSERT_EQ(back.curve_ids, (std::vector<int>{2, 5}));
    for (int s = 0; s < 2; ++s) {
        EXPECT_TRUE(back.beta[s].isApprox(result.stage2.beta_hat[s], 0.0));
        EXPECT_TRUE(back.beta0[s].isApprox(result.stage2.beta0_hat[s], 0.0));
        EXPECT_TRUE(back.beta1[s].isApprox(result.stage2.beta1_hat[s], 0.0));
    }
}

TEST(ConfigFile, ParsesSectionsListsAndComments) {
    ConfigFile f = ConfigFile::parse_string(
        "# comment\n"
        "[global]\n"
        "seed = 7   ; trailing comment\n"
        "threads = 2\n"
        "[cv]\n"
        "alpha_grid = 0.2, 0.5, 0.8\n");
    EXPECT_EQ(f.get_uint("global", "seed", 0), 7u);
    EXPECT_EQ(f.get_int("global", "threads", 0), 2);
    const auto alphas = f.get_doubles("cv", "alpha_grid", {});
    ASSERT_EQ(alphas.size(), 3u);
    EXPECT_DOUBLE_EQ(alphas[1], 0.5);
    f.finish({"global", "cv"});
}

TEST(ConfigFile, UnknownKeyFailsFast) {
    ConfigFile f = ConfigFile::parse_string("[global]\nseeed = 7\n");
    EXPECT_THROW(f.finish({"global"}), ConfigError);
}

TEST(ConfigFile, UnknownSectionFailsFast) {
    ConfigFile f = ConfigFile::parse_string("[globall]\nseed = 7\n");
    f.get_uint("globall", "seed", 0);
    EXPECT_THROW(f.finish({"global"}), ConfigError);
}

TEST(ConfigFile, RejectsDuplicatesAndMalformedLines) {
    EXPECT_THROW(ConfigFile::parse_string("[a]\nx = 1\nx = 2\n"), ConfigError);
    EXPECT_THROW(ConfigFile::parse_string("[a]\njust a line\n"), ConfigError);
    EXPECT_THROW(ConfigFile::parse_string("x = 1\n"), ConfigError);
}

TEST(RunConfigParse, ValidatesNumericFields) {
    EXPECT_THROW(
        {
            ConfigFile f = ConfigFile::parse_string("[simulate]\nrho = 1.5\n");
            RunConfig::from_config(f);
        },
        ConfigError);
    EXPECT_THROW(
        {
            ConfigFile f = ConfigFile::parse_string("[cv]\nfolds = 1\n");
            RunConfig::from_config(f);
        },
        ConfigError);
    EXPECT_THROW(
        {
            ConfigFile f = ConfigFile::parse_string("[bench]\nmethods = magic\n");
            RunConfig::from_config(f);
        },
        ConfigError);
    EXPECT_THROW(
        {
            ConfigFile f = ConfigFile::parse_string("[fit]\nlambda = 0.5\n");
            RunConfig::from_config(f);
        },
        ConfigError);  // lambda without alpha and theta
}

TEST(RunConfigParse, DefaultsAreUsable) {
    ConfigFile f = ConfigFile::parse_string("[global]\nseed = 3\n");
    const RunConfig rc = RunConfig::from_config(f);
    EXPECT_EQ(rc.sim.seed, 3u);
    EXPECT_EQ(rc.mofi.folds, 5);
    EXPECT_EQ(rc.bench.methods.size(), 4u);
}
