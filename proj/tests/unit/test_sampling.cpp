#include "test_util.hpp"

#include "nvdiff/errors.hpp"
#include "nvdiff/sampling.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace nvdiff;

namespace {

// Data N(0, s^2 I) diffused by the VP kernel stays Gaussian with variance m_t^2 s^2 + sigma_t^2,
// so the exact score is -z / var_t.
struct GaussianOracle {
    sde::VpsdeConfig cfg;
    double s = 0.5;

    double var(double t) const {
        const auto mp = sde::marginal_params(cfg, t);
        return mp.mean_scale * mp.mean_scale * s * s + mp.sigma * mp.sigma;
    }
    ScoreFn score() const {
        return [this](const Mat& z, double t) -> Mat { return -z / var(t); };
    }
};

double sample_std(const Mat& z) {
    const double m = z.mean();
    return std::sqrt((z.array() - m).square().sum() / static_cast<double>(z.size() - 1));
}

Model tiny_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.vae.latent_dim = 2;
    cfg.vae.encoder_layers = 1;
    cfg.vae.encoder_hidden = 8;
    cfg.vae.decoder_hidden = 8;
    cfg.vae.noise_dim = 2;
    cfg.score.latent_dim = 2;
    cfg.score.hidden_dim = 8;
    cfg.score.num_layers = 1;
    cfg.score.time_emb_dim = 4;
    Rng rng(seed);
    Model m(cfg, rng);
    m.train_sizes = {3, 4, 4, 6};
    return m;
}

}  // namespace

TEST_CASE("reverse step: null dynamics and first-order drift") {
    Rng rng(1);
    sde::DiffusionState st{testutil::random_mat(3, 2, rng), 0.5};
    auto same = reverse_sde_step(st, testutil::random_mat(3, 2, rng), 0.0, 0.0, 0.01, testutil::random_mat(3, 2, rng));
    CHECK(same.latent == st.latent);
    CHECK(same.time == doctest::Approx(0.49));

    sde::VpsdeConfig cfg;
    const double dt = 1e-3;
    auto next = reverse_sde_step(st, Mat::Zero(3, 2), cfg, dt, Mat::Zero(3, 2));
    const double factor = 1.0 + sde::beta(cfg, 0.5) * dt / 2.0;
    CHECK((next.latent - factor * st.latent).cwiseAbs().maxCoeff() < 1e-14);

    CHECK_THROWS_AS(reverse_sde_step(st, Mat::Zero(2, 2), cfg, dt, Mat::Zero(3, 2)), DimensionError);
    CHECK_THROWS_AS(reverse_sde_step(st, Mat::Zero(3, 2), cfg, -dt, Mat::Zero(3, 2)), RangeError);
    Mat inf = Mat::Zero(3, 2);
    inf(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(reverse_sde_step(st, inf, cfg, dt, Mat::Zero(3, 2)), DivergenceError);
}

TEST_CASE("analytic Gaussian: EM and ODE recover the data std") {
    GaussianOracle g;
    Rng rng(2);
    const int paths = 10000;
    const double target = std::sqrt(g.var(g.cfg.eps_t));
    sde::DiffusionState start{testutil::random_mat(paths, 1, rng, std::sqrt(g.var(1.0))), 1.0};

    SolverConfig em;
    em.kind = SolverKind::EulerMaruyama;
    em.num_steps = 1000;
    auto e = run_solver(start, g.score(), g.cfg, em, rng);
    CHECK(e.time == g.cfg.eps_t);
    CHECK(std::abs(sample_std(e.latent) / target - 1.0) < 0.05);

    SolverConfig ode;
    ode.abs_tol = ode.rel_tol = 1e-4;
    auto o = run_solver(start, g.score(), g.cfg, ode, rng);
    // The flow map of a linear ODE is a scalar multiple, so the endpoint std is the start
    // std times the exact ratio sqrt(var(eps)/var(1)).
    const double exact = sample_std(start.latent) * std::sqrt(g.var(g.cfg.eps_t) / g.var(1.0));
    CHECK(std::abs(sample_std(o.latent) / exact - 1.0) < 0.02);
    CHECK(std::abs(sample_std(o.latent) / target - 1.0) < 0.02);
}

TEST_CASE("ODE: deterministic and tolerance sweep converges") {
    // Two-component mixture at +-1 gives a nonlinear score, so the flow is not a plain rescaling.
    sde::VpsdeConfig cfg;
    const double s = 0.2;
    ScoreFn mixture = [&](const Mat& z, double t) -> Mat {
        const auto mp = sde::marginal_params(cfg, t);
        const double var = mp.mean_scale * mp.mean_scale * s * s + mp.sigma * mp.sigma;
        Mat out(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double x = z.data()[i];
            const double lp = -0.5 * (x - mp.mean_scale) * (x - mp.mean_scale) / var;
            const double lm = -0.5 * (x + mp.mean_scale) * (x + mp.mean_scale) / var;
            const double wp = 1.0 / (1.0 + std::exp(lm - lp));
            out.data()[i] = -(x - (2.0 * wp - 1.0) * mp.mean_scale) / var;
        }
        return out;
    };
    Rng rng(3);
    sde::DiffusionState start{testutil::random_mat(200, 1, rng), 1.0};
    SolverConfig sc;
    sc.abs_tol = sc.rel_tol = 1e-10;
    const Mat ref = solve_ode(start, mixture, cfg, sc, cfg.eps_t).latent;
    std::vector<double> errs;
    for (double tol : {1e-3, 1e-4, 1e-5}) {
        sc.abs_tol = sc.rel_tol = tol;
        OdeStats stats;
        auto a = solve_ode(start, mixture, cfg, sc, cfg.eps_t, &stats);
        auto b = solve_ode(start, mixture, cfg, sc, cfg.eps_t);
        CHECK(a.latent == b.latent);
        CHECK(stats.accepted > 0);
        errs.push_back((a.latent - ref).cwiseAbs().mean());
    }
    CHECK(errs[1] < errs[0]);
    CHECK(errs[2] < errs[1]);
}

TEST_CASE("ODE: non-finite score diverges") {
    sde::VpsdeConfig cfg;
    ScoreFn bad = [](const Mat& z, double t) -> Mat {
        Mat out = z;
        if (t < 0.5) out(0, 0) = std::nan("");
        return out;
    };
    SolverConfig s;
    CHECK_THROWS_AS(solve_ode({Mat::Ones(2, 2), 1.0}, bad, cfg, s, cfg.eps_t), DivergenceError);
}

TEST_CASE("EM: refinement shrinks the endpoint error") {
    GaussianOracle g;
    g.s = 0.05;  // narrow data makes the discretization bias visible above Monte-Carlo noise
    // For a linear score each EM step maps the variance as v <- a^2 v + g^2 dt exactly.
    auto em_std = [&](int steps) {
        const double dt = (1.0 - g.cfg.eps_t) / steps;
        double v = g.var(1.0), t = 1.0;
        for (int k = 0; k < steps; ++k) {
            const double b = sde::beta(g.cfg, t);
            const double a = 1.0 - (-b / 2.0 + b / g.var(t)) * dt;
            v = a * a * v + b * dt;
            t -= dt;
        }
        return std::sqrt(v);
    };
    auto simulated = [&](int steps) {
        Rng rng(4);
        sde::DiffusionState start{testutil::random_mat(100000, 1, rng, std::sqrt(g.var(1.0))), 1.0};
        return sample_std(integrate_em(start, g.score(), g.cfg, steps, g.cfg.eps_t, rng).latent);
    };
    const double s250 = simulated(250), s1000 = simulated(1000), s4000 = simulated(4000);
    CHECK(std::abs(s250 / em_std(250) - 1.0) < 0.01);
    CHECK(std::abs(s1000 / em_std(1000) - 1.0) < 0.01);
    CHECK(std::abs(s4000 - s1000) < std::abs(s1000 - s250));
}

TEST_CASE("uniform time grid") {
    auto g = uniform_time_grid(0.0, 21);
    REQUIRE(g.size() == 21);
    CHECK(g.front() == 1.0);
    CHECK(g.back() == 0.0);
    CHECK(g[1] == doctest::Approx(0.95));
    CHECK(uniform_time_grid(0.3, 1).size() == 1);
    CHECK_THROWS_AS(uniform_time_grid(0.0, 0), RangeError);
}

TEST_CASE("solver config validation") {
    SolverConfig s;
    s.num_steps = 0;
    s.abs_tol = 0.0;
    try {
        s.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("num_steps") != std::string::npos);
        CHECK(msg.find("abs_tol") != std::string::npos);
    }
}

TEST_CASE("sample_graphs: count, support, determinism, trajectory export") {
    Model m = tiny_model(5);
    SampleOptions opts;
    opts.solver.abs_tol = opts.solver.rel_tol = 1e-3;
    opts.trajectory_grid = uniform_time_grid(m.config.sde.eps_t, 5);
    Rng r1(9), r2(9);
    auto a = sample_graphs(m, 6, opts, r1);
    auto b = sample_graphs(m, 6, opts, r2);
    REQUIRE(a.graphs.size() == 6);
    CHECK(a.graphs == b.graphs);
    int total_rows = 0;
    for (const auto& g : a.graphs) {
        CHECK((g.num_nodes() == 3 || g.num_nodes() == 4 || g.num_nodes() == 6));
        total_rows += g.num_nodes();
    }
    REQUIRE(a.trajectory.size() == 6 * 5);
    for (std::size_t k = 0; k < a.trajectory.size(); ++k) {
        CHECK(a.trajectory[k].t == opts.trajectory_grid[k % 5]);
        CHECK(a.trajectory[k].z == b.trajectory[k].z);
    }
    const auto path = std::filesystem::temp_directory_path() / "nvdiff_traj_test.csv";
    write_trajectory_csv(a.trajectory, path);
    std::ifstream is(path);
    std::string line;
    int lines = 0;
    std::getline(is, line);
    CHECK(line == "sample_id,t,node_id,z0,z1");
    while (std::getline(is, line)) ++lines;
    CHECK(lines == total_rows * 5);
    std::filesystem::remove(path);

    SampleOptions em;
    em.solver.kind = SolverKind::EulerMaruyama;
    em.solver.num_steps = 40;
    em.trajectory_grid = uniform_time_grid(m.config.sde.eps_t, 5);
    Rng r3(1);
    auto c = sample_graphs(m, 2, em, r3);
    CHECK(c.trajectory.size() == 2 * 5);
}

TEST_CASE("generator exchangeability through ODE and argmax decode") {
    Model m = tiny_model(6);
    m.norm.mean << 0.3, -0.2;
    m.norm.std << 1.5, 0.7;
    SolverConfig s;
    s.abs_tol = s.rel_tol = 1e-5;
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 3 + rep;
        Mat z1 = testutil::random_mat(n, 2, rng);
        Permutation p = Permutation::random(n, rng);
        Rng a(0), b(0);
        Mat za = sample_latent(m, z1, s, a);
        Mat zb = sample_latent(m, p.apply_rows(z1), s, b);
        CHECK((p.apply_rows(za) - zb).cwiseAbs().maxCoeff() < 1e-5);
        Rng d(0);
        GraphSample ga = sample_graph(m.vae.decoder, m.config.vae, za, DecodeMode::Argmax, d);
        GraphSample gb = sample_graph(m.vae.decoder, m.config.vae, zb, DecodeMode::Argmax, d);
        CHECK(apply_permutation(ga, p) == gb);
    }
}

TEST_CASE("importance-sampled likelihood") {
    Model m = tiny_model(8);
    GraphSample g = GraphSample::from_edges(4, {{0, 1}, {1, 2}, {2, 3}});

    // With the prior set equal to the proposal each weight is p(G|Z) for the drawn Z.
    Rng r(11), replay(11);
    const double est = nll_importance(m, g, 1, r, true);
    const Encoding enc = encode(m.vae.encoder, m.config.vae, g, replay);
    Mat eps(4, 2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) eps(i, j) = replay.normal();
    const Mat z = reparameterize(enc.mean, enc.std, eps);
    CHECK(est == doctest::Approx(log_likelihood(m.vae.decoder, m.config.vae, g, z)).epsilon(1e-12));

    // E[log mean of L weights] grows with L.
    auto avg = [&](int L) {
        Rng rr(100);
        double acc = 0.0;
        for (int rep = 0; rep < 40; ++rep) acc += nll_importance(m, g, L, rr);
        return acc / 40;
    };
    const double a1 = avg(1), a8 = avg(8), a64 = avg(64);
    CHECK(a1 < a8);
    CHECK(a8 < a64);

    CHECK_THROWS_AS(nll_importance(m, g, 0, r), RangeError);
}
