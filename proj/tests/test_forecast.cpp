#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "statecast/dynamics.hpp"
#include "statecast/engine.hpp"
#include "statecast/forecast.hpp"
#include "support/test_helpers.hpp"

using namespace statecast;

namespace {

StateEnsemble hand_ensemble(const std::vector<double>& flc_means,
                            const std::vector<double>& plc_means,
                            const std::vector<double>& priors, double bandwidth = 0.5) {
    StateEnsemble ens;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(1, 1);
    for (std::size_t j = 0; j < flc_means.size(); ++j) {
        Eigen::VectorXd v(1), mu(1);
        v << flc_means[j];
        mu << plc_means[j];
        ens.states.push_back(ModelState{GaussianComponent(mu, eye),
                                        KdeComponent{WeightedSample1D{v, Eigen::VectorXd::Ones(1)},
                                                     bandwidth, 1.0},
                                        priors[j], priors[j], false, false});
    }
    return ens;
}

ModelArtifact tiny_model(const StateEnsemble& ens, int plc_dim = 1) {
    ModelArtifact m;
    m.geometry = FieldGeometry{11, 8, Boundary::periodic, 1, 1, 0};
    (void)plc_dim;
    m.ensemble = ens;
    return m;
}

}  // namespace

TEST_CASE("plc_state_weights") {
    SECTION("single state is certain") {
        const StateEnsemble ens = hand_ensemble({1.0}, {0.0}, {1.0});
        Eigen::VectorXd plc(1);
        plc << 0.7;
        const Eigen::VectorXd w = plc_state_weights(ens, plc);
        REQUIRE(w.size() == 1);
        CHECK(w(0) == 1.0);
    }
    SECTION("equidistant query with equal priors splits evenly") {
        const StateEnsemble ens = hand_ensemble({0.0, 0.0}, {-2.0, 2.0}, {0.5, 0.5});
        Eigen::VectorXd plc(1);
        plc << 0.0;
        const Eigen::VectorXd w = plc_state_weights(ens, plc);
        CHECK_THAT(w(0), Catch::Matchers::WithinAbs(0.5, 1e-12));
        CHECK_THAT(w(1), Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
    SECTION("three-state hand model matches the direct product") {
        const StateEnsemble ens = hand_ensemble({0.0, 1.0, 2.0}, {-1.0, 0.5, 3.0}, {0.2, 0.5, 0.3});
        Eigen::VectorXd plc(1);
        plc << 0.9;
        Eigen::Vector3d raw;
        for (int j = 0; j < 3; ++j) {
            const double mu = ens.states[static_cast<std::size_t>(j)].plc_model.mean()(0);
            raw(j) = std::exp(-0.5 * (0.9 - mu) * (0.9 - mu)) / std::sqrt(2 * M_PI) *
                     ens.states[static_cast<std::size_t>(j)].prior;
        }
        raw /= raw.sum();
        const Eigen::VectorXd w = plc_state_weights(ens, plc);
        for (int j = 0; j < 3; ++j) CHECK_THAT(w(j), Catch::Matchers::WithinAbs(raw(j), 1e-12));
    }
    SECTION("invariant under joint prior rescaling") {
        StateEnsemble a = hand_ensemble({0.0, 1.0}, {-1.0, 1.0}, {0.3, 0.7});
        StateEnsemble b = a;
        for (auto& s : b.states) s.prior *= 11.0;  // unnormalized priors, same ratios
        Eigen::VectorXd plc(1);
        plc << 0.4;
        CHECK((plc_state_weights(a, plc) - plc_state_weights(b, plc)).norm() < 1e-14);
    }
    SECTION("artifact wrapper validates the cone dimension") {
        const ModelArtifact m = tiny_model(hand_ensemble({0.0}, {0.0}, {1.0}));
        Eigen::VectorXd wrong(2);
        wrong << 0.0, 1.0;
        CHECK_THROWS_AS(plc_state_weights(m, wrong), DataError);
    }
}

TEST_CASE("predictive_pdf") {
    SECTION("single state equals its component density") {
        const StateEnsemble ens = hand_ensemble({0.7}, {0.0}, {1.0}, 0.4);
        Eigen::VectorXd plc(1);
        plc << 1.3;
        for (double x : {-1.0, 0.0, 0.7, 2.5})
            CHECK_THAT(predictive_pdf(ens, plc, x),
                       Catch::Matchers::WithinRel(wkde_pdf(ens.states[0].flc_model, x), 1e-12));
    }
    SECTION("two-state hand sum") {
        const StateEnsemble ens = hand_ensemble({-1.0, 2.0}, {-1.0, 1.0}, {0.5, 0.5}, 0.8);
        Eigen::VectorXd plc(1);
        plc << 0.2;
        const Eigen::VectorXd w = plc_state_weights(ens, plc);
        const double x = 0.9;
        const double expected = w(0) * wkde_pdf(ens.states[0].flc_model, x) +
                                w(1) * wkde_pdf(ens.states[1].flc_model, x);
        CHECK_THAT(predictive_pdf(ens, plc, x), Catch::Matchers::WithinRel(expected, 1e-12));
    }
    SECTION("integrates to one") {
        const StateEnsemble ens = hand_ensemble({-2.0, 0.5, 3.0}, {-1.0, 0.0, 1.0},
                                                {0.25, 0.5, 0.25}, 0.6);
        Eigen::VectorXd plc(1);
        plc << 0.3;
        const double mass = testsupport::integrate(
            [&](double x) { return predictive_pdf(ens, plc, x); }, -2 - 8 * 0.6, 3 + 8 * 0.6, 8001);
        CHECK_THAT(mass, Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
}

TEST_CASE("point_forecast") {
    SECTION("single state returns the component mean") {
        const StateEnsemble ens = hand_ensemble({1.7}, {0.0}, {1.0});
        Eigen::VectorXd plc(1);
        plc << -0.3;
        CHECK_THAT(point_forecast(ens, plc), Catch::Matchers::WithinAbs(1.7, 1e-12));
    }
    SECTION("symmetric mixture forecasts zero") {
        const StateEnsemble ens = hand_ensemble({-1.0, 1.0}, {-2.0, 2.0}, {0.5, 0.5});
        Eigen::VectorXd plc(1);
        plc << 0.0;
        CHECK_THAT(point_forecast(ens, plc), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    SECTION("lies in the convex hull of component means") {
        std::mt19937_64 rng(71);
        std::uniform_real_distribution<double> ud(-3.0, 3.0);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> means{ud(rng), ud(rng), ud(rng)};
            const StateEnsemble ens =
                hand_ensemble(means, {ud(rng), ud(rng), ud(rng)}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
            Eigen::VectorXd plc(1);
            plc << ud(rng);
            const double f = point_forecast(ens, plc);
            CHECK(f >= *std::min_element(means.begin(), means.end()) - 1e-12);
            CHECK(f <= *std::max_element(means.begin(), means.end()) + 1e-12);
        }
    }
    SECTION("one-hot weights reproduce the single component mean exactly") {
        // Push the query far toward state 0 so its weight is exactly 1.0
        // after normalization.
        const StateEnsemble ens = hand_ensemble({-1.5, 4.0}, {-50.0, 50.0}, {0.5, 0.5});
        Eigen::VectorXd plc(1);
        plc << -50.0;
        const Eigen::VectorXd w = plc_state_weights(ens, plc);
        REQUIRE(w(0) == 1.0);
        CHECK(point_forecast(ens, plc) == -1.5);
    }
}

TEST_CASE("forecast_field") {
    CaConfig ca;
    ca.spatial_size = 24;
    ca.time_steps = 50;
    ca.burn_in = 30;
    ca.seed = 5;
    const CaRealization real = simulate_true(ca);
    const LightConeSet cones = extract_light_cones(real.observed);
    auto [train, test] = split_train_test(cones, 0.5);
    EmConfig c;
    c.k_max = 5;
    c.n_runs = 1;
    c.max_iterations = 120;
    c.seed = 19;
    const ModelArtifact model = fit(train, test, c);

    SECTION("zero steps returns the prefix unchanged") {
        const Field out = forecast_field(model, real.observed, 0);
        CHECK(out.values == real.observed.values);
    }
    SECTION("a zero-mean model maps a zero prefix to zero forecasts") {
        const StateEnsemble ens = hand_ensemble({0.0}, {0.0}, {1.0});
        ModelArtifact zero_model = tiny_model(ens);
        zero_model.geometry = FieldGeometry{12, 4, Boundary::periodic, 1, 1, 0};
        // Rebuild component dims to the cone dimension of the geometry.
        Eigen::VectorXd v(1);
        v << 0.0;
        zero_model.ensemble.states[0].plc_model =
            GaussianComponent(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
        Field prefix;
        prefix.geometry = zero_model.geometry;
        prefix.geometry.time_steps = 4;
        prefix.values = Eigen::MatrixXd::Zero(12, 4);
        const Field out = forecast_field(zero_model, prefix, 6);
        CHECK(out.geometry.time_steps == 10);
        CHECK(out.values.isZero(0.0));
    }
    SECTION("one-step forecasts reproduce the engine MSE on the test block") {
        const OneStepForecast osf = one_step_forecast(model, real.observed);
        // Restrict to the rows the selection used.
        double sq = 0.0;
        long count = 0;
        for (Eigen::Index i = 0; i < cones.rows(); ++i) {
            const auto [r, t] = cones.index_map[static_cast<std::size_t>(i)];
            if (t <= 25) continue;
            const double res = osf.residual.values(r - 1, t - 1);
            sq += res * res;
            ++count;
        }
        REQUIRE(count == test.rows());
        CHECK_THAT(sq / count, Catch::Matchers::WithinRel(predict_mse(test, model.ensemble), 1e-12));
    }
    SECTION("insufficient prefix is rejected") {
        Field prefix;
        prefix.geometry = model.geometry;
        prefix.geometry.time_steps = 1;  // below past_horizon
        prefix.values = Eigen::MatrixXd::Zero(model.geometry.spatial_size, 1);
        CHECK_THROWS_AS(forecast_field(model, prefix, 2), DataError);
    }
}
