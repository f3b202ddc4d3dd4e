#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "adaptree/corpus.hpp"
#include "adaptree/error.hpp"
#include "adaptree/trainer.hpp"

using namespace adaptree;

namespace {
Dataset make_data(std::size_t n, std::uint64_t seed, const std::function<double(double)>& f) {
    Dataset d;
    d.x = PointCloud(1);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = U(rng);
        d.x.push_back(std::span<const double>(&x, 1));
        d.y.push_back(f(x));
    }
    return d;
}

double onedisc(double x) { return eval_target("onedisc", std::span<const double>(&x, 1)); }

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}
}  // namespace

TEST_CASE("default architecture parameter count") {
    MlpArchitecture a;
    const std::size_t expect = (1 * 64 + 64) + (64 * 128 + 128) + (128 * 64 + 64) + (64 * 1 + 1);
    CHECK(expect == 16769);
    CHECK(a.parameter_count() == expect);
    CHECK(init_mlp(a, 3).params().size() == 16769);
    const MlpArchitecture no_hidden{{1, 1}}, empty_layer{{1, 0, 1}};
    CHECK_THROWS_AS(no_hidden.validate(), ConfigError);
    CHECK_THROWS_AS(empty_layer.validate(), ConfigError);
}

TEST_CASE("init is seeded and within the fan-in range") {
    MlpArchitecture a;
    const auto n1 = init_mlp(a, 11), n2 = init_mlp(a, 11), n3 = init_mlp(a, 12);
    CHECK(same_bits(n1.params(), n2.params()));
    CHECK_FALSE(same_bits(n1.params(), n3.params()));
    for (int l = 0; l < a.layers(); ++l) {
        const double r = 1.0 / std::sqrt(double(a.widths[l]));
        CHECK(n1.weight(l).cwiseAbs().maxCoeff() <= r);
        CHECK(n1.bias(l).cwiseAbs().maxCoeff() <= r);
        // spread: the range is actually used
        CHECK(n1.weight(l).cwiseAbs().maxCoeff() > 0.9 * r);
    }
}

TEST_CASE("adam first step, zero gradient, two-step value") {
    Eigen::VectorXd p(1), g(1);
    p << 0.0;
    g << 1.0;
    auto st = AdamState::zeros(1);
    adam_step(st, p, g, 1e-3);
    CHECK(p[0] == doctest::Approx(-0.0009999999900000003).epsilon(1e-12));
    g << -1.0;
    adam_step(st, p, g, 1e-3);
    CHECK(std::abs(p[0] - (-0.0009473684115789474)) <= 1e-6 * 1e-3);
    CHECK(st.step == 2);

    Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(5, -1, 1), z = Eigen::VectorXd::Zero(5);
    const Eigen::VectorXd q0 = q;
    auto s2 = AdamState::zeros(5);
    for (int i = 0; i < 3; ++i) adam_step(s2, q, z, 1e-3);
    CHECK(same_bits(q, q0));

    z[2] = std::nan("");
    CHECK_THROWS_AS(adam_step(s2, q, z, 1e-3), NumericalError);
    Eigen::VectorXd short_g(2);
    CHECK_THROWS_AS(adam_step(s2, q, short_g, 1e-3), ValidationError);
}

TEST_CASE("mse basics") {
    Mlp zero(MlpArchitecture{{1, 4, 1}});
    auto d = make_data(10, 1, [](double) { return 0.0; });
    CHECK(mse(zero, d) == 0.0);
    auto pm = make_data(10, 2, [](double) { return 0.0; });
    for (std::size_t i = 0; i < pm.size(); ++i) pm.y[i] = i % 2 ? 1.0 : -1.0;
    CHECK(mse(zero, pm) == 1.0);

    Dataset empty;
    empty.x = PointCloud(1);
    CHECK_THROWS_AS(mse(zero, empty), ValidationError);

    const auto net = init_mlp({}, 5);
    auto s = make_data(500, 7, onedisc);
    const auto pred = net.predict(s.x);
    double acc = 0;
    for (std::size_t i = s.size(); i-- > 0;) acc += (pred[i] - s.y[i]) * (pred[i] - s.y[i]);
    CHECK(std::abs(mse(net, s) - acc / s.size()) <= 1e-12);
}

TEST_CASE("backprop agrees with central differences") {
    const MlpArchitecture a{{1, 8, 8, 1}};
    auto d = make_data(20, 3, [](double x) { return std::sin(6 * x); });
    std::uint64_t seed = 1;
    Mlp net = init_mlp(a, seed);
    while (min_abs_preactivation(net, d.x) < 1e-3) net = init_mlp(a, ++seed);
    const auto gc = gradient_check(net, d, 100, 1e-5, 99);
    CHECK(gc.checked == 97);  // every parameter of the small net
    CHECK(gc.max_rel_error <= 1e-4);

    // same check on the default architecture
    auto d2 = make_data(16, 4, onedisc);
    Mlp big = init_mlp({}, 21);
    while (min_abs_preactivation(big, d2.x) < 1e-4) big = init_mlp({}, ++seed + 100);
    CHECK(gradient_check(big, d2, 100, 1e-5, 5).max_rel_error <= 1e-4);
}

TEST_CASE("zero epochs leaves the network unchanged") {
    const auto net = init_mlp({}, 8);
    auto d = make_data(32, 9, onedisc);
    TrainConfig c;
    c.epochs = 0;
    auto r = train(net, d, c);
    CHECK(r.history.size() == 1);
    CHECK(same_bits(r.net.params(), net.params()));
    CHECK(r.best_epoch == 0);
    c.learning_rate = 0;
    CHECK_THROWS_AS(train(net, d, c), ConfigError);
}

TEST_CASE("constant target converges to its value") {
    auto d = make_data(32, 10, [](double) { return 0.7; });
    TrainConfig c;
    c.epochs = 2000;
    auto r = train(init_mlp({}, 1), d, c);
    CHECK(r.history.size() == 2001);
    CHECK(r.best_loss <= 1e-4);
    CHECK(mse(r.net, d) == r.best_loss);
    CHECK(r.history[r.best_epoch] == r.best_loss);
}

TEST_CASE("noiseless onedisc, default config") {
    auto d = make_data(256, 12, onedisc);
    TrainConfig c;
    c.seed = 2;
    auto r = train(init_mlp({}, c.seed), d, c);
    CHECK(r.best_loss <= 1e-2);

    // 100-epoch moving average: at most 5% of windows may rise by more than 1e-3 of the initial loss
    const auto& h = r.history;
    const double slack = 1e-3 * h.front() * 100;
    const std::size_t w = 100;
    double run = 0;
    for (std::size_t i = 0; i < w; ++i) run += h[i];
    double prev = run;
    std::size_t rises = 0, windows = 0;
    for (std::size_t i = w; i < h.size(); ++i) {
        run += h[i] - h[i - w];
        ++windows;
        if (run > prev + slack) ++rises;
        prev = run;
    }
    CHECK(double(rises) <= 0.05 * double(windows));
}

TEST_CASE("training is bitwise deterministic") {
    auto d = make_data(64, 13, onedisc);
    TrainConfig c;
    c.epochs = 200;
    auto r1 = train(init_mlp({}, 4), d, c), r2 = train(init_mlp({}, 4), d, c);
    CHECK(same_bits(r1.net.params(), r2.net.params()));
    CHECK(r1.history == r2.history);

    c.batch_size = 16;
    c.seed = 6;
    auto m1 = train(init_mlp({}, 4), d, c), m2 = train(init_mlp({}, 4), d, c);
    CHECK(same_bits(m1.net.params(), m2.net.params()));
    CHECK(m1.history.size() == 201);
    CHECK(m1.best_loss < m1.history.front());
}

TEST_CASE("trained net converts to a ReLU network and round-trips JSON") {
    auto d = make_data(64, 14, onedisc);
    TrainConfig c;
    c.epochs = 100;
    auto r = train(init_mlp({}, 7), d, c);
    const auto rn = to_relu_network(r.net);
    CHECK(rn.depth() == 3);
    const auto st = network_stats(rn);
    CHECK(st.L == 3);
    CHECK(st.w == 128);
    CHECK(st.K <= 16769);
    auto grid = make_data(1000, 15, onedisc);
    const auto pm = r.net.predict(grid.x);
    const auto pr = relu_forward_batch(rn, grid.x.coords);
    double worst = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) worst = std::max(worst, std::abs(pm[i] - pr[i]));
    CHECK(worst <= 1e-12);
    CHECK(std::abs(mse(rn, grid) - mse(r.net, grid)) <= 1e-12);

    const auto back = network_from_json(nlohmann::json::parse(to_json(rn).dump()));
    const auto pb = relu_forward_batch(back, grid.x.coords);
    CHECK(pb == pr);
    const auto j = to_json(c, MlpArchitecture{});
    CHECK(j["parameters"] == 16769);
    CHECK(j["batch"] == "full");
}
