#include <doctest.h>

#include <cstdio>

#include "clbench/errors.hpp"
#include "clbench/grad.hpp"
#include "clbench/network.hpp"
#include "clbench/serialize.hpp"
#include "test_util.hpp"

using namespace clbench;
using namespace clbench::testutil;

TEST_CASE("forward: single identity layer is the linear map") {
    Matrix w(1, 1);
    w << 2.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    Matrix x(1, 1);
    x << 3.0;
    const Matrix out = net.forward(x);
    CHECK(out(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("forward: ReLU clamps the negative row") {
    Matrix w(2, 1);
    w << 1.0, -1.0;
    Network net = one_layer_net(w, Vector::Zero(2), Activation::ReLU);
    Matrix x(1, 1);
    x << 2.0;
    const Matrix out = net.forward(x);
    CHECK(out(0, 0) == doctest::Approx(2.0));
    CHECK(out(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("forward: zero input through a seeded net propagates the (zero) biases") {
    Network net = make_mlp({4, 3, 2}, Activation::ReLU, Activation::Identity, 7);
    const Matrix x = Matrix::Zero(1, 4);
    const Matrix out = net.forward(x);
    // biases start at zero, so the two-layer composition of zeros is zero
    CHECK(out.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("forward: dimension mismatch and unknown head raise") {
    Network net = make_mlp({4, 3}, Activation::ReLU, Activation::ReLU, 1);
    CHECK_THROWS_AS(net.forward(Matrix::Zero(1, 5)), ShapeError);
    CHECK_THROWS_AS(net.forward(Matrix::Zero(1, 4), 9), LookupError);
}

TEST_CASE("grad_scalar: d(theta^2 x^2)/dtheta on the 1-d linear net") {
    Matrix w(1, 1);
    w << 2.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    Matrix x(1, 1);
    x << 3.0;
    const FlatParams g = grad_scalar(net, x, std::nullopt, Objective::SquaredL2Output);
    const ParamSegment* ws = g.find_segment("trunk.0.w");
    REQUIRE(ws != nullptr);
    CHECK(g.values[ws->offset] == doctest::Approx(36.0));  // 2*theta*x^2
}

TEST_CASE("grad_scalar: saturated correct prediction has vanishing CE gradient") {
    Matrix w(2, 1);
    w << 30.0, -30.0;
    Network net = one_layer_net(w, Vector::Zero(2));
    Matrix x(1, 1);
    x << 1.0;
    ObjectiveAux aux;
    aux.labels = {0};
    const FlatParams g = grad_scalar(net, x, std::nullopt, Objective::CrossEntropy, aux);
    double norm = 0.0;
    for (double v : g.values) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("grad_scalar: missing aux raises") {
    Network net = make_mlp({3, 2}, Activation::ReLU, Activation::Identity, 3);
    const Matrix x = random_batch(2, 3, 4);
    CHECK_THROWS_AS(grad_scalar(net, x, std::nullopt, Objective::CrossEntropy),
                    ArgumentError);
    CHECK_THROWS_AS(grad_scalar(net, x, std::nullopt, Objective::L2Regression),
                    ArgumentError);
    CHECK_THROWS_AS(grad_scalar(net, x, std::nullopt, Objective::OutputComponent),
                    ArgumentError);
}

TEST_CASE("fd_check: every objective tag on a seeded 5-4-3 ReLU net") {
    Network net = make_mlp({5, 4, 3}, Activation::ReLU, Activation::ReLU, 11);
    Matrix x = batch_away_from_kinks(net, 3, 21);
    ObjectiveAux aux;
    aux.labels = {0, 2, 1};
    aux.targets = random_batch(3, 3, 5);
    aux.component = 1;
    for (Objective obj : {Objective::SquaredL2Output, Objective::CrossEntropy,
                          Objective::L2Regression, Objective::LogProbLabel,
                          Objective::OutputComponent}) {
        CAPTURE(objective_name(obj));
        CHECK(fd_check(net, x, std::nullopt, obj, aux, 1e-5) <= 1e-6);
    }
}

TEST_CASE("fd_check: quadratic objective is exact for central differences") {
    Matrix w(1, 1);
    w << 2.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    Matrix x(1, 1);
    x << 3.0;
    CHECK(fd_check(net, x, std::nullopt, Objective::SquaredL2Output, {}, 1e-5) <= 1e-9);
}

TEST_CASE("fd_check: truncation error shrinks ~4x when the step is halved") {
    Network net = make_mlp({3, 3, 2}, Activation::Identity, Activation::Identity, 13);
    const Matrix x = random_batch(2, 3, 17);
    ObjectiveAux aux;
    aux.labels = {0, 1};
    const double e1 = fd_check(net, x, std::nullopt, Objective::CrossEntropy, aux, 2e-3);
    const double e2 = fd_check(net, x, std::nullopt, Objective::CrossEntropy, aux, 1e-3);
    REQUIRE(e2 > 0.0);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.5));
    CHECK_THROWS_AS(fd_check(net, x, std::nullopt, Objective::CrossEntropy, aux, 0.0),
                    ArgumentError);
}

TEST_CASE("sgd_step: arithmetic, lr=0 identity, layout mismatch") {
    Network net = make_mlp({1, 2}, Activation::Identity, Activation::Identity, 1);
    FlatParams theta = net.flatten();
    const ParamSegment* ws = theta.find_segment("trunk.0.w");
    theta.values[ws->offset] = 1.0;
    theta.values[ws->offset + 1] = 2.0;
    FlatParams g = theta.zeros_like();
    g.values[ws->offset] = 1.0;
    g.values[ws->offset + 1] = -1.0;
    FlatParams stepped = theta;
    sgd_step(stepped, g, 0.5);
    CHECK(stepped.values[ws->offset] == doctest::Approx(0.5));
    CHECK(stepped.values[ws->offset + 1] == doctest::Approx(2.5));

    FlatParams frozen = theta;
    sgd_step(frozen, g, 0.0);
    CHECK(frozen.values == theta.values);

    Network other = make_mlp({2, 2}, Activation::Identity, Activation::Identity, 1);
    FlatParams wrong = other.flatten();
    CHECK_THROWS_AS(sgd_step(wrong, g, 0.1), ShapeError);
}

TEST_CASE("sgd_step: repeated steps reach the minimizer of a convex quadratic") {
    // loss (theta*x - t)^2, x=2, t=3 -> minimizer theta = 1.5
    Matrix w(1, 1);
    w << 0.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    Matrix x(1, 1);
    x << 2.0;
    ObjectiveAux aux;
    aux.targets = Matrix::Constant(1, 1, 3.0);
    for (int it = 0; it < 200; ++it) {
        FlatParams theta = net.flatten();
        sgd_step(theta, grad_scalar(net, x, std::nullopt, Objective::L2Regression, aux),
                 0.05);
        net.unflatten(theta);
    }
    // minimizers satisfy theta*x + b = t; gradient descent lands on one
    CHECK(net.trunk[0].weights(0, 0) * 2.0 + net.trunk[0].bias[0] ==
          doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("flattening round-trip is the identity") {
    Network net = make_mlp({6, 5, 4}, Activation::ReLU, Activation::ReLU, 23);
    Rng rng(24);
    add_linear_head(net, 0, 3, rng);
    add_linear_head(net, 1, 2, rng);
    const FlatParams flat = net.flatten();
    Network copy = net;
    copy.unflatten(flat);
    const FlatParams again = copy.flatten();
    CHECK(flat.values == again.values);
    CHECK(flat.same_layout(again));
    // trunk mask covers exactly the trunk segments
    CHECK(flat.trunk_size() == 6 * 5 + 5 + 5 * 4 + 4);
}

TEST_CASE("determinism: same seed gives bit-identical parameters after training steps") {
    auto run = [] {
        Network net = make_mlp({4, 3, 2}, Activation::ReLU, Activation::Identity, 99);
        const Matrix x = random_batch(8, 4, 100);
        ObjectiveAux aux;
        aux.targets = random_batch(8, 2, 101);
        for (int it = 0; it < 25; ++it) {
            FlatParams theta = net.flatten();
            sgd_step(theta,
                     grad_scalar(net, x, std::nullopt, Objective::L2Regression, aux), 0.01);
            net.unflatten(theta);
        }
        return net.flatten().values;
    };
    CHECK(run() == run());
}

TEST_CASE("linearity of reverse mode: grad(F^2) = 2F * grad(F) for a scalar output") {
    Network net = make_mlp({3, 4, 1}, Activation::ReLU, Activation::Identity, 31);
    Matrix x = batch_away_from_kinks(net, 1, 32);
    const double f = net.forward(x)(0, 0);
    const FlatParams g_sq = grad_scalar(net, x, std::nullopt, Objective::SquaredL2Output);
    ObjectiveAux aux;
    aux.component = 0;
    const FlatParams g_f = grad_scalar(net, x, std::nullopt, Objective::OutputComponent, aux);
    for (std::size_t i = 0; i < g_sq.values.size(); ++i)
        CHECK(g_sq.values[i] == doctest::Approx(2.0 * f * g_f.values[i]).epsilon(1e-10));
}

TEST_CASE("portable weight file: save/load round-trip") {
    Network net = make_mlp({4, 3}, Activation::ReLU, Activation::ReLU, 41);
    Rng rng(42);
    add_linear_head(net, 0, 2, rng);
    const FlatParams flat = net.flatten();
    const std::string path = "weights_roundtrip_test.json";
    save_flat_params(flat, path);
    const FlatParams loaded = load_flat_params(path);
    CHECK(loaded.same_layout(flat));
    CHECK(loaded.values == flat.values);
    CHECK(loaded.trunk_mask == flat.trunk_mask);
    std::remove(path.c_str());
}
