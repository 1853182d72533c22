#include <doctest.h>

#include <numeric>

#include "clbench/errors.hpp"
#include "clbench/importance.hpp"
#include "test_util.hpp"

using namespace clbench;
using namespace clbench::testutil;

namespace {

double omega_at(const ImportanceMap& map, const std::string& segment, std::size_t i) {
    const FlatParams omega = map.omega();
    const ParamSegment* s = omega.find_segment(segment);
    REQUIRE(s != nullptr);
    return omega.values[s->offset + i];
}

}  // namespace

TEST_CASE("mas_update: 1-d linear net accumulates |grad| = 36") {
    Matrix w(1, 1);
    w << 2.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    Matrix x(1, 1);
    x << 3.0;
    ImportanceMap map = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(map, net, x);
    CHECK(map.samples_seen == 1);
    CHECK(omega_at(map, "trunk.0.w", 0) == doctest::Approx(36.0));
    CHECK(omega_at(map, "trunk.0.b", 0) == doctest::Approx(12.0));  // 2*F
}

TEST_CASE("mas_update: zero input into a bias-free ReLU net contributes nothing") {
    Network net = make_mlp({4, 3, 2}, Activation::ReLU, Activation::ReLU, 5);
    ImportanceMap map = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(map, net, Matrix::Zero(2, 4));
    const FlatParams omega = map.omega();
    for (double v : omega.values) CHECK(v == 0.0);
}

TEST_CASE("mas_update: batch of N identical points equals N single-point updates") {
    Network net = make_mlp({3, 4, 2}, Activation::ReLU, Activation::ReLU, 6);
    const Matrix one = random_batch(1, 3, 7);
    Matrix batch(4, 3);
    for (int i = 0; i < 4; ++i) batch.row(i) = one.row(0);

    ImportanceMap streaming = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    for (int i = 0; i < 4; ++i) mas_update(streaming, net, one);
    ImportanceMap batched = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(batched, net, batch);

    CHECK(streaming.samples_seen == batched.samples_seen);
    const FlatParams a = streaming.omega(), b = batched.omega();
    for (std::size_t i = 0; i < a.values.size(); ++i)
        CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-14));
}

TEST_CASE("mas-vector: scalar output relates to mas-global by 2|F|") {
    Network net = make_mlp({3, 4, 1}, Activation::ReLU, Activation::Identity, 8);
    Matrix x = batch_away_from_kinks(net, 1, 9);
    const double f = net.forward(x)(0, 0);

    ImportanceMap global = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(global, net, x);
    ImportanceMap vec = ImportanceMap::zero(Method::MasVector, net.flatten());
    mas_update_vector_output(vec, net, x);

    const FlatParams g = global.omega(), v = vec.omega();
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (!g.trunk_mask[i]) continue;
        CHECK(g.values[i] == doctest::Approx(2.0 * std::abs(f) * v.values[i]).epsilon(1e-10));
    }
}

TEST_CASE("mas-vector: 2x2 identity-weight net, per-parameter sums by hand") {
    Matrix w(2, 2);
    w << 1.0, 0.0, 0.0, 1.0;  // orthogonal rows
    Network net = one_layer_net(w, Vector::Zero(2));
    Matrix x(1, 2);
    x << 2.0, -3.0;
    ImportanceMap map = ImportanceMap::zero(Method::MasVector, net.flatten());
    mas_update_vector_output(map, net, x);
    // sum_o |dF_o/dw_oj| = |x_j| for the matching row, 0 otherwise
    CHECK(omega_at(map, "trunk.0.w", 0) == doctest::Approx(2.0));   // w(0,0)
    CHECK(omega_at(map, "trunk.0.w", 1) == doctest::Approx(3.0));   // w(0,1)
    CHECK(omega_at(map, "trunk.0.w", 2) == doctest::Approx(2.0));   // w(1,0)
    CHECK(omega_at(map, "trunk.0.w", 3) == doctest::Approx(3.0));   // w(1,1)
    CHECK(omega_at(map, "trunk.0.b", 0) == doctest::Approx(1.0));
    CHECK(omega_at(map, "trunk.0.b", 1) == doctest::Approx(1.0));

    ImportanceMap zero = ImportanceMap::zero(Method::MasVector, net.flatten());
    mas_update_vector_output(zero, net, Matrix::Zero(1, 2));
    CHECK(omega_at(zero, "trunk.0.w", 0) == 0.0);
}

TEST_CASE("hebbian_update: elementwise activation products") {
    Matrix w(2, 2);
    w << 1.0, 1.0, -5.0, 0.0;  // second output clamps to 0 for this input
    Network net = one_layer_net(w, Vector::Zero(2), Activation::ReLU);
    Matrix x(1, 2);
    x << 1.0, 2.0;  // post-activation output: [3, 0]
    ImportanceMap map = ImportanceMap::zero(Method::LMas, net.flatten());
    hebbian_update(map, net, x);
    // weights stored out x in: omega = y_out * y_in
    CHECK(omega_at(map, "trunk.0.w", 0) == doctest::Approx(3.0));  // out0,in0
    CHECK(omega_at(map, "trunk.0.w", 1) == doctest::Approx(6.0));  // out0,in1
    CHECK(omega_at(map, "trunk.0.w", 2) == doctest::Approx(0.0));  // clamped output
    CHECK(omega_at(map, "trunk.0.w", 3) == doctest::Approx(0.0));
    CHECK(omega_at(map, "trunk.0.b", 0) == doctest::Approx(3.0));
    CHECK(omega_at(map, "trunk.0.b", 1) == doctest::Approx(0.0));
}

TEST_CASE("hebbian equivalence: 2*y_in*y_out equals the layer-local squared-norm gradient") {
    Rng rng(77);
    Network net;
    net.trunk.push_back(make_dense_layer(5, 4, Activation::ReLU, rng));
    Matrix x = random_batch(1, 5, 78).cwiseAbs();  // nonnegative input
    const Matrix y = net.forward(x);
    const FlatParams g = grad_scalar(net, x, std::nullopt, Objective::SquaredL2Output);
    const ParamSegment* ws = g.find_segment("trunk.0.w");
    for (Eigen::Index o = 0; o < 4; ++o)
        for (Eigen::Index i = 0; i < 5; ++i) {
            const double expected = 2.0 * y(0, o) * x(0, i);
            const double got = g.values[ws->offset + static_cast<std::size_t>(o * 5 + i)];
            CHECK(got == doctest::Approx(expected).epsilon(1e-12));
        }

    // and the hebbian map is half the gradient magnitude
    ImportanceMap map = ImportanceMap::zero(Method::LMas, net.flatten());
    hebbian_update(map, net, x);
    const FlatParams omega = map.omega();
    for (Eigen::Index k = 0; k < 20; ++k)
        CHECK(2.0 * omega.values[ws->offset + static_cast<std::size_t>(k)] ==
              doctest::Approx(std::abs(g.values[ws->offset + static_cast<std::size_t>(k)]))
                  .epsilon(1e-12));
}

TEST_CASE("ewc_fisher_update: logistic closed form and saturation") {
    Matrix w(2, 3);
    w << 0.3, -0.2, 0.5, -0.1, 0.4, 0.2;
    Network net = one_layer_net(w, Vector::Zero(2));
    Matrix x(1, 3);
    x << 1.0, -2.0, 0.5;
    ImportanceMap map = ImportanceMap::zero(Method::Ewc, net.flatten());
    ewc_fisher_update(map, net, x, {0}, std::nullopt);

    const Matrix p = softmax_rows(net.forward(x));
    const double q = p(0, 1);  // 1 - p(correct)
    for (Eigen::Index j = 0; j < 3; ++j) {
        CHECK(omega_at(map, "trunk.0.w", static_cast<std::size_t>(j)) ==
              doctest::Approx(q * q * x(0, j) * x(0, j)).epsilon(1e-10));
        CHECK(omega_at(map, "trunk.0.w", static_cast<std::size_t>(3 + j)) ==
              doctest::Approx(q * q * x(0, j) * x(0, j)).epsilon(1e-10));
    }

    // identical point repeated: the mean is unchanged
    ImportanceMap twice = ImportanceMap::zero(Method::Ewc, net.flatten());
    ewc_fisher_update(twice, net, x, {0}, std::nullopt);
    ewc_fisher_update(twice, net, x, {0}, std::nullopt);
    CHECK(omega_at(twice, "trunk.0.w", 0) ==
          doctest::Approx(omega_at(map, "trunk.0.w", 0)).epsilon(1e-14));

    // saturated correct prediction contributes ~0
    Matrix ws(2, 1);
    ws << 40.0, -40.0;
    Network sat = one_layer_net(ws, Vector::Zero(2));
    Matrix xs(1, 1);
    xs << 1.0;
    ImportanceMap sat_map = ImportanceMap::zero(Method::Ewc, sat.flatten());
    ewc_fisher_update(sat_map, sat, xs, {0}, std::nullopt);
    CHECK(omega_at(sat_map, "trunk.0.w", 0) < 1e-12);
}

TEST_CASE("si: one SGD step contributes lr*g^2; zero grad contributes 0") {
    Network net = make_mlp({2, 2}, Activation::Identity, Activation::Identity, 12);
    const FlatParams theta = net.flatten();
    SiAccumulator acc = SiAccumulator::start(theta);
    FlatParams g = theta.zeros_like();
    g.values[0] = 3.0;
    FlatParams delta = theta.zeros_like();
    const double lr = 0.1;
    delta.values[0] = -lr * g.values[0];
    si_step(acc, g, delta);
    CHECK(acc.path_omega.values[0] == doctest::Approx(lr * 9.0));
    CHECK(acc.path_omega.values[1] == 0.0);

    si_step(acc, theta.zeros_like(), delta);  // zero gradient
    CHECK(acc.path_omega.values[0] == doctest::Approx(lr * 9.0));
}

TEST_CASE("si: two steps on a 1-d quadratic, hand-computed running sum") {
    // loss (theta-1)^2 from theta=0, lr=0.1
    Matrix w(1, 1);
    w << 0.0;
    Network net = one_layer_net(w, Vector::Zero(1));
    FlatParams theta = net.flatten();
    const ParamSegment* ws = theta.find_segment("trunk.0.w");
    SiAccumulator acc = SiAccumulator::start(theta, 0.1);

    double th = 0.0;
    const double lr = 0.1;
    double expected_path = 0.0;
    for (int step = 0; step < 2; ++step) {
        const double g = 2.0 * (th - 1.0);
        const double d = -lr * g;
        FlatParams gf = theta.zeros_like(), df = theta.zeros_like();
        gf.values[ws->offset] = g;
        df.values[ws->offset] = d;
        si_step(acc, gf, df);
        expected_path += -g * d;
        th += d;
    }
    CHECK(expected_path == doctest::Approx(0.4 + 0.256));
    CHECK(acc.path_omega.values[ws->offset] == doctest::Approx(expected_path));

    FlatParams theta_end = theta;
    theta_end.values[ws->offset] = th;
    const ImportanceMap map = si_finalize(acc, theta_end);
    CHECK(map.omega().values[ws->offset] ==
          doctest::Approx(expected_path / (th * th + 0.1)));
}

TEST_CASE("si_finalize: zero path gives zero omega, negative path clamps to zero") {
    Network net = make_mlp({2, 2}, Activation::Identity, Activation::Identity, 13);
    const FlatParams theta = net.flatten();
    SiAccumulator acc = SiAccumulator::start(theta);
    CHECK(si_finalize(acc, theta).omega().values[0] == 0.0);

    acc.path_omega.values[0] = -5.0;
    CHECK(si_finalize(acc, theta).omega().values[0] == 0.0);

    // 1-d arithmetic: path=0.5, dtheta=1, xi=0.1 -> ~0.4545
    SiAccumulator acc2 = SiAccumulator::start(theta, 0.1);
    acc2.path_omega.values[0] = 0.5;
    FlatParams end = theta;
    end.values[0] += 1.0;
    CHECK(si_finalize(acc2, end).omega().values[0] == doctest::Approx(0.5 / 1.1));
}

TEST_CASE("merge_across_tasks: identity, commutativity, associativity") {
    Network net = make_mlp({3, 3, 2}, Activation::ReLU, Activation::ReLU, 14);
    const FlatParams layout = net.flatten();
    auto make_map = [&](std::uint64_t seed) {
        ImportanceMap m = ImportanceMap::zero(Method::MasGlobal, layout);
        mas_update(m, net, random_batch(5, 3, seed));
        return m;
    };
    const ImportanceMap a = make_map(1), b = make_map(2), c = make_map(3);
    const ImportanceMap zero = ImportanceMap::zero(Method::MasGlobal, layout);

    const FlatParams a_plus_zero = merge_across_tasks(a, zero).omega();
    const FlatParams a_omega = a.omega();
    for (std::size_t i = 0; i < a_omega.values.size(); ++i)
        CHECK(a_plus_zero.values[i] == doctest::Approx(a_omega.values[i]));

    const FlatParams ab = merge_across_tasks(a, b).omega();
    const FlatParams ba = merge_across_tasks(b, a).omega();
    for (std::size_t i = 0; i < ab.values.size(); ++i)
        CHECK(ab.values[i] == doctest::Approx(ba.values[i]));

    const FlatParams abc = merge_across_tasks(merge_across_tasks(a, b), c).omega();
    for (std::size_t i = 0; i < abc.values.size(); ++i)
        CHECK(abc.values[i] ==
              doctest::Approx(a.omega().values[i] + b.omega().values[i] +
                              c.omega().values[i]));

    ImportanceMap other = ImportanceMap::zero(Method::Ewc, layout);
    CHECK_THROWS_AS(merge_across_tasks(a, other), ArgumentError);
}

TEST_CASE("online = batch: streaming order does not change omega") {
    Network net = make_mlp({4, 5, 3}, Activation::ReLU, Activation::ReLU, 15);
    const Matrix data = random_batch(40, 4, 16);

    ImportanceMap batch = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(batch, net, data);
    const FlatParams b = batch.omega();

    for (std::uint64_t order_seed : {101u, 102u, 103u}) {
        std::vector<std::size_t> order(40);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(order_seed);
        rng.shuffle(order);
        ImportanceMap stream = ImportanceMap::zero(Method::MasGlobal, net.flatten());
        for (std::size_t i : order) {
            const Matrix one = data.row(static_cast<Eigen::Index>(i));
            mas_update(stream, net, one);
        }
        const FlatParams s = stream.omega();
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            const double scale = std::max({std::abs(b.values[i]), std::abs(s.values[i]), 1e-300});
            CHECK(std::abs(s.values[i] - b.values[i]) / scale <= 1e-12);
        }
    }
}

TEST_CASE("nonnegativity: every estimator yields omega >= 0") {
    Network net = make_mlp({4, 5, 3}, Activation::ReLU, Activation::ReLU, 17);
    const Matrix data = random_batch(20, 4, 18);
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 3);

    ImportanceMap mas = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(mas, net, data);
    ImportanceMap vec = ImportanceMap::zero(Method::MasVector, net.flatten());
    mas_update_vector_output(vec, net, data);
    ImportanceMap heb = ImportanceMap::zero(Method::LMas, net.flatten());
    hebbian_update(heb, net, data);
    ImportanceMap ewc = ImportanceMap::zero(Method::Ewc, net.flatten());
    ewc_fisher_update(ewc, net, data, labels, std::nullopt);

    for (const ImportanceMap* m : {&mas, &vec, &heb, &ewc})
        for (double v : m->omega().values) CHECK(v >= 0.0);
}

TEST_CASE("head parameters receive no importance") {
    Network net = make_mlp({4, 5, 3}, Activation::ReLU, Activation::ReLU, 19);
    Rng rng(20);
    add_linear_head(net, 0, 2, rng);
    const Matrix data = random_batch(10, 4, 21);
    ImportanceMap map = ImportanceMap::zero(Method::MasGlobal, net.flatten());
    mas_update(map, net, data, 0);
    const FlatParams omega = map.omega();
    for (std::size_t i = 0; i < omega.values.size(); ++i)
        if (!omega.trunk_mask[i]) CHECK(omega.values[i] == 0.0);
}
