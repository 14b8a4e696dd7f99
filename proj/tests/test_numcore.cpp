#include "doctest.h"

#include "masp/errors.hpp"
#include "masp/numcore.hpp"
#include "masp/rng.hpp"
#include "oracles.hpp"

using namespace masp;

namespace {

MlpParams single_linear(std::size_t in, std::size_t out) {
    const std::size_t sizes[] = {in, out};
    return zero_mlp(sizes, Activation::identity);
}

}  // namespace

TEST_CASE("mlp_forward: identity layer passes input through") {
    MlpParams p = single_linear(2, 2);
    p.layers[0].weight = Matrix::identity(2);
    CHECK(mlp_forward(p, Vector{1.0, 2.0}) == Vector{1.0, 2.0});
}

TEST_CASE("mlp_forward: zero network gives zero output") {
    const std::size_t sizes[] = {3, 5, 4};
    const MlpParams p = zero_mlp(sizes, Activation::relu);
    CHECK(mlp_forward(p, Vector{0.3, -2.0, 7.0}) == Vector(4, 0.0));
}

TEST_CASE("mlp_forward: matches straight-line re-evaluation on random relu nets") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const MlpParams p = oracle::random_mlp({4, 6, 3}, Activation::relu, rng);
        const Vector x = oracle::random_vector(4, rng);
        const Vector got = mlp_forward(p, x);
        const Vector want = oracle::straight_forward(p, x);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("mlp_forward: deterministic and shape-checked") {
    Rng rng(3);
    const MlpParams p = oracle::random_mlp({3, 4, 2}, Activation::tanh, rng);
    const Vector x{0.1, 0.2, 0.3};
    CHECK(mlp_forward(p, x) == mlp_forward(p, x));
    CHECK_THROWS_AS(mlp_forward(p, Vector{1.0, 2.0}), ShapeError);
}

TEST_CASE("mlp_backward: zero cotangent gives zero gradients") {
    Rng rng(5);
    const MlpParams p = oracle::random_mlp({3, 4, 2}, Activation::tanh, rng);
    const BackwardResult r = mlp_backward(p, Vector{0.5, -0.5, 1.0}, Vector{0.0, 0.0});
    CHECK(r.grads.is_zero());
    CHECK(r.input_grad == Vector(3, 0.0));
}

TEST_CASE("mlp_backward: linear layer closed form") {
    Rng rng(6);
    MlpParams p = single_linear(3, 2);
    for (double& w : p.layers[0].weight.data) w = rng.uniform(-1, 1);
    const Vector x{1.0, -2.0, 0.5};
    const Vector g{0.25, -1.5};
    const BackwardResult r = mlp_backward(p, x, g);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(r.grads.layers[0].bias[i] == g[i]);
        for (std::size_t j = 0; j < 3; ++j) CHECK(r.grads.layers[0].weight(i, j) == doctest::Approx(g[i] * x[j]));
    }
}

TEST_CASE("mlp_backward: matches central finite differences on random tanh nets") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<std::size_t> sizes =
            trial % 2 ? std::vector<std::size_t>{4, 5, 3} : std::vector<std::size_t>{3, 4, 4, 2};
        const MlpParams p = oracle::random_mlp(sizes, Activation::tanh, rng);
        const Vector x = oracle::random_vector(sizes.front(), rng);
        const Vector g = oracle::random_vector(sizes.back(), rng);
        const BackwardResult r = mlp_backward(p, x, g);
        const auto fd = oracle::fd_param_grad(
            [&](const MlpParams& q) { return dot(oracle::straight_forward(q, x), g); }, p, 1e-6);
        const auto got = oracle::flatten(r.grads);
        REQUIRE(got.size() == fd.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(oracle::rel_err(got[i], fd[i]) <= 1e-5);

        // input gradient too
        for (std::size_t j = 0; j < x.size(); ++j) {
            Vector xp = x, xm = x;
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            const double d = (dot(oracle::straight_forward(p, xp), g) - dot(oracle::straight_forward(p, xm), g)) / 2e-6;
            CHECK(oracle::rel_err(r.input_grad[j], d) <= 1e-5);
        }
    }
}

TEST_CASE("mlp_backward: rejects mismatched cotangent") {
    Rng rng(8);
    const MlpParams p = oracle::random_mlp({3, 2}, Activation::relu, rng);
    CHECK_THROWS_AS(mlp_backward(p, Vector{1, 2, 3}, Vector{1.0}), ShapeError);
}

TEST_CASE("mlp_jvp: zero direction gives zero") {
    Rng rng(9);
    const MlpParams p = oracle::random_mlp({3, 4, 2}, Activation::tanh, rng);
    const GradientBundle zero = GradientBundle::zeros_like(p);
    for (JvpMode mode : {JvpMode::finite_difference, JvpMode::forward})
        CHECK(mlp_jvp(p, Vector{0.1, 0.2, 0.3}, zero, mode) == Vector(2, 0.0));
}

TEST_CASE("mlp_jvp: linear layer unit direction selects input entry") {
    Rng rng(10);
    MlpParams p = single_linear(3, 2);
    for (double& w : p.layers[0].weight.data) w = rng.uniform(-1, 1);
    GradientBundle d = GradientBundle::zeros_like(p);
    d.layers[0].weight(1, 2) = 1.0;
    const Vector x{0.4, -0.7, 1.25};
    for (JvpMode mode : {JvpMode::finite_difference, JvpMode::forward}) {
        const Vector v = mlp_jvp(p, x, d, mode);
        CHECK(v[0] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(v[1] == doctest::Approx(1.25).epsilon(1e-9));
    }
}

TEST_CASE("mlp_jvp: matches symmetric finite differences and agrees with backward") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const MlpParams p = oracle::random_mlp({4, 5, 3}, Activation::tanh, rng);
        const Vector x = oracle::random_vector(4, rng);
        const GradientBundle d = oracle::random_direction(p, rng);
        const Vector g = oracle::random_vector(3, rng);
        const double eps = 1e-6;
        const Vector fp = oracle::straight_forward(perturbed(p, d, eps), x);
        const Vector fm = oracle::straight_forward(perturbed(p, d, -eps), x);
        for (JvpMode mode : {JvpMode::finite_difference, JvpMode::forward}) {
            const Vector v = mlp_jvp(p, x, d, mode);
            for (std::size_t i = 0; i < v.size(); ++i)
                CHECK(oracle::rel_err(v[i], (fp[i] - fm[i]) / (2 * eps)) <= 1e-6);
            // g . J d == d . (J^T g)
            const double lhs = dot(g, v);
            const double rhs = d.dot(mlp_backward(p, x, g).grads);
            CHECK(oracle::rel_err(lhs, rhs) <= (mode == JvpMode::forward ? 1e-8 : 1e-5));
        }
    }
}

TEST_CASE("mlp_jvp: shape mismatch") {
    Rng rng(13);
    const MlpParams p = oracle::random_mlp({3, 4, 2}, Activation::tanh, rng);
    const MlpParams other = oracle::random_mlp({3, 2}, Activation::tanh, rng);
    CHECK_THROWS_AS(mlp_jvp(p, Vector{1, 2, 3}, GradientBundle::zeros_like(other)), ShapeError);
}

TEST_CASE("sgd_update") {
    MlpParams p = single_linear(1, 1);
    p.layers[0].weight(0, 0) = 1.0;
    GradientBundle g = GradientBundle::zeros_like(p);

    SUBCASE("zero gradient leaves parameters") { CHECK(sgd_update(p, g, 0.1) == p); }
    SUBCASE("zero learning rate leaves parameters") {
        g.layers[0].weight(0, 0) = 3.0;
        CHECK(sgd_update(p, g, 0.0) == p);
    }
    SUBCASE("hand arithmetic") {
        g.layers[0].weight(0, 0) = 0.5;
        const MlpParams q = sgd_update(p, g, 0.1);
        CHECK(q.layers[0].weight(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
        CHECK(p.layers[0].weight(0, 0) == 1.0);
    }
    SUBCASE("shape mismatch") {
        const MlpParams other = single_linear(2, 1);
        CHECK_THROWS_AS(sgd_update(p, GradientBundle::zeros_like(other), 0.1), ShapeError);
    }
}

TEST_CASE("init_mlp: uniform fan-in bound, zero biases, seeded") {
    Rng a(42), b(42);
    const std::size_t sizes[] = {16, 8, 3};
    const MlpParams p = init_mlp(sizes, Activation::relu, a);
    CHECK(p == init_mlp(sizes, Activation::relu, b));
    for (const auto& l : p.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols));
        for (double w : l.weight.data) CHECK(std::abs(w) <= bound);
        for (double x : l.bias) CHECK(x == 0.0);
    }
}

TEST_CASE("rng: substreams are independent and serializable") {
    Rng a = Rng::substream(1, Stream::replay);
    Rng b = Rng::substream(1, Stream::exploration);
    CHECK(a.next_u64() != b.next_u64());
    const std::string saved = a.serialize();
    const auto next = a.next_u64();
    Rng c;
    c.deserialize(saved);
    CHECK(c.next_u64() == next);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(a.below(7) < 7u);
    }
}
