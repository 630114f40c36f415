#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stwa/stgen.hpp"

using namespace stwa;

TEST_CASE("parameter store rejects duplicates and counts scalars") {
    ParamStore store;
    store.add("a", zeros({2, 3}));
    store.add("b", zeros({4}));
    REQUIRE_THROWS_AS(store.add("a", zeros({1})), ValueError);
    REQUIRE(store.total_scalars() == 10);
    REQUIRE(store.find("b") == 1);
    REQUIRE_THROWS_AS(store.find("nope"), ValueError);
}

TEST_CASE("bound parameter used twice accumulates one gradient node") {
    ParamStore store;
    std::size_t ip = store.add("p", from_vec({2}, {1.0, 2.0}));
    Tape tape;
    BoundParams bp(store, &tape);
    Tensor a = bp[ip];
    Tensor b = bp[ip];
    REQUIRE(a.node == b.node);  // mounted once
    Tensor loss = sum_all(add(a, b));
    tape.backward(loss);
    Tensor g = bp.grad(ip);
    REQUIRE(g.val(0) == 2.0);
    REQUIRE(g.val(1) == 2.0);
}

TEST_CASE("bound parameters without a tape stay detached") {
    ParamStore store;
    std::size_t ip = store.add("p", from_vec({2}, {1.0, 2.0}));
    BoundParams bp(store, nullptr);
    REQUIRE_FALSE(bp[ip].on_tape());
}

TEST_CASE("kl of the standard normal is exactly zero") {
    Tensor mu = zeros({1, 3});
    Tensor lv = zeros({1, 3});
    REQUIRE(kl_std_normal(mu, lv).val(0) == 0.0);
}

TEST_CASE("kl spot value for unit mean shift") {
    // k=1, N=1, mu=1, var=1: 0.5 * (1 + 1 - 1 - 0) = 0.5 exactly
    REQUIRE(kl_std_normal(from_vec({1, 1}, {1.0}), zeros({1, 1})).val(0) == 0.5);
}

TEST_CASE("kl averages over sensors") {
    Tensor mu1 = from_vec({1, 2}, {0.3, -0.7});
    Tensor lv1 = from_vec({1, 2}, {0.2, -0.4});
    double one = kl_std_normal(mu1, lv1).val(0);
    Tensor mu2 = from_vec({2, 2}, {0.3, -0.7, 0.3, -0.7});
    Tensor lv2 = from_vec({2, 2}, {0.2, -0.4, 0.2, -0.4});
    REQUIRE(kl_std_normal(mu2, lv2).val(0) == Catch::Approx(one).margin(1e-15));
}

TEST_CASE("kl is non-negative across random gaussians") {
    Rng rng(2718);
    for (int i = 0; i < 1000; ++i) {
        Tensor mu = normal({3, 4}, rng);
        Tensor lv = uniform({3, 4}, rng, -4.0, 3.0);
        REQUIRE(kl_std_normal(mu, lv).val(0) >= 0.0);
    }
}

TEST_CASE("kl of summed independent latents hits the closed form") {
    // both N(0,1): sum is N(0,2), KL = 0.5 * (2 - 1 - ln 2)
    Tensor z = zeros({1, 1});
    double got = kl_sum_std_normal(z, z, z, z).val(0);
    REQUIRE(got == Catch::Approx(0.5 * (1.0 - std::log(2.0))).margin(1e-15));
}

TEST_CASE("kl gradient matches finite differences") {
    Rng rng(31415);
    Tensor mu0 = normal({2, 3}, rng);
    Tensor lv0 = uniform({2, 3}, rng, -1.0, 1.0);
    Tape tape;
    Tensor mu = tape.leaf(mu0);
    Tensor lv = tape.leaf(lv0);
    Tensor loss = kl_std_normal(mu, lv);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic = {tape.grad(mu).vec(), tape.grad(lv).vec()};
    auto f = [&]() { return kl_std_normal(mu0, lv0).val(0); };
    std::vector<std::span<double>> spans = {{mu0.data->data(), 6}, {lv0.data->data(), 6}};
    auto rep = grad_check(f, spans, analytic);
    REQUIRE(rep.max_rel_err < 1e-7);
}

TEST_CASE("zero noise collapses the draw onto the mean bit-exactly") {
    Rng rng(5);
    Tensor mu = normal({3, 4}, rng);
    Tensor lv = uniform({3, 4}, rng, -2, 2);
    Tensor z = sample_gaussian(mu, lv, zeros({3, 4}));
    REQUIRE(z.vec() == mu.vec());
}

TEST_CASE("same noise gives the same draw") {
    Rng rng(6);
    Tensor mu = normal({2, 2}, rng);
    Tensor lv = uniform({2, 2}, rng, -1, 1);
    Tensor eps = normal({2, 2}, rng);
    REQUIRE(sample_gaussian(mu, lv, eps).vec() == sample_gaussian(mu, lv, eps).vec());
}

TEST_CASE("draw statistics match the declared gaussian") {
    // mu = 0.5, var = 0.25 over 1e5 draws
    const std::size_t n = 100000;
    Rng rng(8675309);
    Tensor mu = full({1, 1}, 0.5);
    Tensor lv = full({1, 1}, std::log(0.25));
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor eps = normal({1, 1}, rng);
        const double z = sample_gaussian(mu, lv, eps).val(0);
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    REQUIRE(mean == Catch::Approx(0.5).margin(8e-3));
    REQUIRE(var == Catch::Approx(0.25).margin(6e-3));
}

TEST_CASE("reparameterized draw backpropagates into mean and logvar") {
    Rng rng(77);
    Tensor mu0 = normal({2, 3}, rng);
    Tensor lv0 = uniform({2, 3}, rng, -1, 1);
    Tensor eps = normal({2, 3}, rng);  // fixed nonzero noise
    Tensor w = uniform({2, 3}, rng, 0.5, 1.5);
    Tape tape;
    Tensor mu = tape.leaf(mu0);
    Tensor lv = tape.leaf(lv0);
    Tensor loss = sum_all(mul(sample_gaussian(mu, lv, eps), w));
    tape.backward(loss);
    std::vector<std::vector<double>> analytic = {tape.grad(mu).vec(), tape.grad(lv).vec()};
    auto f = [&]() {
        Tensor z = sample_gaussian(mu0, lv0, eps);
        double acc = 0.0;
        for (std::size_t i = 0; i < 6; ++i) acc += z.val(i) * w.val(i);
        return acc;
    };
    std::vector<std::span<double>> spans = {{mu0.data->data(), 6}, {lv0.data->data(), 6}};
    auto rep = grad_check(f, spans, analytic);
    REQUIRE(rep.max_rel_err < 1e-7);
}

TEST_CASE("spatial latent registers per-sensor parameters") {
    ParamStore store;
    Rng rng(1);
    SpatialLatent sl(store, "spatial", 5, 4, true, rng);
    REQUIRE(store.total_scalars() == 2 * 5 * 4);
    BoundParams bp(store, nullptr);
    REQUIRE(sl.mu(bp).shape == Shape{5, 4});
    Tensor z = sl.sample(bp, zeros({5, 4}));
    REQUIRE(z.vec() == sl.mu(bp).vec());

    ParamStore store2;
    SpatialLatent det(store2, "spatial", 5, 4, false, rng);
    REQUIRE(store2.total_scalars() == 5 * 4);
    BoundParams bp2(store2, nullptr);
    REQUIRE_THROWS_AS(det.logvar(bp2), ValueError);
    REQUIRE(det.sample(bp2, zeros({5, 4})).vec() == det.mu(bp2).vec());
}

TEST_CASE("temporal encoder splits mean and logvar halves") {
    ParamStore store;
    Rng rng(2);
    TemporalEncoder enc(store, "enc", 12, 4, 8, 8, true, rng);
    BoundParams bp(store, nullptr);
    Tensor x = normal({3, 12}, rng);
    auto out = enc.forward(bp, x);
    REQUIRE(out.mu.shape == Shape{3, 4});
    REQUIRE(out.logvar.has_value());
    REQUIRE(out.logvar->shape == Shape{3, 4});
    // wrong width rejected
    REQUIRE_THROWS_AS(enc.forward(bp, normal({3, 11}, rng)), ValueError);
    // deterministic variant emits means only
    ParamStore store2;
    TemporalEncoder det(store2, "enc", 12, 4, 8, 8, false, rng);
    BoundParams bp2(store2, nullptr);
    auto out2 = det.forward(bp2, x);
    REQUIRE(out2.mu.shape == Shape{3, 4});
    REQUIRE_FALSE(out2.logvar.has_value());
}

TEST_CASE("different windows give different temporal latents") {
    ParamStore store;
    Rng rng(3);
    TemporalEncoder enc(store, "enc", 10, 4, 8, 8, true, rng);
    BoundParams bp(store, nullptr);
    Tensor a = enc.forward(bp, normal({2, 10}, rng)).mu;
    Tensor b = enc.forward(bp, normal({2, 10}, rng)).mu;
    REQUIRE(a.vec() != b.vec());
}

TEST_CASE("decoder emits one matrix set per sensor") {
    ParamStore store;
    Rng rng(4);
    ParamDecoder dec(store, "dec", 4, 3, 16, 32, false, rng);
    // 4*16+16 + 16*32+32 + 32*18+18
    REQUIRE(store.total_scalars() == 64 + 16 + 512 + 32 + 576 + 18);
    BoundParams bp(store, nullptr);
    Tensor theta = normal({5, 4}, rng);
    GeneratedParams gp = dec.decode(bp, theta);
    REQUIRE(gp.K.size() == 5);
    REQUIRE(gp.V.size() == 5);
    REQUIRE(gp.T1.empty());
    REQUIRE(gp.K[0].shape == Shape{3, 3});
    // distinct latents decode to distinct matrices
    bool differ = false;
    for (std::size_t i = 0; i < 9; ++i)
        if (gp.K[0].val(i) != gp.K[1].val(i)) differ = true;
    REQUIRE(differ);
}

TEST_CASE("decoder with correlation transforms emits four matrices") {
    ParamStore store;
    Rng rng(5);
    ParamDecoder dec(store, "dec", 4, 3, 8, 8, true, rng);
    BoundParams bp(store, nullptr);
    GeneratedParams gp = dec.decode(bp, normal({2, 4}, rng));
    REQUIRE(gp.T1.size() == 2);
    REQUIRE(gp.T2.size() == 2);
    REQUIRE(gp.T1[0].shape == Shape{3, 3});
}

TEST_CASE("latent sum is order independent") {
    Rng rng(6);
    Tensor a = normal({3, 4}, rng);
    Tensor b = normal({3, 4}, rng);
    REQUIRE(add(a, b).vec() == add(b, a).vec());
}

TEST_CASE("decoding from means is a pure function") {
    ParamStore store;
    Rng rng(7);
    SpatialLatent sl(store, "spatial", 3, 4, true, rng);
    ParamDecoder dec(store, "dec", 4, 3, 8, 8, false, rng);
    BoundParams bp(store, nullptr);
    Tensor eps0 = zeros({3, 4});
    GeneratedParams g1 = dec.decode(bp, sl.sample(bp, eps0));
    GeneratedParams g2 = dec.decode(bp, sl.sample(bp, eps0));
    for (std::size_t n = 0; n < 3; ++n) {
        REQUIRE(g1.K[n].vec() == g2.K[n].vec());
        REQUIRE(g1.V[n].vec() == g2.V[n].vec());
    }
}

TEST_CASE("encoder-sample-decoder chain gradient matches finite differences") {
    ParamStore store;
    Rng rng(8);
    const std::size_t N = 2, k = 3, d = 2, in_w = 6;
    SpatialLatent sl(store, "spatial", N, k, true, rng);
    TemporalEncoder enc(store, "enc", in_w, k, 5, 5, true, rng);
    ParamDecoder dec(store, "dec", k, d, 5, 5, false, rng);
    Tensor x = normal({N, in_w}, rng);
    Tensor eps_s = normal({N, k}, rng);
    Tensor eps_t = normal({N, k}, rng);
    Tensor w = uniform({d, d}, rng, 0.5, 1.5);

    auto objective = [&](Tape* tape) {
        BoundParams bp(store, tape);
        auto e = enc.forward(bp, x);
        Tensor zt = sample_gaussian(e.mu, *e.logvar, eps_t);
        Tensor z = sl.sample(bp, eps_s);
        Tensor theta = add(z, zt);
        GeneratedParams gp = dec.decode(bp, theta);
        Tensor score = sum_all(mul(gp.K[0], w));
        Tensor kl = kl_sum_std_normal(bp[sl.i_mu], bp[sl.i_logvar], e.mu, *e.logvar);
        return add(score, kl);
    };

    Tape tape;
    BoundParams bp(store, &tape);
    // run once on tape for analytic grads
    Tensor loss = [&] {
        auto e = enc.forward(bp, x);
        Tensor zt = sample_gaussian(e.mu, *e.logvar, eps_t);
        Tensor z = sl.sample(bp, eps_s);
        GeneratedParams gp = dec.decode(bp, add(z, zt));
        Tensor score = sum_all(mul(gp.K[0], w));
        Tensor kl = kl_sum_std_normal(bp[sl.i_mu], bp[sl.i_logvar], e.mu, *e.logvar);
        return add(score, kl);
    }();
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    std::vector<std::span<double>> spans;
    for (std::size_t i = 0; i < store.count(); ++i) {
        analytic.push_back(bp.grad(i).vec());
        auto& v = *store.at(i).value.data;
        spans.emplace_back(v.data(), v.size());
    }
    auto f = [&]() { return objective(nullptr).val(0); };
    auto rep = grad_check(f, spans, analytic);
    INFO("worst " << store.at(rep.param_index).name << "[" << rep.elem_index << "] analytic "
                  << rep.analytic << " numeric " << rep.numeric);
    REQUIRE(rep.max_rel_err < 1e-5);
}
