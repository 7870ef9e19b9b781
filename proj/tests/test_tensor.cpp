#include <cmath>

#include "doctest.h"
#include "imo/conv.hpp"
#include "imo/gradcheck.hpp"
#include "imo/ops.hpp"
#include "oracles.hpp"

using imo::Rng;
using imo::Shape;
using imo::Tape;
using imo::Tensor;

namespace {

template <typename T>
Tensor<T> constant(Shape shape, T v) {
    return Tensor<T>(std::move(shape), v);
}

using GraphFn = std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

double fd(const GraphFn& f, const Tensor<double>& x0) { return imo::grad_check<double>(f, x0, 1e-3); }

}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor<float>({2, 0, 3}), imo::ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2}, std::vector<float>{1.f, 2.f, 3.f}), imo::ShapeError);
    Tensor<float> t({2, 2}, {1.f, 2.f, 3.f, 4.f});
    CHECK(t.size() == 4);
    CHECK_THROWS_AS(t.item(), imo::ShapeError);
    CHECK(!t.requires_grad());
    t.set_requires_grad(true);
    CHECK(t.requires_grad());
    CHECK(t.grad()[3] == 0.f);

    Tensor<float> bad({2}, {1.f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(bad.assert_finite("bad"), imo::ValidationError);
    t.assert_finite("t");
}

TEST_CASE("gap examples") {
    Tape<float> tape;
    auto a = gap(tape, constant<float>({2, 4, 4}, 3.0f));
    CHECK(a.values()[0] == doctest::Approx(3.0).epsilon(1e-7));
    CHECK(a.values()[1] == doctest::Approx(3.0).epsilon(1e-7));

    auto b = gap(tape, Tensor<float>({1, 1, 1}, {7.f}));
    CHECK(b.values()[0] == 7.f);

    // brute-force mean oracle
    Tensor<float> x({1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
    double want = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
    CHECK(gap(tape, x).values()[0] == doctest::Approx(want));

    CHECK_THROWS_AS(gap(tape, Tensor<float>({2, 2})), imo::ShapeError);
}

TEST_CASE("sigmoid examples and saturation") {
    Tape<double> tape;
    auto y = sigmoid(tape, Tensor<double>({3}, {0.0, 100.0, std::log(3.0)}));
    CHECK(y.values()[0] == 0.5);
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.values()[2] == doctest::Approx(0.75).epsilon(1e-12));

    // saturates at huge magnitudes without producing NaN
    auto z = sigmoid(tape, Tensor<double>({2}, {1e6, -1e6}));
    CHECK(std::isfinite(z.values()[0]));
    CHECK(std::isfinite(z.values()[1]));

    // strictly inside (0,1) across the usable range
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        double v = rng.uniform(-30.0, 30.0);
        double s = sigmoid(tape, Tensor<double>::scalar(v)).item();
        CHECK(s > 0.0);
        CHECK(s < 1.0);
    }
}

TEST_CASE("softmax examples and properties") {
    Tape<double> tape;
    auto u = softmax(tape, Tensor<double>({3}, {0.0, 0.0, 0.0}));
    for (int i = 0; i < 3; ++i) CHECK(u.values()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto dom = softmax(tape, Tensor<double>({2}, {1000.0, 0.0}));
    CHECK(dom.values()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(dom.values()[1] == doctest::Approx(0.0).epsilon(1e-6));

    auto closed = softmax(tape, Tensor<double>({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    CHECK(closed.values()[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(closed.values()[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(closed.values()[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

    Rng rng(5);
    for (int seed = 0; seed < 25; ++seed) {
        auto x = oracle::random_tensor<double>(rng, {7}, -4, 4);
        auto y = softmax(tape, x);
        double s = 0;
        for (double v : y.values()) {
            CHECK(v > 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
        // shift invariance
        auto xs = x.clone();
        for (auto& v : xs.values()) v += 17.25;
        auto ys = softmax(tape, xs);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(std::abs(y.values()[i] - ys.values()[i]) < 1e-6);
    }
}

TEST_CASE("conv2d trivial examples") {
    Tape<float> tape;
    // 1x1 kernel of value 1 is the identity map
    Tensor<float> x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor<float> w1({1, 1, 1, 1}, {1.f});
    auto id = conv2d(tape, x, w1, nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(id.values()[i] == x.values()[i]);

    // all-ones 3x3 against all-ones kernel sums the window
    auto ones = constant<float>({1, 3, 3}, 1.f);
    auto wsum = constant<float>({1, 1, 3, 3}, 1.f);
    auto s = conv2d(tape, ones, wsum, nullptr);
    CHECK(s.size() == 1);
    CHECK(s.values()[0] == 9.f);

    CHECK_THROWS_AS(conv2d(tape, x, Tensor<float>({1, 2, 1, 1}, {1.f, 1.f}), nullptr), imo::ShapeError);
    CHECK_THROWS_AS(conv2d(tape, x, wsum, nullptr, 1, 0, 2), imo::ShapeError);
    CHECK_THROWS_AS(conv2d(tape, x, constant<float>({1, 1, 5, 5}, 1.f), nullptr), imo::ShapeError);
}

TEST_CASE("conv2d matches the loop oracle exactly in 64-bit") {
    Rng rng(42);
    struct Case {
        int cin, h, w, cout, kh, kw, stride, padding, groups;
    };
    const Case cases[] = {
        {2, 5, 5, 3, 3, 3, 1, 0, 1}, {2, 5, 5, 3, 3, 3, 1, 1, 1}, {3, 6, 7, 4, 3, 3, 2, 1, 1},
        {4, 5, 5, 4, 3, 3, 1, 1, 4},  // depthwise
        {4, 6, 6, 6, 1, 1, 1, 0, 2}, {1, 4, 4, 2, 4, 4, 1, 0, 1}, {2, 9, 5, 2, 7, 7, 1, 3, 1},
    };
    for (const auto& c : cases) {
        for (int rep = 0; rep < 8; ++rep) {
            auto x = oracle::random_tensor<double>(rng, {c.cin, c.h, c.w});
            auto w = oracle::random_tensor<double>(rng, {c.cout, c.cin / c.groups, c.kh, c.kw});
            auto b = oracle::random_tensor<double>(rng, {c.cout});
            Tape<double> tape(false);
            auto out = conv2d(tape, x, w, &b, c.stride, c.padding, c.groups);
            auto want = oracle::conv2d<double>(
                std::vector<double>(x.values().begin(), x.values().end()), c.cin, c.h, c.w,
                std::vector<double>(w.values().begin(), w.values().end()), c.cout, c.kh, c.kw,
                b.values().data(), c.stride, c.padding, c.groups);
            REQUIRE(out.size() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) CHECK(out.values()[i] == want[i]);
        }
    }
}

TEST_CASE("conv3d examples and oracle") {
    Tape<float> tape;
    Tensor<float> x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto id = conv3d(tape, x, Tensor<float>({1, 1, 1, 1, 1}, {1.f}), nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(id.values()[i] == x.values()[i]);

    auto ones = constant<float>({1, 2, 2, 2}, 1.f);
    auto w = constant<float>({1, 1, 2, 2, 2}, 1.f);
    auto s = conv3d(tape, ones, w, nullptr);
    CHECK(s.size() == 1);
    CHECK(s.values()[0] == 8.f);

    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        const int cin = 2, d = 4, h = 5, wd = 4, cout = 3, k = 3;
        const int stride = rep % 2 ? 2 : 1, padding = 1;
        auto xv = oracle::random_tensor<double>(rng, {cin, d, h, wd});
        auto wv = oracle::random_tensor<double>(rng, {cout, cin, k, k, k});
        auto bv = oracle::random_tensor<double>(rng, {cout});
        Tape<double> t2(false);
        auto out = conv3d(t2, xv, wv, &bv, stride, padding);
        auto want = oracle::conv3d<double>(
            std::vector<double>(xv.values().begin(), xv.values().end()), cin, d, h, wd,
            std::vector<double>(wv.values().begin(), wv.values().end()), cout, k, k, k,
            bv.values().data(), stride, padding);
        REQUIRE(out.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(out.values()[i] == want[i]);
    }
}

TEST_CASE("backward basics") {
    // loss = sum(x) -> grad all ones
    {
        Tape<float> tape;
        Tensor<float> x({4}, {1, 2, 3, 4}, true);
        auto loss = sum(tape, x);
        tape.backward(loss);
        for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 1.f);
    }
    // loss = sum(x*x), x=[1,2] -> grad [2,4]
    {
        Tape<float> tape;
        Tensor<float> x({2}, {1, 2}, true);
        auto loss = sum(tape, mul(tape, x, x));
        tape.backward(loss);
        CHECK(x.grad()[0] == 2.f);
        CHECK(x.grad()[1] == 4.f);
    }
    // fan-out: gradient of a twice-used tensor is the sum of both paths
    {
        Tape<double> tape;
        Tensor<double> x({3}, {0.5, -1.0, 2.0}, true);
        auto y = add(tape, mul(tape, x, x), scale(tape, x, 3.0));
        auto loss = sum(tape, y);
        tape.backward(loss);
        for (int i = 0; i < 3; ++i)
            CHECK(x.grad()[i] == doctest::Approx(2 * x.values()[i] + 3).epsilon(1e-12));
    }
    // contract errors
    {
        Tape<float> tape;
        Tensor<float> x({2}, {1, 2}, true);
        auto y = mul(tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), imo::ShapeError);
        Tensor<float> noparam({2}, {1, 2});
        auto z = sum(tape, noparam);
        CHECK_THROWS_AS(tape.backward(z), imo::ValidationError);
    }
    // grads persist until zeroed explicitly; zeroing is the trainer's job
    {
        Tape<float> tape;
        Tensor<float> x({2}, {1, 2}, true);
        auto loss = sum(tape, x);
        tape.backward(loss);
        CHECK(x.grad()[0] == 1.f);
        x.zero_grad();
        CHECK(x.grad()[0] == 0.f);
    }
}

TEST_CASE("grad_check closed forms") {
    // identity sum
    Tensor<double> x0({5}, {0.3, -0.2, 1.0, 2.0, -0.7});
    double e1 = fd([](Tape<double>& t, const Tensor<double>& x) { return sum(t, x); }, x0);
    CHECK(e1 < 1e-12);

    // sigmoid-sum at 0: derivative 0.25 everywhere
    Tensor<double> zero({4}, 0.0);
    double e2 = fd([](Tape<double>& t, const Tensor<double>& x) { return sum(t, sigmoid(t, x)); }, zero);
    CHECK(e2 < 1e-7);
}

TEST_CASE("per-primitive finite differences, 20+ seeds") {
    Rng rng(123);
    // Losses are weighted by a fixed random tensor so no coordinate has a
    // structurally zero gradient (relative error is meaningless at 0).
    auto check = [&](const char* name, const GraphFn& f, Shape shape, double lo = -1, double hi = 1,
                     std::vector<double> kinks = {}) {
        for (int seed = 0; seed < 21; ++seed) {
            auto x0 = oracle::random_tensor<double>(rng, shape, lo, hi);
            for (double k : kinks)
                for (auto& v : x0.values())
                    if (std::abs(v - k) < 0.02) v = k + (v >= k ? 0.02 : -0.02);
            double err = fd(f, x0);
            INFO(std::string(name) << " seed " << seed);
            CHECK(err < 1e-5);
        }
    };

    Rng prng(9);
    auto other = oracle::random_tensor<double>(prng, {2, 4, 4});
    auto gate = oracle::random_tensor<double>(prng, {2}, 0.2, 0.9);
    auto map = oracle::random_tensor<double>(prng, {1, 4, 4});
    auto w2 = oracle::random_tensor<double>(prng, {3, 2, 3, 3});
    auto w3 = oracle::random_tensor<double>(prng, {2, 2, 2, 2, 2});
    auto wl = oracle::random_tensor<double>(prng, {3, 8});
    auto bl = oracle::random_tensor<double>(prng, {3});
    // fixed weights keeping every loss gradient generically nonzero
    auto wt = [&](Shape s) { return oracle::random_tensor<double>(prng, std::move(s), 0.5, 1.5); };
    auto w244 = wt({2, 4, 4}), w144 = wt({1, 4, 4}), w444 = wt({4, 4, 4});
    auto w266 = wt({2, 6, 6}), wdm = wt({2, 4, 4}), w3v = wt({3});

    auto wsum = [](Tape<double>& t, const Tensor<double>& y, const Tensor<double>& w) {
        return sum(t, mul(t, y, w));
    };

    check("add", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, add(t, x, other), w244);
    }, {2, 4, 4});
    check("sub", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, sub(t, other, x), w244);
    }, {2, 4, 4});
    check("mul", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, mul(t, x, mul(t, x, other)), w244);
    }, {2, 4, 4});
    check("scale", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, scale(t, x, -2.5), w244);
    }, {2, 4, 4});
    check("relu", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, relu(t, x), w244);
    }, {2, 4, 4}, -1, 1, {0.0});
    check("sigmoid", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, sigmoid(t, x), w244);
    }, {2, 4, 4});
    check("log", [&](Tape<double>& t, const Tensor<double>& x) {
        return sum(t, imo::log(t, x));
    }, {8}, 0.5, 3.0);
    check("clamp", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, imo::clamp(t, x, -0.5, 0.5), w244);
    }, {2, 4, 4}, -1, 1, {-0.5, 0.5});
    check("softmax", [&](Tape<double>& t, const Tensor<double>& x) {
        return pick(t, softmax(t, x), 1);
    }, {6}, -3, 3);
    check("gap", [&](Tape<double>& t, const Tensor<double>& x) {
        return sum(t, mul(t, gap(t, x), gap(t, x)));
    }, {2, 4, 4});
    check("mean", [&](Tape<double>& t, const Tensor<double>& x) {
        return mean(t, mul(t, x, w244));
    }, {2, 4, 4});
    check("pick", [&](Tape<double>& t, const Tensor<double>& x) {
        return pick(t, mul(t, x, x), 3);
    }, {7}, 0.3, 1.0);
    check("channel_mean", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, channel_mean(t, x), w144);
    }, {3, 4, 4});
    // channel_max needs per-pixel gaps wider than the FD step so the argmax
    // cannot flip between the two evaluations
    for (int seed = 0; seed < 21; ++seed) {
        auto x0 = oracle::random_tensor<double>(rng, {3, 4, 4});
        for (int i = 0; i < 16; ++i)
            for (int ch = 0; ch < 3; ++ch) x0.values()[ch * 16 + i] += 0.2 * ch * (i % 2 ? 1 : -1);
        bool safe = true;
        for (int i = 0; i < 16 && safe; ++i)
            for (int a = 0; a < 3; ++a)
                for (int b = a + 1; b < 3; ++b)
                    if (std::abs(x0.values()[a * 16 + i] - x0.values()[b * 16 + i]) < 0.02)
                        safe = false;
        if (!safe) continue;
        double err = fd([&](Tape<double>& t, const Tensor<double>& x) {
            return wsum(t, channel_max(t, x), w144);
        }, x0);
        INFO("channel_max seed " << seed);
        CHECK(err < 1e-5);
    }
    check("scale_channels x", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, scale_channels(t, x, gate), w244);
    }, {2, 4, 4});
    check("scale_channels g", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, scale_channels(t, other, x), w244);
    }, {2});
    check("scale_spatial", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, scale_spatial(t, x, map), w244);
    }, {2, 4, 4});
    check("scale_spatial map", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, scale_spatial(t, other, x), w244);
    }, {1, 4, 4});
    check("add_channel_bias", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, add_channel_bias(t, other, x), w244);
    }, {2});
    check("concat", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, concat_channels(t, {x, scale(t, x, 0.5)}), w444);
    }, {2, 4, 4});
    check("upsample", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, upsample_nearest2d(t, x, 2), w266);
    }, {2, 3, 3});
    check("downsample", [&](Tape<double>& t, const Tensor<double>& x) {
        return sum(t, mul(t, downsample_stride2d(t, x, 2), downsample_stride2d(t, x, 2)));
    }, {2, 5, 5});
    check("depth_mean", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, depth_mean(t, x), wdm);
    }, {2, 3, 4, 4});
    check("linear x", [&](Tape<double>& t, const Tensor<double>& x) {
        return wsum(t, linear(t, x, wl, &bl), w3v);
    }, {8});
    check("linear w", [&](Tape<double>& t, const Tensor<double>& x) {
        Tensor<double> in({8}, std::vector<double>{.1, .2, .3, .4, .5, .6, .7, .8});
        auto y = linear(t, in, x, &bl);
        return sum(t, mul(t, y, y));
    }, {3, 8});
    check("conv2d x", [&](Tape<double>& t, const Tensor<double>& x) {
        auto y = conv2d(t, x, w2, nullptr, 1, 1, 1);
        return sum(t, mul(t, y, y));
    }, {2, 4, 4});
    check("conv2d w", [&](Tape<double>& t, const Tensor<double>& x) {
        auto y = conv2d(t, other, x, nullptr, 2, 1, 1);
        return sum(t, mul(t, y, y));
    }, {3, 2, 3, 3});
    auto vol = oracle::random_tensor<double>(prng, {2, 4, 4, 4});
    check("conv3d x", [&](Tape<double>& t, const Tensor<double>& x) {
        auto y = conv3d(t, x, w3, nullptr, 2, 1);
        return sum(t, mul(t, y, y));
    }, {2, 4, 4, 4});
    check("conv3d w", [&](Tape<double>& t, const Tensor<double>& x) {
        auto y = conv3d(t, vol, x, nullptr, 1, 0);
        return sum(t, mul(t, y, y));
    }, {2, 2, 2, 2, 2});
}

TEST_CASE("channel reductions and broadcasts against scalar loops") {
    Rng rng(31);
    auto x = oracle::random_tensor<double>(rng, {3, 2, 2});
    Tape<double> tape(false);
    auto m = channel_mean(tape, x);
    auto mx = channel_max(tape, x);
    for (int i = 0; i < 4; ++i) {
        double s = 0, best = x.values()[i];
        for (int c = 0; c < 3; ++c) {
            s += x.values()[c * 4 + i];
            best = std::max(best, x.values()[c * 4 + i]);
        }
        CHECK(m.values()[i] == doctest::Approx(s / 3).epsilon(1e-12));
        CHECK(mx.values()[i] == best);
    }

    // ties route gradient to the lowest channel index
    Tensor<double> tie({2, 1, 1}, {1.5, 1.5}, true);
    Tape<double> t2;
    auto y = sum(t2, channel_max(t2, tie));
    t2.backward(y);
    CHECK(tie.grad()[0] == 1.0);
    CHECK(tie.grad()[1] == 0.0);
}

TEST_CASE("batch_norm statistics and modes") {
    Rng rng(77);
    const int c = 3, h = 4, w = 4;
    std::vector<Tensor<double>> xs = {oracle::random_tensor<double>(rng, {c, h, w}),
                                      oracle::random_tensor<double>(rng, {c, h, w})};
    Tensor<double> gamma({c}, std::vector<double>{1.0, 2.0, 0.5});
    Tensor<double> beta({c}, std::vector<double>{0.0, -1.0, 0.25});
    Tensor<double> rm({c}, 0.0), rv({c}, 1.0);

    Tape<double> tape(false);
    auto outs = batch_norm(tape, xs, gamma, beta, rm, rv, true, 0.1, 1e-5);

    // hand-computed per-channel stats over batch+spatial
    const std::size_t plane = h * w;
    for (int ch = 0; ch < c; ++ch) {
        double mu = 0;
        for (auto& x : xs)
            for (std::size_t i = 0; i < plane; ++i) mu += x.values()[ch * plane + i];
        const double n = 2.0 * plane;
        mu /= n;
        double var = 0;
        for (auto& x : xs)
            for (std::size_t i = 0; i < plane; ++i) {
                double d = x.values()[ch * plane + i] - mu;
                var += d * d;
            }
        var /= n;
        for (std::size_t b = 0; b < xs.size(); ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                double want = gamma.values()[ch] * (xs[b].values()[ch * plane + i] - mu) /
                                  std::sqrt(var + 1e-5) +
                              beta.values()[ch];
                CHECK(outs[b].values()[ch * plane + i] == doctest::Approx(want).epsilon(1e-12));
            }
        CHECK(rm.values()[ch] == doctest::Approx(0.9 * 0.0 + 0.1 * mu).epsilon(1e-12));
        CHECK(rv.values()[ch] ==
              doctest::Approx(0.9 * 1.0 + 0.1 * var * n / (n - 1)).epsilon(1e-12));
    }

    // eval mode applies the running affine only
    auto ev = batch_norm(tape, xs, gamma, beta, rm, rv, false, 0.1, 1e-5);
    for (int ch = 0; ch < c; ++ch)
        CHECK(ev[0].values()[ch * plane] ==
              doctest::Approx(gamma.values()[ch] * (xs[0].values()[ch * plane] - rm.values()[ch]) /
                                  std::sqrt(rv.values()[ch] + 1e-5) +
                              beta.values()[ch])
                  .epsilon(1e-12));

    // finite differences through input, gamma, beta in both modes; weighted
    // losses keep every gradient coordinate away from structural zero
    for (bool training : {true, false}) {
        Rng r2(5 + training);
        auto sample0 = oracle::random_tensor<double>(r2, {c, h, w});
        auto sample1 = oracle::random_tensor<double>(r2, {c, h, w});
        auto wts = oracle::random_tensor<double>(r2, {c, h, w}, 0.5, 1.5);
        auto wloss = [&](Tape<double>& t, std::vector<Tensor<double>> ys) {
            auto l0 = sum(t, mul(t, ys[0], wts));
            auto l1 = sum(t, mul(t, mul(t, ys[1], ys[1]), wts));
            return add(t, l0, l1);
        };
        auto run = [&](Tape<double>& t, const Tensor<double>& x) {
            Tensor<double> g2 = gamma.clone(), b2 = beta.clone(), rm2 = rm.clone(), rv2 = rv.clone();
            auto ys = batch_norm(t, {x, sample1}, g2, b2, rm2, rv2, training, 0.1, 1e-5);
            return wloss(t, ys);
        };
        CHECK(fd(run, sample0) < 1e-5);

        auto run_gamma = [&](Tape<double>& t, const Tensor<double>& g) {
            Tensor<double> b2 = beta.clone(), rm2 = rm.clone(), rv2 = rv.clone();
            auto ys = batch_norm(t, {sample0, sample1}, g, b2, rm2, rv2, training, 0.1, 1e-5);
            return wloss(t, ys);
        };
        CHECK(fd(run_gamma, gamma) < 1e-5);
        auto run_beta = [&](Tape<double>& t, const Tensor<double>& b) {
            Tensor<double> g2 = gamma.clone(), rm2 = rm.clone(), rv2 = rv.clone();
            auto ys = batch_norm(t, {sample0, sample1}, g2, b, rm2, rv2, training, 0.1, 1e-5);
            return wloss(t, ys);
        };
        CHECK(fd(run_beta, beta) < 1e-5);
    }
}

TEST_CASE("linear matches a scalar loop") {
    Rng rng(3);
    auto x = oracle::random_tensor<double>(rng, {5});
    auto w = oracle::random_tensor<double>(rng, {3, 5});
    auto b = oracle::random_tensor<double>(rng, {3});
    Tape<double> tape(false);
    auto y = linear(tape, x, w, &b);
    for (int m = 0; m < 3; ++m) {
        double acc = b.values()[m];
        for (int k = 0; k < 5; ++k) acc += w.values()[m * 5 + k] * x.values()[k];
        CHECK(y.values()[m] == acc);
    }
    CHECK_THROWS_AS(linear(tape, x, Tensor<double>({3, 4}, 1.0), &b), imo::ShapeError);
}

TEST_CASE("layout ops shapes") {
    Tape<double> tape(false);
    Rng rng(8);
    auto a = oracle::random_tensor<double>(rng, {2, 3, 3});
    auto b = oracle::random_tensor<double>(rng, {1, 3, 3});
    auto cat = concat_channels(tape, {a, b});
    CHECK(cat.shape() == Shape{3, 3, 3});
    CHECK(cat.values()[0] == a.values()[0]);
    CHECK(cat.values()[18] == b.values()[0]);
    CHECK_THROWS_AS(concat_channels(tape, {a, oracle::random_tensor<double>(rng, {1, 2, 2})}),
                    imo::ShapeError);

    auto up = upsample_nearest2d(tape, b, 2);
    CHECK(up.shape() == Shape{1, 6, 6});
    CHECK(up.values()[0] == b.values()[0]);
    CHECK(up.values()[1] == b.values()[0]);

    auto down = downsample_stride2d(tape, a, 2);
    CHECK(down.shape() == Shape{2, 2, 2});
    CHECK(down.values()[0] == a.values()[0]);
    CHECK(down.values()[1] == a.values()[2]);

    auto dm = depth_mean(tape, oracle::random_tensor<double>(rng, {2, 3, 2, 2}));
    CHECK(dm.shape() == Shape{2, 2, 2});
}
