#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "radiomap/autodiff.hpp"
#include "radiomap/error.hpp"
#include "radiomap/rng.hpp"

using namespace radiomap;

namespace {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

DTensor random_tensor(std::vector<int> dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(dims));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Central finite differences of a scalar-valued rebuild against the
// recorded gradients, for every input marked differentiable.
struct GradCheck {
    std::vector<DTensor> inputs;
    std::function<int(DTape&, const std::vector<int>&)> build;

    void run(double tol = 1e-6, double h = 1e-5) {
        std::vector<int> ids;
        DTape tape;
        for (const auto& in : inputs) ids.push_back(tape.track(in, true));
        const int loss = build(tape, ids);
        REQUIRE(tape.value(loss).numel() == 1);
        tape.backward(loss);

        const auto eval = [&](const std::vector<DTensor>& shifted) {
            DTape t2;
            std::vector<int> ids2;
            for (const auto& in : shifted) ids2.push_back(t2.track(in, false));
            return t2.value(build(t2, ids2)).data[0];
        };

        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const DTensor& analytic = tape.grad(ids[static_cast<std::size_t>(i)]);
            REQUIRE(analytic.dims == inputs[i].dims);
            for (std::size_t k = 0; k < inputs[i].data.size(); ++k) {
                auto shifted = inputs;
                shifted[i].data[k] += h;
                const double up = eval(shifted);
                shifted[i].data[k] -= 2.0 * h;
                const double down = eval(shifted);
                const double numeric = (up - down) / (2.0 * h);
                const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic.data[k])});
                INFO("input ", i, " element ", k);
                CHECK(std::abs(analytic.data[k] - numeric) / scale < tol);
            }
        }
    }
};

} // namespace

TEST_CASE("tensor shape bookkeeping") {
    DTensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.ndim() == 3);
    CHECK(t.dim(1) == 3);
    CHECK(static_cast<std::size_t>(t.numel()) == t.data.size());

    CHECK_THROWS_AS(DTensor(std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS(DTensor({2, 0, 2}), ValidationError);
    CHECK_THROWS_AS(DTensor({1, 2, 3, 4, 5}), ValidationError);

    const DTensor f = DTensor::full({2, 2}, 3.5);
    CHECK(f.data == std::vector<double>(4, 3.5));
}

TEST_CASE("gradients never flow into untracked inputs") {
    DTape tape;
    const int x = tape.track(DTensor::full({2, 2}, 1.0), false);
    const int y = tape.track(DTensor::full({2, 2}, 2.0), true);
    const int z = tape.add(x, y);
    const int loss = tape.sum(z);
    tape.backward(loss);
    CHECK(tape.grad(y).data == std::vector<double>(4, 1.0));
    CHECK_THROWS_AS(tape.grad(x), Error);
    CHECK_FALSE(tape.requires_grad(x));
}

TEST_CASE("backward requires a scalar") {
    DTape tape;
    const int x = tape.track(DTensor::full({2, 2}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(x), ValidationError);
}

TEST_CASE("conv2d gradients") {
    Rng rng(1);
    for (const int stride : {1, 2}) {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng),
                     random_tensor({4}, rng)};
        gc.build = [stride](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.conv2d(ids[0], ids[1], ids[2], stride, 1));
        };
        gc.run();
    }
}

TEST_CASE("conv2d without bias and with 1x1 kernels") {
    Rng rng(2);
    GradCheck gc;
    gc.inputs = {random_tensor({1, 4, 3, 3}, rng), random_tensor({2, 4, 1, 1}, rng)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        return t.sum(t.conv2d(ids[0], ids[1], -1, 1, 0));
    };
    gc.run();
}

TEST_CASE("conv2d validates shapes") {
    DTape tape;
    const int x = tape.track(DTensor::zeros({1, 3, 4, 4}), false);
    const int w_even = tape.track(DTensor::zeros({2, 3, 2, 2}), false);
    CHECK_THROWS_AS(tape.conv2d(x, w_even, -1, 1, 0), ValidationError);
    const int w_mismatch = tape.track(DTensor::zeros({2, 4, 3, 3}), false);
    CHECK_THROWS_AS(tape.conv2d(x, w_mismatch, -1, 1, 1), ValidationError);
    const int w_ok = tape.track(DTensor::zeros({2, 3, 3, 3}), false);
    const int bad_bias = tape.track(DTensor::zeros({3}), false);
    CHECK_THROWS_AS(tape.conv2d(x, w_ok, bad_bias, 1, 1), ValidationError);
    CHECK_THROWS_AS(tape.conv2d(x, w_ok, -1, 0, 1), ValidationError);
}

TEST_CASE("depthwise conv gradients") {
    Rng rng(3);
    for (const int k : {1, 3, 5}) {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 6, 6}, rng), random_tensor({3, 1, k, k}, rng),
                     random_tensor({3}, rng)};
        gc.build = [k](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.depthwise_conv2d(ids[0], ids[1], ids[2], 1, k / 2));
        };
        gc.run();
    }
}

TEST_CASE("linear gradients") {
    Rng rng(4);
    GradCheck gc;
    gc.inputs = {random_tensor({2, 5, 3}, rng), random_tensor({4, 3}, rng),
                 random_tensor({4}, rng)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        return t.sum(t.linear(ids[0], ids[1], ids[2]));
    };
    gc.run();
}

TEST_CASE("pointwise op gradients") {
    Rng rng(5);
    SUBCASE("gelu") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 7}, rng, -3.0, 3.0)};
        gc.build = [](DTape& t, const std::vector<int>& ids) { return t.sum(t.gelu(ids[0])); };
        gc.run();
    }
    SUBCASE("sigmoid") {
        GradCheck gc;
        gc.inputs = {random_tensor({3, 4}, rng, -4.0, 4.0)};
        gc.build = [](DTape& t, const std::vector<int>& ids) { return t.sum(t.sigmoid(ids[0])); };
        gc.run();
    }
    SUBCASE("affine") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.affine(ids[0], 2.5, -0.75));
        };
        gc.run();
    }
    SUBCASE("add and mul") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.add(ids[0], ids[1]), ids[1]));
        };
        gc.run();
    }
    SUBCASE("clamp01 away from the kinks") {
        GradCheck gc;
        DTensor x({6});
        x.data = {-0.8, 0.2, 0.4, 0.6, 0.9, 1.7}; // clear of 0 and 1
        gc.inputs = {x};
        gc.build = [](DTape& t, const std::vector<int>& ids) { return t.sum(t.clamp01(ids[0])); };
        gc.run();
    }
}

TEST_CASE("clamp01 blocks gradient outside the window") {
    DTape tape;
    DTensor x({3});
    x.data = {-0.5, 0.5, 1.5};
    const int xi = tape.track(x, true);
    tape.backward(tape.sum(tape.clamp01(xi)));
    CHECK(tape.grad(xi).data == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("group norm gradients") {
    Rng rng(6);
    for (const int groups : {1, 2, 4}) {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 4, 3, 3}, rng), random_tensor({4}, rng, 0.5, 1.5),
                     random_tensor({4}, rng)};
        gc.build = [groups](DTape& t, const std::vector<int>& ids) {
            // weight the elements so the statistics gradients matter
            DTensor target = DTensor::zeros({2, 4, 3, 3});
            for (std::size_t i = 0; i < target.data.size(); ++i) {
                target.data[i] = 0.01 * static_cast<double>(i);
            }
            return t.mse_loss(t.group_norm(ids[0], ids[1], ids[2], groups), target);
        };
        gc.run(1e-5);
    }
}

TEST_CASE("group norm validates the channel split") {
    DTape tape;
    const int x = tape.track(DTensor::zeros({1, 6, 2, 2}), false);
    const int g = tape.track(DTensor::full({6}, 1.0), false);
    const int b = tape.track(DTensor::zeros({6}), false);
    CHECK_THROWS_AS(tape.group_norm(x, g, b, 4), ValidationError);
    CHECK_THROWS_AS(tape.group_norm(x, g, b, 0), ValidationError);
    CHECK_NOTHROW(tape.group_norm(x, g, b, 3));
}

TEST_CASE("resampling op gradients") {
    Rng rng(7);
    SUBCASE("upsample nearest") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 2, 3, 3}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.mul(t.upsample_nearest(ids[0], 2), t.upsample_nearest(ids[0], 2)));
        };
        gc.run();
    }
    SUBCASE("avg pool") {
        GradCheck gc;
        gc.inputs = {random_tensor({1, 2, 4, 4}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            const int p = t.avg_pool(ids[0], 2, 2);
            return t.sum(t.mul(p, p));
        };
        gc.run();
    }
    SUBCASE("global avg pool") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 3, 3}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            const int p = t.global_avg_pool(ids[0]);
            return t.sum(t.mul(p, p));
        };
        gc.run();
    }
    SUBCASE("concat channels") {
        GradCheck gc;
        gc.inputs = {random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 3, 2, 2}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            const int c = t.concat_channels(ids[0], ids[1]);
            return t.sum(t.mul(c, c));
        };
        gc.run();
    }
    SUBCASE("scale channels") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3, 1, 1}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.scale_channels(ids[0], ids[1]));
        };
        gc.run();
    }
}

TEST_CASE("upsample output replicates pixels") {
    DTape tape;
    DTensor x({1, 1, 2, 2});
    x.data = {1.0, 2.0, 3.0, 4.0};
    const int u = tape.upsample_nearest(tape.track(x, false), 2);
    CHECK(tape.value(u).dims == std::vector<int>{1, 1, 4, 4});
    CHECK(tape.value(u).data == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, //
                                                    3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("matmul family gradients") {
    Rng rng(8);
    SUBCASE("matmul") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.matmul(ids[0], ids[1]));
        };
        gc.run();
    }
    SUBCASE("matmul_nt") {
        GradCheck gc;
        gc.inputs = {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)};
        gc.build = [](DTape& t, const std::vector<int>& ids) {
            return t.sum(t.matmul_nt(ids[0], ids[1]));
        };
        gc.run();
    }
    SUBCASE("shape mismatch") {
        DTape tape;
        const int a = tape.track(DTensor::zeros({2, 3, 4}), false);
        const int b = tape.track(DTensor::zeros({2, 3, 5}), false);
        CHECK_THROWS_AS(tape.matmul(a, b), ValidationError);
        const int c = tape.track(DTensor::zeros({1, 4, 5}), false);
        CHECK_THROWS_AS(tape.matmul(a, c), ValidationError);
    }
}

TEST_CASE("softmax gradients and normalization") {
    Rng rng(9);
    GradCheck gc;
    gc.inputs = {random_tensor({2, 3, 5}, rng, -2.0, 2.0)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        const int s = t.softmax_lastdim(ids[0]);
        return t.sum(t.mul(s, s)); // plain sum has zero gradient by design
    };
    gc.run();

    DTape tape;
    const int x = tape.track(random_tensor({2, 3, 5}, rng, -30.0, 30.0), false);
    const auto& y = tape.value(tape.softmax_lastdim(x));
    for (int n = 0; n < 2; ++n) {
        for (int t = 0; t < 3; ++t) {
            double row = 0.0;
            for (int u = 0; u < 5; ++u) row += y.data[static_cast<std::size_t>((n * 3 + t) * 5 + u)];
            CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("token reshape round-trip and gradients") {
    Rng rng(10);
    GradCheck gc;
    gc.inputs = {random_tensor({2, 3, 2, 4}, rng)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        const int tok = t.nchw_to_tokens(ids[0]);
        const int back = t.tokens_to_nchw(tok, 2, 4);
        return t.sum(t.mul(back, back));
    };
    gc.run();

    DTape tape;
    const DTensor x = random_tensor({1, 2, 2, 3}, rng);
    const int xi = tape.track(x, false);
    const int tok = tape.nchw_to_tokens(xi);
    CHECK(tape.value(tok).dims == std::vector<int>{1, 6, 2});
    // token t = pixel (r,c) in row-major order, feature dim = channel
    CHECK(tape.value(tok).data[0 * 2 + 0] == x.data[0 * 6 + 0]);
    CHECK(tape.value(tok).data[4 * 2 + 1] == x.data[1 * 6 + 4]);
    CHECK(tape.value(tape.tokens_to_nchw(tok, 2, 3)).data == x.data);
}

TEST_CASE("attention block gradients") {
    Rng rng(11);
    const int d = 3;
    GradCheck gc;
    gc.inputs = {random_tensor({2, 4, d}, rng),  random_tensor({d, d}, rng),
                 random_tensor({d}, rng),        random_tensor({d, d}, rng),
                 random_tensor({d}, rng),        random_tensor({d, d}, rng),
                 random_tensor({d}, rng),        random_tensor({d, d}, rng),
                 random_tensor({d}, rng)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        return t.sum(t.mul(t.scaled_dot_attention(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5],
                                                  ids[6], ids[7], ids[8]),
                           ids[0]));
    };
    gc.run(1e-5);
}

TEST_CASE("mse loss value and gradients") {
    Rng rng(12);
    GradCheck gc;
    DTensor target = random_tensor({2, 3}, rng);
    gc.inputs = {random_tensor({2, 3}, rng)};
    gc.build = [target](DTape& t, const std::vector<int>& ids) {
        return t.mse_loss(ids[0], target);
    };
    gc.run();

    DTape tape;
    DTensor pred({1, 4});
    pred.data = {1.0, 2.0, 3.0, 4.0};
    DTensor tgt({1, 4});
    tgt.data = {1.0, 1.0, 1.0, 1.0};
    const int loss = tape.mse_loss(tape.track(pred, false), tgt);
    CHECK(tape.value(loss).data[0] == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0));
}

TEST_CASE("masked mse ignores masked-out elements") {
    DTape tape;
    DTensor pred({1, 4});
    pred.data = {1.0, 2.0, 3.0, 4.0};
    DTensor tgt = DTensor::zeros({1, 4});
    DTensor mask({1, 4});
    mask.data = {1.0, 0.0, 1.0, 0.0};
    const int xi = tape.track(pred, true);
    const int loss = tape.mse_loss(xi, tgt, &mask);
    CHECK(tape.value(loss).data[0] == doctest::Approx((1.0 + 9.0) / 2.0));
    tape.backward(loss);
    CHECK(tape.grad(xi).data[1] == 0.0);
    CHECK(tape.grad(xi).data[3] == 0.0);
    CHECK(tape.grad(xi).data[0] == doctest::Approx(2.0 * 1.0 / 2.0));

    DTensor all_zero = DTensor::zeros({1, 4});
    CHECK_THROWS_AS(tape.mse_loss(xi, tgt, &all_zero), ValidationError);
}

TEST_CASE("adam first step matches the closed form") {
    // with zero init, m_hat = g, v_hat = g^2, so the first update is
    // -lr * g / (|g| + eps) = -lr * sign(g) for any gradient magnitude
    TensorT<float> p = TensorT<float>::full({3}, 1.0f);
    p.data = {1.0f, -2.0f, 0.5f};
    TensorT<float> g({3});
    g.data = {0.25f, -3.0f, 1e-4f};

    AdamStateT<float> state;
    state.lr = 0.01;
    std::vector<TensorT<float>*> params{&p};
    std::vector<const TensorT<float>*> grads{&g};
    adam_step(params, grads, state);

    CHECK(state.step == 1);
    CHECK(p.data[0] == doctest::Approx(1.0 - 0.01 * 0.25 / (0.25 + 1e-8)).epsilon(1e-6));
    CHECK(p.data[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(p.data[2] == doctest::Approx(0.5 - 0.01 * 1e-4 / (1e-4 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam two steps match a scalar reference") {
    // independent reference recursion in double
    const double g1 = 0.8;
    const double g2 = -0.3;
    const double lr = 0.005;
    double m = 0.0;
    double v = 0.0;
    double x = 0.7;
    int k = 0;
    for (const double g : {g1, g2}) {
        ++k;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, k));
        const double vh = v / (1.0 - std::pow(0.999, k));
        x -= lr * mh / (std::sqrt(vh) + 1e-8);
    }

    TensorT<float> p = TensorT<float>::full({1}, 0.7f);
    AdamStateT<float> state;
    state.lr = lr;
    std::vector<TensorT<float>*> params{&p};
    TensorT<float> ga = TensorT<float>::full({1}, static_cast<float>(g1));
    TensorT<float> gb = TensorT<float>::full({1}, static_cast<float>(g2));
    std::vector<const TensorT<float>*> grads{&ga};
    adam_step(params, grads, state);
    grads[0] = &gb;
    adam_step(params, grads, state);

    CHECK(p.data[0] == doctest::Approx(x).epsilon(1e-6));
}

TEST_CASE("adam validates shapes between calls") {
    TensorT<float> p = TensorT<float>::full({2}, 1.0f);
    TensorT<float> g = TensorT<float>::full({2}, 0.1f);
    AdamStateT<float> state;
    std::vector<TensorT<float>*> params{&p};
    std::vector<const TensorT<float>*> grads{&g};
    adam_step(params, grads, state);

    TensorT<float> wrong = TensorT<float>::full({3}, 0.1f);
    grads[0] = &wrong;
    CHECK_THROWS_AS(adam_step(params, grads, state), ValidationError);

    std::vector<const TensorT<float>*> too_many{&g, &g};
    CHECK_THROWS_AS(adam_step(params, too_many, state), ValidationError);
}

TEST_CASE("composed network gradient check") {
    // conv -> group norm -> gelu -> pool -> linear stack exercised end to
    // end, the same shape of composition the model uses
    Rng rng(13);
    GradCheck gc;
    gc.inputs = {random_tensor({1, 2, 4, 4}, rng), random_tensor({4, 2, 3, 3}, rng),
                 random_tensor({4}, rng),          random_tensor({4}, rng, 0.5, 1.5),
                 random_tensor({4}, rng),          random_tensor({3, 4}, rng),
                 random_tensor({3}, rng)};
    gc.build = [](DTape& t, const std::vector<int>& ids) {
        const int c = t.conv2d(ids[0], ids[1], ids[2], 1, 1);
        const int n = t.group_norm(c, ids[3], ids[4], 2);
        const int a = t.gelu(n);
        const int p = t.global_avg_pool(a);     // [1,4,1,1]
        const int tok = t.nchw_to_tokens(p);    // [1,1,4]
        const int l = t.linear(tok, ids[5], ids[6]);
        const int s = t.sigmoid(l);
        DTensor target = DTensor::full({1, 1, 3}, 0.25);
        return t.mse_loss(s, target);
    };
    gc.run(1e-5);
}
