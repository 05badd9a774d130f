#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "handrawer/core/errors.hpp"
#include "handrawer/diffusion/checkpoint.hpp"
#include "handrawer/diffusion/codec.hpp"
#include "handrawer/diffusion/schedule.hpp"
#include "handrawer/diffusion/text.hpp"
#include "handrawer/diffusion/unet.hpp"
#include "test_support.hpp"

using namespace handrawer;
using namespace handrawer::diffusion;
using testing_support::grad_check;
using testing_support::random_tensor;

namespace {

UNetConfig tiny_config() {
    UNetConfig c;
    c.channels = {8, 8, 8};
    c.time_dim = 16;
    c.text_width = 32;
    return c;
}

struct TinyModel {
    nn::ParameterStore store{11};
    UNet unet{store, "unet", tiny_config()};
    ControlNet control{store, "controlnet", tiny_config()};
    TextEncoder text;
    ag::Var z = ag::constant(random_tensor({3, 8, 8}, 3));
    ag::Var txt = ag::constant(text.encode_text("a hand showing peace"));
    ag::Var hint = ag::constant(random_tensor({1, 8, 8}, 4, 0.0, 1.0));

    Tensor run(bool with_control, double t = 17) {
        ag::NoGradGuard ng;
        DenoiseInputs in{z, t, txt};
        ControlResiduals res;
        if (with_control) {
            res = control.forward(z, t, txt, hint);
            in.control = &res;
        }
        return unet.forward(in).value();
    }
};

}  // namespace

TEST_CASE("linear schedule is strictly decreasing and well formed") {
    for (int T : {2, 10, 50, 1000}) {
        auto s = NoiseSchedule::linear(T);
        CHECK(s.T == T);
        CHECK(s.alpha_bar[0] == doctest::Approx(1.0 - s.beta[0]).epsilon(1e-15));
        for (int a = 0; a < T; ++a) {
            CHECK(s.alpha_bar[a] > 0.0);
            CHECK(s.alpha_bar[a] < 1.0);
            for (int b = a + 1; b < T; ++b) REQUIRE(s.alpha_bar[a] > s.alpha_bar[b]);
        }
    }
    auto full = NoiseSchedule::linear(1000, 1e-4, 0.02, false);
    CHECK(full.beta.front() == doctest::Approx(1e-4));
    CHECK(full.beta.back() == doctest::Approx(0.02));
    CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 1.5}), ValidationError);
    CHECK_THROWS_AS(NoiseSchedule::from_betas({}), ValidationError);
}

TEST_CASE("forward diffusion endpoints and range") {
    Tensor z0 = random_tensor({3, 4, 4}, 1), eps = random_tensor({3, 4, 4}, 2);
    auto clean = NoiseSchedule::with_alpha_bar_unchecked({1.0});
    CHECK(bit_equal(forward_diffuse(z0, 0, eps, clean), z0));
    auto noise = NoiseSchedule::with_alpha_bar_unchecked({0.0});
    CHECK(bit_equal(forward_diffuse(z0, 0, eps, noise), eps));
    auto s = NoiseSchedule::linear(50);
    CHECK_THROWS_AS(forward_diffuse(z0, 50, eps, s), ValidationError);
    CHECK_THROWS_AS(forward_diffuse(z0, -1, eps, s), ValidationError);
    CHECK_THROWS_AS(forward_diffuse(z0, 3, random_tensor({3, 4, 2}, 2), s), ValidationError);
}

TEST_CASE("forward diffusion of a zero latent has variance (1 - abar) Var(eps)") {
    auto s = NoiseSchedule::linear(50);
    const int t = 20;
    Tensor z0({1, 100, 100});
    Tensor eps({1, 100, 100});
    CounterRng rng(99, {1});
    for (double& v : eps.storage()) v = rng.normal();
    Tensor out = forward_diffuse(z0, t, eps, s);
    auto variance = [](const Tensor& x) {
        double m = 0, q = 0;
        for (double v : x.values()) m += v;
        m /= x.size();
        for (double v : x.values()) q += (v - m) * (v - m);
        return q / x.size();
    };
    const double expected = (1.0 - s.alpha_bar[t]) * variance(eps);
    CHECK(std::abs(variance(out) - expected) < 0.05 * expected);
}

TEST_CASE("forward diffusion is jointly linear in (z0, eps)") {
    auto s = NoiseSchedule::linear(50);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a0 = random_tensor({2, 3, 3}, 10 + trial), b0 = random_tensor({2, 3, 3}, 40 + trial);
        Tensor ae = random_tensor({2, 3, 3}, 70 + trial), be = random_tensor({2, 3, 3}, 90 + trial);
        const double alpha = 0.3 + trial * 0.1, beta = -1.1 + trial * 0.05;
        auto combo = [&](const Tensor& x, const Tensor& y) {
            Tensor r = x;
            r *= alpha;
            Tensor yy = y;
            yy *= beta;
            r += yy;
            return r;
        };
        const int t = trial % 50;
        Tensor lhs = forward_diffuse(combo(a0, b0), t, combo(ae, be), s);
        Tensor rhs = combo(forward_diffuse(a0, t, ae, s), forward_diffuse(b0, t, be, s));
        CHECK(max_abs_diff(lhs, rhs) < 1e-12);
        CHECK(lhs.shape() == a0.shape());
    }
}

TEST_CASE("codec constant and zero images") {
    LatentCodec codec(4);
    Tensor half({3, 16, 12}, 0.5);
    Tensor round_trip = codec.decode(codec.encode(half));
    for (double v : round_trip.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    Tensor zero_latent = codec.encode(Tensor({3, 8, 8}));
    for (double v : zero_latent.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(codec.encode(Tensor({3, 10, 8})), ValidationError);
    CHECK(codec.encode(half).shape() == std::vector<int>{3, 4, 3});
}

TEST_CASE("codec equals its explicit projection matrix and never increases the norm") {
    const int f = 4, H = 8, W = 8;
    LatentCodec codec(f);
    const int h = H / f, w = W / f;
    // Explicit matrix P[(c,y,x), (c,Y,X)] = 1/f when (Y,X) lies in patch (y,x).
    std::vector<double> P(static_cast<std::size_t>(3 * h * w) * (3 * H * W), 0.0);
    for (int c = 0; c < 3; ++c)
        for (int Y = 0; Y < H; ++Y)
            for (int X = 0; X < W; ++X) {
                const int row = (c * h + Y / f) * w + X / f, col = (c * H + Y) * W + X;
                P[static_cast<std::size_t>(row) * (3 * H * W) + col] = 1.0 / f;
            }
    for (int draw = 0; draw < 100; ++draw) {
        Tensor x = random_tensor({3, H, W}, 500 + draw, -2.0, 2.0);
        Tensor z = codec.encode(x);
        double nz = 0, nx = 0, worst = 0;
        for (int r = 0; r < 3 * h * w; ++r) {
            double acc = 0;
            for (int c = 0; c < 3 * H * W; ++c) acc += P[static_cast<std::size_t>(r) * (3 * H * W) + c] * x[c];
            worst = std::max(worst, std::abs(acc - z[r]));
            nz += z[r] * z[r];
        }
        for (double v : x.values()) nx += v * v;
        REQUIRE(worst < 1e-12);
        REQUIRE(nz <= nx + 1e-12);
    }
}

TEST_CASE("codec round trip reproduces patch means and model space is affine") {
    LatentCodec codec(2);
    Tensor x = random_tensor({3, 4, 4}, 8, 0.0, 1.0);
    Tensor y = codec.decode(codec.encode(x));
    for (int c = 0; c < 3; ++c)
        for (int Y = 0; Y < 4; ++Y)
            for (int X = 0; X < 4; ++X) {
                const int y0 = Y / 2 * 2, x0 = X / 2 * 2;
                const double m =
                    (x.at(c, y0, x0) + x.at(c, y0 + 1, x0) + x.at(c, y0, x0 + 1) + x.at(c, y0 + 1, x0 + 1)) / 4;
                CHECK(y.at(c, Y, X) == doctest::Approx(m).epsilon(1e-14));
            }
    Tensor m = codec.encode_image(Tensor({3, 4, 4}, 1.0));
    for (double v : m.values()) CHECK(v == doctest::Approx(1.0));
    Tensor back = codec.from_model_space(codec.to_model_space(codec.encode(x)));
    CHECK(max_abs_diff(back, codec.encode(x)) < 1e-14);
    Tensor img = codec.decode_image(codec.encode_image(x));
    CHECK(max_abs_diff(img, y) < 1e-14);
}

TEST_CASE("text encoder is deterministic and rejects empty input") {
    TextEncoder enc;
    CHECK(bit_equal(enc.encode({"like"}), enc.encode({"like"})));
    CHECK(enc.encode({"like"}).shape() == std::vector<int>{24, 32});
    CHECK_FALSE(bit_equal(enc.encode({"like"}), enc.encode({"fist"})));
    CHECK_THROWS_AS(enc.encode({}), ValidationError);
    CHECK(tokenize("A hand, showing Two_Up!") == std::vector<std::string>{"a", "hand", "showing", "two_up"});
}

TEST_CASE("unet output shape, determinism and shape errors") {
    TinyModel m;
    Tensor a = m.run(false), b = m.run(false);
    CHECK(a.shape() == m.z.shape());
    CHECK(bit_equal(a, b));
    CHECK(a.all_finite());
    CHECK_FALSE(bit_equal(m.run(false, 3), a));
    ag::NoGradGuard ng;
    DenoiseInputs bad{ag::constant(Tensor({3, 6, 8})), 1, m.txt};
    CHECK_THROWS_AS(m.unet.forward(bad), ValidationError);
}

TEST_CASE("injection returning the wrong shape names the site") {
    TinyModel m;
    DenoiseInputs in{m.z, 5, m.txt};
    in.inject = [](Site s, const ag::Var& h) {
        return s == Site::mid ? ag::constant(Tensor({1, 1, 1})) : h;
    };
    try {
        m.unet.forward(in);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("'mid'") != std::string::npos);
    }
    for (Site s : kSites) {
        std::vector<int> seen;
        DenoiseInputs probe{m.z, 5, m.txt};
        probe.inject = [&](Site at, const ag::Var& h) {
            if (at == s) seen = h.shape();
            return h;
        };
        m.unet.forward(probe);
        CHECK(seen == m.unet.site_shape(s, 8, 8));
    }
}

TEST_CASE("unet gradients match central differences") {
    TinyModel m;
    auto params = testing_support::with_prefix(m.store, "unet.");
    for (std::uint64_t subset = 0; subset < 3; ++subset) {
        auto r = grad_check(params, [&] {
            DenoiseInputs in{m.z, 9, m.txt};
            return ag::sum_squares(m.unet.forward(in));
        }, 10, 100 + subset);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("fresh controlnet is neutral; one gradient step makes it matter") {
    TinyModel m;
    CHECK(bit_equal(m.run(true), m.run(false)));

    Tensor target = random_tensor({3, 8, 8}, 77);
    DenoiseInputs in{m.z, 17, m.txt};
    ControlResiduals res = m.control.forward(m.z, 17, m.txt, m.hint);
    in.control = &res;
    m.store.zero_grad();
    ag::backward(ag::mse(m.unet.forward(in), ag::constant(target)));
    for (auto* p : testing_support::with_prefix(m.store, "controlnet.")) {
        if (p->grad.empty()) continue;
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= 0.1 * p->grad[i];
    }
    CHECK(max_abs_diff(m.run(true), m.run(false)) > 0.0);
}

TEST_CASE("controlnet residuals on a zero hint are repeatable") {
    TinyModel m;
    ag::NoGradGuard ng;
    ag::Var zero_hint = ag::constant(Tensor({1, 8, 8}));
    auto a = m.control.forward(m.z, 4, m.txt, zero_hint);
    auto b = m.control.forward(m.z, 4, m.txt, zero_hint);
    for (int i = 0; i < 3; ++i) CHECK(bit_equal(a.skips[i].value(), b.skips[i].value()));
    CHECK(bit_equal(a.mid.value(), b.mid.value()));
    CHECK_THROWS_AS(m.control.forward(m.z, 4, m.txt, ag::constant(Tensor({1, 4, 4}))), ValidationError);
}

TEST_CASE("area downsampling averages blocks") {
    Tensor r({1, 4, 4});
    for (int i = 0; i < 16; ++i) r[i] = i;
    Tensor d = downsample_area(r, 2, 2);
    CHECK(d[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(d[3] == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK_THROWS_AS(downsample_area(r, 3, 3), ValidationError);
}

TEST_CASE("checkpoint container round trip and corruption") {
    Checkpoint c;
    c.header["config_hash"] = "abc";
    c.header["step"] = 12;
    c.blobs["a.weight"] = random_tensor({2, 3}, 1);
    c.blobs["b"] = random_tensor({4}, 2);
    auto bytes = encode_checkpoint(c);
    Checkpoint d = decode_checkpoint(bytes);
    CHECK(d.header == c.header);
    REQUIRE(d.blobs.size() == 2);
    CHECK(bit_equal(d.blobs["a.weight"], c.blobs["a.weight"]));
    CHECK(encode_checkpoint(d) == bytes);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(flipped), IntegrityError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    CHECK_THROWS(decode_checkpoint(truncated));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS(decode_checkpoint(bad_magic));

    auto path = std::filesystem::temp_directory_path() / "hd_ckpt_test.bin";
    save_checkpoint_file(path, c);
    CHECK(encode_checkpoint(load_checkpoint_file(path)) == bytes);
    std::filesystem::remove(path);
}
