#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "radiomap/autodiff.hpp"
#include "radiomap/error.hpp"
#include "radiomap/features.hpp"
#include "radiomap/model.hpp"
#include "radiomap/oracle.hpp"
#include "radiomap/rng.hpp"

using namespace radiomap;

namespace {

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("radiomap_model_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

ModelConfig tiny_config(int in_channels = 3) {
    ModelConfig cfg;
    cfg.in_channels = in_channels;
    cfg.base_width = 2;
    cfg.n_stages = 2;
    return cfg;
}

TensorT<float> random_input(std::vector<int> dims, std::uint64_t seed) {
    Rng rng(seed);
    TensorT<float> t(std::move(dims));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

TensorT<float> run_forward(const ModelConfig& cfg, const ModelParams& params,
                           const TensorT<float>& input) {
    Tape tape;
    const auto nodes = track_params(tape, params, false);
    const int out = model_forward(tape, cfg, nodes, params, tape.track(input, false));
    return tape.value(out);
}

} // namespace

TEST_CASE("norm group count is the largest divisor up to eight") {
    CHECK(norm_groups(1) == 1);
    CHECK(norm_groups(7) == 7);
    CHECK(norm_groups(8) == 8);
    CHECK(norm_groups(9) == 3);
    CHECK(norm_groups(10) == 5);
    CHECK(norm_groups(12) == 6);
    CHECK(norm_groups(16) == 8);
    CHECK(norm_groups(24) == 8);
    CHECK(norm_groups(11) == 1);
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.spatial_divisor() == 2);
    CHECK(cfg.resolved_attention_stage() == 1);

    cfg.in_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.n_stages = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.attention_stage = 5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.decoder_kernels = {2};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.decoder_kernels.clear();
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("initialization is seed deterministic") {
    const ModelConfig cfg = tiny_config();
    const ModelParams a = build_model(cfg, 7);
    const ModelParams b = build_model(cfg, 7);
    REQUIRE(a.size() == b.size());
    CHECK(a.names == b.names);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.tensors[i] == b.tensors[i]);

    const ModelParams c = build_model(cfg, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff |= !(a.tensors[i] == c.tensors[i]);
    CHECK(any_diff);
}

TEST_CASE("initialization respects fan-in bounds and norm conventions") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = build_model(cfg, 3);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        const auto& t = params.tensors[i];
        // the component after the last dot names the role: w* weight,
        // b* bias, g norm scale
        const std::string leaf = name.substr(name.rfind('.') + 1);
        if (leaf == "g") {
            for (float v : t.data) CHECK(v == 1.0f);
        } else if (leaf[0] == 'b') {
            for (float v : t.data) CHECK(v == 0.0f);
        } else {
            // weight: uniform within +-1/sqrt(fan_in); fan_in >= 1 so 1 bounds all
            for (float v : t.data) CHECK(std::abs(v) <= 1.0f);
            bool nonzero = false;
            for (float v : t.data) nonzero |= v != 0.0f;
            CHECK(nonzero);
        }
    }
}

TEST_CASE("parameter registration covers the documented block names") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = build_model(cfg, 1);
    CHECK(params.find("enc0.conv.w") >= 0);
    CHECK(params.find("enc1.conv.w") >= 0);
    CHECK(params.find("attn.wq") >= 0);
    CHECK(params.find("attn.bo") >= 0);
    CHECK(params.find("dec0.reduce.w") >= 0);
    CHECK(params.find("dec0.gate_up.w") >= 0);
    CHECK(params.find("dec0.gate_skip.w") >= 0);
    CHECK(params.find("dec0.ms1.w") >= 0);
    CHECK(params.find("dec0.ms3.w") >= 0);
    CHECK(params.find("dec0.ms5.w") >= 0);
    CHECK(params.find("dec0.pw.w") >= 0);
    CHECK(params.find("dec0.ca1.w") >= 0);
    CHECK(params.find("dec0.ca2.w") >= 0);
    CHECK(params.find("head.w") >= 0);
    CHECK(params.find("head.b") >= 0);
    CHECK(params.find("nope") == -1);
    CHECK_THROWS_AS(params.at("nope"), ValidationError);

    // depthwise multiscale kernels: one filter per channel
    const auto& ms5 = params.at("dec0.ms5.w");
    CHECK(ms5.dims == std::vector<int>{2, 1, 5, 5});
}

TEST_CASE("parameter count stays pinned for the reference shape") {
    ModelConfig cfg;
    cfg.in_channels = 9;
    cfg.base_width = 8;
    cfg.n_stages = 2;
    const ModelParams params = build_model(cfg, 1);
    // regression pin: catches silent architecture drift
    CHECK(params.parameter_count() == 3723);
}

TEST_CASE("forward output is normalized and correctly shaped") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = build_model(cfg, 5);
    const auto out = run_forward(cfg, params, random_input({2, 3, 8, 8}, 1));
    CHECK(out.dims == std::vector<int>{2, 1, 8, 8});
    for (float v : out.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("forward validates input shape") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = build_model(cfg, 5);
    Tape tape;
    const auto nodes = track_params(tape, params, false);

    const int wrong_c = tape.track(random_input({1, 4, 8, 8}, 2), false);
    CHECK_THROWS_AS(model_forward(tape, cfg, nodes, params, wrong_c), ValidationError);
    const int odd_hw = tape.track(random_input({1, 3, 7, 8}, 3), false);
    CHECK_THROWS_AS(model_forward(tape, cfg, nodes, params, odd_hw), ValidationError);
}

TEST_CASE("zeroed head emits exactly one half") {
    const ModelConfig cfg = tiny_config();
    ModelParams params = build_model(cfg, 9);
    std::fill(params.at("head.w").data.begin(), params.at("head.w").data.end(), 0.0f);
    std::fill(params.at("head.b").data.begin(), params.at("head.b").data.end(), 0.0f);
    const auto out = run_forward(cfg, params, random_input({1, 3, 4, 4}, 4));
    for (float v : out.data) CHECK(v == 0.5f);
}

TEST_CASE("residual combine with a neutral fine output is the identity") {
    Tape tape;
    TensorT<float> coarse({1, 1, 2, 2});
    coarse.data = {0.0f, 0.25f, 0.75f, 1.0f};
    const int ci = tape.track(coarse, false);
    const int fi = tape.track(TensorT<float>::full({1, 1, 2, 2}, 0.5f), false);
    const int combined = combine_residual(tape, ci, fi);
    CHECK(tape.value(combined).data == coarse.data);

    // saturating residuals clamp
    const int big = tape.track(TensorT<float>::full({1, 1, 2, 2}, 1.0f), false);
    const auto& hi = tape.value(combine_residual(tape, ci, big));
    for (float v : hi.data) CHECK(v == 1.0f);
    const int small = tape.track(TensorT<float>::full({1, 1, 2, 2}, 0.0f), false);
    const auto& lo = tape.value(combine_residual(tape, ci, small));
    for (float v : lo.data) CHECK(v == 0.0f);
}

TEST_CASE("checkpoint round-trip preserves every tensor") {
    TempDir tmp;
    const ModelConfig cfg = tiny_config();
    const ModelParams params = build_model(cfg, 11);
    const std::string file = (tmp.path / "model.ckpt").string();
    save_model(file, params);
    const ModelParams back = load_model(file);
    REQUIRE(back.size() == params.size());
    CHECK(back.names == params.names);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(back.tensors[i] == params.tensors[i]);

    // forward results agree exactly
    const auto input = random_input({1, 3, 4, 4}, 6);
    CHECK(run_forward(cfg, params, input) == run_forward(cfg, back, input));
}

TEST_CASE("whole-model gradients match finite differences") {
    ModelConfig cfg = tiny_config();
    const ModelParams f32 = build_model(cfg, 13);
    const ModelParamsT<double> params = widen_params(f32);

    TensorT<double> input({1, 3, 4, 4});
    TensorT<double> target({1, 1, 4, 4});
    Rng rng(21);
    for (auto& v : input.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : target.data) v = rng.uniform(0.2, 0.8);

    const auto loss_value = [&](const ModelParamsT<double>& p) {
        TapeT<double> tape;
        const auto nodes = track_params(tape, p, false);
        const int out = model_forward(tape, cfg, nodes, p, tape.track(input, false));
        return tape.value(tape.mse_loss(out, target)).data[0];
    };

    TapeT<double> tape;
    const auto nodes = track_params(tape, params, true);
    const int out = model_forward(tape, cfg, nodes, params, tape.track(input, false));
    tape.backward(tape.mse_loss(out, target));

    Rng pick(31);
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& analytic = tape.grad(nodes[t]);
        // probe a few elements of every tensor
        const std::size_t n = params.tensors[t].data.size();
        for (int probe = 0; probe < 3; ++probe) {
            const std::size_t k = pick.index(n);
            ModelParamsT<double> shifted = params;
            const double h = 1e-5;
            shifted.tensors[t].data[k] += h;
            const double up = loss_value(shifted);
            shifted.tensors[t].data[k] -= 2.0 * h;
            const double down = loss_value(shifted);
            const double numeric = (up - down) / (2.0 * h);
            const double scale =
                std::max({1.0, std::abs(numeric), std::abs(analytic.data[k])});
            worst = std::max(worst, std::abs(analytic.data[k] - numeric) / scale);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("scene-level prediction has physical shape and range") {
    GeneratorParams gparams = default_generator_params();
    gparams.height = 16;
    gparams.width = 16;
    const Scene scene = generate_scene(gparams, 17);
    FeatureConfig fcfg;
    NormalizationSpec norm;

    ModelConfig cfg;
    cfg.in_channels = fcfg.channel_count(false);
    cfg.base_width = 4;
    cfg.n_stages = 2;
    const ModelParams coarse = build_model(cfg, 19);

    const Grid pred = predict_pathloss(coarse, cfg, scene, fcfg, norm);
    CHECK(pred.height() == 16);
    CHECK(pred.width() == 16);
    CHECK(pred.all_finite());
    for (float v : pred.values()) {
        CHECK(v >= norm.lo_db);
        CHECK(v <= norm.hi_db);
    }

    // fine stage with a zeroed residual head reproduces the coarse map
    ModelConfig fine_cfg;
    fine_cfg.in_channels = fcfg.channel_count(true);
    fine_cfg.base_width = 4;
    fine_cfg.n_stages = 2;
    ModelParams fine = build_model(fine_cfg, 23);
    std::fill(fine.at("head.w").data.begin(), fine.at("head.w").data.end(), 0.0f);
    std::fill(fine.at("head.b").data.begin(), fine.at("head.b").data.end(), 0.0f);
    const Grid fine_pred = predict_pathloss(fine, fine_cfg, coarse, cfg, scene, fcfg, norm);
    CHECK(fine_pred == pred);
}
