#include "radiomap/model.hpp"

#include <cmath>
#include <cstdio>
#include <unordered_map>
#include <utility>

#include "radiomap/error.hpp"
#include "radiomap/io.hpp"
#include "radiomap/log.hpp"
#include "radiomap/rng.hpp"

namespace radiomap {

void ModelConfig::validate() const {
    if (in_channels < 1) throw ValidationError("model needs at least one input channel");
    if (base_width < 1) throw ValidationError("base_width must be positive");
    if (n_stages < 2) throw ValidationError("the model needs at least two stages");
    if (attention_stage < -1 || attention_stage >= n_stages) {
        throw ValidationError("attention_stage out of range");
    }
    if (decoder_kernels.empty()) throw ValidationError("decoder kernel set is empty");
    for (int k : decoder_kernels) {
        if (k < 1 || k % 2 == 0) throw ValidationError("decoder kernels must be odd");
    }
    if (channel_attention_reduction < 1) {
        throw ValidationError("channel_attention_reduction must be positive");
    }
}

int ModelConfig::resolved_attention_stage() const {
    return attention_stage < 0 ? n_stages - 1 : attention_stage;
}

int norm_groups(int channels) {
    for (int g = std::min(8, channels); g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

template <typename S>
int ModelParamsT<S>::add(std::string name, TensorT<S> t) {
    if (find(name) >= 0) throw ValidationError("duplicate parameter name: " + name);
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
    return static_cast<int>(tensors.size()) - 1;
}

template <typename S>
int ModelParamsT<S>::find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

template <typename S>
const TensorT<S>& ModelParamsT<S>::at(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw ValidationError("unknown parameter: " + name);
    return tensors[static_cast<std::size_t>(i)];
}

template <typename S>
TensorT<S>& ModelParamsT<S>::at(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw ValidationError("unknown parameter: " + name);
    return tensors[static_cast<std::size_t>(i)];
}

template <typename S>
std::int64_t ModelParamsT<S>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

namespace {

std::string stage_name(const char* prefix, int i, const char* suffix) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%d.%s", prefix, i, suffix);
    return buf;
}

std::string ms_name(int i, int k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "dec%d.ms%d.w", i, k);
    return buf;
}

// Declares every parameter in a fixed order. The callback receives the name,
// the shape and the fan-in used for the init bound (0 marks biases and norm
// shifts, -1 marks norm scales).
template <typename F>
void for_each_param(const ModelConfig& cfg, F&& visit) {
    for (int s = 0; s < cfg.n_stages; ++s) {
        const int ci = s == 0 ? cfg.in_channels : cfg.stage_width(s - 1);
        const int co = cfg.stage_width(s);
        visit(stage_name("enc", s, "conv.w"), std::vector<int>{co, ci, 3, 3}, ci * 9);
        visit(stage_name("enc", s, "conv.b"), std::vector<int>{co}, 0);
        visit(stage_name("enc", s, "gn.g"), std::vector<int>{co}, -1);
        visit(stage_name("enc", s, "gn.b"), std::vector<int>{co}, 0);
    }
    const int d = cfg.stage_width(cfg.resolved_attention_stage());
    for (const char* p : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        visit(std::string(p), std::vector<int>{d, d}, d);
        std::string b(p);
        b[5] = 'b';
        visit(b, std::vector<int>{d}, 0);
    }
    for (int i = 0; i + 1 < cfg.n_stages; ++i) {
        const int hi = cfg.stage_width(cfg.n_stages - 1 - i);
        const int lo = cfg.stage_width(cfg.n_stages - 2 - i);
        visit(stage_name("dec", i, "reduce.w"), std::vector<int>{lo, hi, 1, 1}, hi);
        visit(stage_name("dec", i, "reduce.b"), std::vector<int>{lo}, 0);
        visit(stage_name("dec", i, "gate_up.w"), std::vector<int>{lo, lo, 1, 1}, lo);
        visit(stage_name("dec", i, "gate_up.b"), std::vector<int>{lo}, 0);
        visit(stage_name("dec", i, "gate_skip.w"), std::vector<int>{lo, lo, 1, 1}, lo);
        visit(stage_name("dec", i, "gate_skip.b"), std::vector<int>{lo}, 0);
        for (int k : cfg.decoder_kernels) {
            visit(ms_name(i, k), std::vector<int>{lo, 1, k, k}, k * k);
        }
        visit(stage_name("dec", i, "pw.w"), std::vector<int>{lo, lo, 1, 1}, lo);
        visit(stage_name("dec", i, "pw.b"), std::vector<int>{lo}, 0);
        visit(stage_name("dec", i, "gn.g"), std::vector<int>{lo}, -1);
        visit(stage_name("dec", i, "gn.b"), std::vector<int>{lo}, 0);
        const int hidden = std::max(1, lo / cfg.channel_attention_reduction);
        visit(stage_name("dec", i, "ca1.w"), std::vector<int>{hidden, lo, 1, 1}, lo);
        visit(stage_name("dec", i, "ca1.b"), std::vector<int>{hidden}, 0);
        visit(stage_name("dec", i, "ca2.w"), std::vector<int>{lo, hidden, 1, 1}, hidden);
        visit(stage_name("dec", i, "ca2.b"), std::vector<int>{lo}, 0);
    }
    visit(std::string("head.w"), std::vector<int>{1, cfg.stage_width(0), 3, 3},
          cfg.stage_width(0) * 9);
    visit(std::string("head.b"), std::vector<int>{1}, 0);
}

} // namespace

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams params;
    Rng rng(seed_for(seed, "model-init"));
    for_each_param(cfg, [&](std::string name, std::vector<int> dims, int fan_in) {
        Tensor t(std::move(dims));
        if (fan_in > 0) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (float& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
        } else if (fan_in < 0) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        }
        params.add(std::move(name), std::move(t));
    });
    log_info("model built: " + std::to_string(params.parameter_count()) + " parameters in " +
             std::to_string(params.size()) + " tensors");
    return params;
}

ModelParamsT<double> widen_params(const ModelParams& params) {
    ModelParamsT<double> wide;
    for (std::size_t i = 0; i < params.size(); ++i) {
        TensorT<double> t(params.tensors[i].dims);
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            t.data[j] = static_cast<double>(params.tensors[i].data[j]);
        }
        wide.add(params.names[i], std::move(t));
    }
    return wide;
}

template <typename S>
std::vector<int> track_params(TapeT<S>& tape, const ModelParamsT<S>& params, bool requires_grad) {
    std::vector<int> nodes;
    nodes.reserve(params.size());
    for (const auto& t : params.tensors) nodes.push_back(tape.track(t, requires_grad));
    return nodes;
}

namespace {

template <typename S>
class ParamNodes {
public:
    ParamNodes(const ModelParamsT<S>& params, const std::vector<int>& nodes) {
        if (params.size() != nodes.size()) {
            throw ValidationError("parameter node list does not match the parameter set");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            index_.emplace(params.names[i], nodes[i]);
        }
    }

    int operator()(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }

private:
    std::unordered_map<std::string, int> index_;
};

} // namespace

template <typename S>
int model_forward(TapeT<S>& tape, const ModelConfig& cfg, const std::vector<int>& param_nodes,
                  const ModelParamsT<S>& params, int input) {
    cfg.validate();
    const ParamNodes<S> node(params, param_nodes);
    const auto& in = tape.value(input);
    if (in.ndim() != 4) throw ValidationError("model input must be [N,C,H,W]");
    if (in.dim(1) != cfg.in_channels) throw ValidationError("model input channel mismatch");
    const int h = in.dim(2), w = in.dim(3);
    const int div = cfg.spatial_divisor();
    if (h % div != 0 || w % div != 0) {
        throw ValidationError("input spatial dims must be divisible by " + std::to_string(div));
    }

    const int attn_stage = cfg.resolved_attention_stage();
    std::vector<int> skips;
    int x = input;
    for (int s = 0; s < cfg.n_stages; ++s) {
        const int width = cfg.stage_width(s);
        x = tape.conv2d(x, node(stage_name("enc", s, "conv.w")),
                        node(stage_name("enc", s, "conv.b")), s == 0 ? 1 : 2, 1);
        x = tape.group_norm(x, node(stage_name("enc", s, "gn.g")),
                            node(stage_name("enc", s, "gn.b")), norm_groups(width));
        x = tape.gelu(x);
        if (s == attn_stage) {
            const int tokens = tape.nchw_to_tokens(x);
            const int att = tape.scaled_dot_attention(
                tokens, node("attn.wq"), node("attn.bq"), node("attn.wk"), node("attn.bk"),
                node("attn.wv"), node("attn.bv"), node("attn.wo"), node("attn.bo"));
            x = tape.add(x, tape.tokens_to_nchw(att, h >> s, w >> s));
        }
        skips.push_back(x);
    }

    x = skips[static_cast<std::size_t>(cfg.n_stages - 1)];
    for (int i = 0; i + 1 < cfg.n_stages; ++i) {
        const int lo = cfg.stage_width(cfg.n_stages - 2 - i);
        const int skip = skips[static_cast<std::size_t>(cfg.n_stages - 2 - i)];
        x = tape.conv2d(x, node(stage_name("dec", i, "reduce.w")),
                        node(stage_name("dec", i, "reduce.b")), 1, 0);
        x = tape.upsample_nearest(x, 2);
        const int gate = tape.sigmoid(tape.add(
            tape.conv2d(x, node(stage_name("dec", i, "gate_up.w")),
                        node(stage_name("dec", i, "gate_up.b")), 1, 0),
            tape.conv2d(skip, node(stage_name("dec", i, "gate_skip.w")),
                        node(stage_name("dec", i, "gate_skip.b")), 1, 0)));
        x = tape.add(x, tape.mul(skip, gate));
        int ms = -1;
        for (int k : cfg.decoder_kernels) {
            const int branch = tape.depthwise_conv2d(x, node(ms_name(i, k)), -1, 1, (k - 1) / 2);
            ms = ms < 0 ? branch : tape.add(ms, branch);
        }
        x = tape.conv2d(ms, node(stage_name("dec", i, "pw.w")),
                        node(stage_name("dec", i, "pw.b")), 1, 0);
        x = tape.group_norm(x, node(stage_name("dec", i, "gn.g")),
                            node(stage_name("dec", i, "gn.b")), norm_groups(lo));
        x = tape.gelu(x);
        int p = tape.global_avg_pool(x);
        p = tape.conv2d(p, node(stage_name("dec", i, "ca1.w")),
                        node(stage_name("dec", i, "ca1.b")), 1, 0);
        p = tape.gelu(p);
        p = tape.conv2d(p, node(stage_name("dec", i, "ca2.w")),
                        node(stage_name("dec", i, "ca2.b")), 1, 0);
        p = tape.sigmoid(p);
        x = tape.scale_channels(x, p);
    }
    x = tape.conv2d(x, node("head.w"), node("head.b"), 1, 1);
    return tape.sigmoid(x);
}

template <typename S>
int combine_residual(TapeT<S>& tape, int coarse_norm, int fine_out) {
    return tape.clamp01(tape.add(coarse_norm, tape.affine(fine_out, 2.0, -1.0)));
}

namespace {

Tensor stack_to_tensor(const FeatureStack& stack) {
    const int c = static_cast<int>(stack.channel_count());
    if (c == 0) throw ValidationError("empty feature stack");
    const int h = stack.height(), w = stack.width();
    Tensor t({1, c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci) {
        std::copy_n(stack.channel(static_cast<std::size_t>(ci)).data().data(), plane,
                    t.data.data() + static_cast<std::size_t>(ci) * plane);
    }
    return t;
}

Grid tensor_to_grid(const Tensor& t) {
    if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
        throw ValidationError("expected a [1,1,H,W] tensor");
    }
    std::vector<float> data(t.data.begin(), t.data.end());
    return Grid::from_data(t.dim(2), t.dim(3), std::move(data));
}

} // namespace

Grid forward_normalized(const ModelParams& params, const ModelConfig& cfg,
                        const FeatureStack& stack) {
    Tape tape;
    const auto nodes = track_params(tape, params, false);
    const int input = tape.track(stack_to_tensor(stack), false);
    const int out = model_forward(tape, cfg, nodes, params, input);
    return tensor_to_grid(tape.value(out));
}

Grid predict_pathloss(const ModelParams& params, const ModelConfig& cfg, const Scene& scene,
                      const FeatureConfig& fcfg, const NormalizationSpec& norm) {
    const FeatureStack stack = assemble_features(scene, fcfg);
    return denormalize(forward_normalized(params, cfg, stack), norm);
}

Grid predict_pathloss(const ModelParams& fine_params, const ModelConfig& fine_cfg,
                      const ModelParams& coarse_params, const ModelConfig& coarse_cfg,
                      const Scene& scene, const FeatureConfig& fcfg,
                      const NormalizationSpec& norm) {
    const FeatureStack coarse_stack = assemble_features(scene, fcfg);
    const Grid coarse = forward_normalized(coarse_params, coarse_cfg, coarse_stack);
    const FeatureStack fine_stack = assemble_features(scene, fcfg, &coarse);

    Tape tape;
    const auto nodes = track_params(tape, fine_params, false);
    const int input = tape.track(stack_to_tensor(fine_stack), false);
    const int fine_out = model_forward(tape, fine_cfg, nodes, fine_params, input);
    Tensor coarse_t({1, 1, coarse.height(), coarse.width()});
    std::copy(coarse.data().begin(), coarse.data().end(), coarse_t.data.begin());
    const int combined = combine_residual(tape, tape.track(std::move(coarse_t), false), fine_out);
    return denormalize(tensor_to_grid(tape.value(combined)), norm);
}

void save_model(const std::string& path, const ModelParams& params) {
    std::vector<NamedTensorEntry> entries;
    entries.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        NamedTensorEntry e;
        e.name = params.names[i];
        for (int d : params.tensors[i].dims) e.dims.push_back(static_cast<std::uint32_t>(d));
        e.data = params.tensors[i].data;
        entries.push_back(std::move(e));
    }
    write_named_tensors(entries, path);
}

ModelParams load_model(const std::string& path) {
    ModelParams params;
    for (auto& e : read_named_tensors(path)) {
        std::vector<int> dims;
        for (std::uint32_t d : e.dims) dims.push_back(static_cast<int>(d));
        Tensor t(std::move(dims));
        t.data = std::move(e.data);
        if (static_cast<std::int64_t>(t.data.size()) != t.numel()) {
            throw IoError("checkpoint entry size mismatch for " + e.name);
        }
        params.add(std::move(e.name), std::move(t));
    }
    return params;
}

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;
template std::vector<int> track_params<float>(TapeT<float>&, const ModelParamsT<float>&, bool);
template std::vector<int> track_params<double>(TapeT<double>&, const ModelParamsT<double>&, bool);
template int model_forward<float>(TapeT<float>&, const ModelConfig&, const std::vector<int>&,
                                  const ModelParamsT<float>&, int);
template int model_forward<double>(TapeT<double>&, const ModelConfig&, const std::vector<int>&,
                                   const ModelParamsT<double>&, int);
template int combine_residual<float>(TapeT<float>&, int, int);
template int combine_residual<double>(TapeT<double>&, int, int);

} // namespace radiomap
