#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radiomap/autodiff.hpp"
#include "radiomap/features.hpp"
#include "radiomap/grid.hpp"
#include "radiomap/scene.hpp"

namespace radiomap {

// U-shaped pathloss regressor. The encoder halves the spatial dims once per
// stage after the first and doubles the channel width; the deepest stage runs
// scaled-dot attention over its flattened tokens. Each decoder step upsamples,
// merges the encoder skip through a learned gate, mixes scales with parallel
// depthwise kernels and re-weights channels before the sigmoid head.
struct ModelConfig {
    int in_channels = 0;
    int base_width = 16;
    int n_stages = 4;
    // Stage index receiving attention; -1 selects the deepest stage.
    int attention_stage = -1;
    std::vector<int> decoder_kernels = {1, 3, 5};
    int channel_attention_reduction = 4;

    void validate() const;
    int stage_width(int stage) const { return base_width << stage; }
    int resolved_attention_stage() const;
    // Input H and W must be divisible by this.
    int spatial_divisor() const { return 1 << (n_stages - 1); }
};

// Largest divisor of channels that is at most 8, used as the group count for
// group normalization.
int norm_groups(int channels);

// Named parameter tensors in registration order. The order is part of the
// model definition: initialization draws and checkpoint layout follow it.
template <typename S>
struct ModelParamsT {
    std::vector<std::string> names;
    std::vector<TensorT<S>> tensors;

    int add(std::string name, TensorT<S> t);
    int find(const std::string& name) const; // -1 when absent
    const TensorT<S>& at(const std::string& name) const;
    TensorT<S>& at(const std::string& name);
    std::size_t size() const { return tensors.size(); }
    std::int64_t parameter_count() const;
};

using ModelParams = ModelParamsT<float>;

// Deterministic initialization: weights uniform in ±1/sqrt(fan_in), biases
// zero, norm scales one, norm shifts zero. Same (cfg, seed) gives identical
// bytes.
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

ModelParamsT<double> widen_params(const ModelParams& params);

// Registers every parameter on the tape (in order) and returns the node ids.
template <typename S>
std::vector<int> track_params(TapeT<S>& tape, const ModelParamsT<S>& params, bool requires_grad);

// Runs the network on a tracked [N,C,H,W] input node and returns the
// [N,1,H,W] output node, sigmoid-activated into [0,1].
template <typename S>
int model_forward(TapeT<S>& tape, const ModelConfig& cfg, const std::vector<int>& param_nodes,
                  const ModelParamsT<S>& params, int input);

// Bounded residual combine for the fine stage:
// clamp01(coarse + 2*(fine_out - 0.5)). A zero fine head gives fine_out 0.5
// everywhere, so the combined map equals the coarse map exactly.
template <typename S>
int combine_residual(TapeT<S>& tape, int coarse_norm, int fine_out);

// Single-sample forward on an assembled feature stack; returns the
// normalized [0,1] prediction.
Grid forward_normalized(const ModelParams& params, const ModelConfig& cfg,
                        const FeatureStack& stack);

// Coarse prediction in dB.
Grid predict_pathloss(const ModelParams& params, const ModelConfig& cfg, const Scene& scene,
                      const FeatureConfig& fcfg, const NormalizationSpec& norm);

// Fine prediction in dB: the frozen coarse map is appended to the feature
// stack, the fine net emits a bounded residual on the normalized scale.
Grid predict_pathloss(const ModelParams& fine_params, const ModelConfig& fine_cfg,
                      const ModelParams& coarse_params, const ModelConfig& coarse_cfg,
                      const Scene& scene, const FeatureConfig& fcfg,
                      const NormalizationSpec& norm);

void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

extern template struct ModelParamsT<float>;
extern template struct ModelParamsT<double>;
extern template std::vector<int> track_params<float>(TapeT<float>&, const ModelParamsT<float>&,
                                                     bool);
extern template std::vector<int> track_params<double>(TapeT<double>&,
                                                      const ModelParamsT<double>&, bool);
extern template int model_forward<float>(TapeT<float>&, const ModelConfig&,
                                         const std::vector<int>&, const ModelParamsT<float>&,
                                         int);
extern template int model_forward<double>(TapeT<double>&, const ModelConfig&,
                                          const std::vector<int>&, const ModelParamsT<double>&,
                                          int);
extern template int combine_residual<float>(TapeT<float>&, int, int);
extern template int combine_residual<double>(TapeT<double>&, int, int);

} // namespace radiomap
