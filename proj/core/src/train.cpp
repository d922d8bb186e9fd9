#include "radiomap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "radiomap/error.hpp"
#include "radiomap/io.hpp"
#include "radiomap/log.hpp"

namespace radiomap {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (!(base_lr > 0.0)) throw ValidationError("base_lr must be positive");
    if (!freeze_coarse) {
        throw ValidationError("stage-2 training keeps the coarse model frozen");
    }
}

double lr_at(int epoch, int total_epochs, double base_lr) {
    if (total_epochs < 1) throw ValidationError("total_epochs must be at least 1");
    if (epoch < 0 || epoch >= total_epochs) throw ValidationError("epoch out of range");
    const int first = total_epochs / 2;
    const int second = 3 * total_epochs / 4;
    if (epoch < first) return base_lr;
    if (epoch < second) return base_lr * 0.5;
    return base_lr * 0.25;
}

std::pair<FeatureStack, Grid> augment_sample(const FeatureStack& features, const Grid& target,
                                             Rng& rng) {
    if (target.height() != target.width()) {
        throw ValidationError("augmentation requires square grids");
    }
    const D4Element e = d4_all()[rng.index(8)];
    return {transform_features(features, e), d4_transform(target, e)};
}

TrainDataset load_training_data(const std::filesystem::path& manifest_path) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    const std::filesystem::path root = manifest_path.parent_path();
    TrainDataset data;
    data.norm = manifest.normalization;
    for (const auto& entry : manifest.scenes) {
        if (entry.split == Split::Test) continue;
        TrainSample sample;
        sample.scene = load_scene(root / entry.scene_path);
        sample.target_db = read_grid(root / entry.ground_truth_path);
        if (sample.target_db.height() != sample.scene.height() ||
            sample.target_db.width() != sample.scene.width()) {
            throw ValidationError("ground truth dims do not match the scene");
        }
        (entry.split == Split::Train ? data.train : data.val).push_back(std::move(sample));
    }
    return data;
}

namespace {

struct CachedSample {
    FeatureStack stack;
    Grid target_norm;
    const Grid* target_db = nullptr;
};

// Same float expression as the tape-side combine_residual, so validation
// scores match training predictions bit for bit.
float combine_px(float coarse, float residual) {
    const float shifted = residual * 2.0f + -1.0f;
    return std::min(std::max(coarse + shifted, 0.0f), 1.0f);
}

Grid predict_norm_cached(const ModelParams& params, const ModelConfig& mcfg,
                         const FeatureStack& stack, bool fine, int coarse_channel) {
    Grid out = forward_normalized(params, mcfg, stack);
    if (!fine) return out;
    const Grid& coarse = stack.channel(static_cast<std::size_t>(coarse_channel));
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = combine_px(coarse.data()[i], out.data()[i]);
    }
    return out;
}

std::vector<CachedSample> cache_samples(const std::vector<TrainSample>& samples,
                                        const FeatureConfig& fcfg,
                                        const NormalizationSpec& norm, bool fine,
                                        const ModelParams* coarse_params,
                                        const ModelConfig* coarse_cfg) {
    std::vector<CachedSample> cached;
    cached.reserve(samples.size());
    for (const auto& s : samples) {
        CachedSample c;
        if (fine) {
            const FeatureStack base = assemble_features(s.scene, fcfg);
            const Grid coarse = forward_normalized(*coarse_params, *coarse_cfg, base);
            c.stack = assemble_features(s.scene, fcfg, &coarse);
        } else {
            c.stack = assemble_features(s.scene, fcfg);
        }
        c.target_norm = normalize(s.target_db, norm);
        c.target_db = &s.target_db;
        cached.push_back(std::move(c));
    }
    return cached;
}

Tensor batch_features(const std::vector<const FeatureStack*>& stacks) {
    const int b = static_cast<int>(stacks.size());
    const int c = static_cast<int>(stacks[0]->channel_count());
    const int h = stacks[0]->height(), w = stacks[0]->width();
    Tensor t({b, c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            std::copy_n(stacks[static_cast<std::size_t>(i)]
                            ->channel(static_cast<std::size_t>(ci))
                            .data()
                            .data(),
                        plane,
                        t.data.data() + (static_cast<std::size_t>(i) * c + ci) * plane);
        }
    }
    return t;
}

Tensor batch_grids(const std::vector<const Grid*>& grids) {
    const int b = static_cast<int>(grids.size());
    const int h = grids[0]->height(), w = grids[0]->width();
    Tensor t({b, 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        std::copy_n(grids[static_cast<std::size_t>(i)]->data().data(), plane,
                    t.data.data() + static_cast<std::size_t>(i) * plane);
    }
    return t;
}

} // namespace

StageResult train_stage(const TrainDataset& data, const ModelConfig& mcfg,
                        const FeatureConfig& fcfg, const TrainConfig& tcfg,
                        const ModelParams* coarse_params, const ModelConfig* coarse_cfg) {
    tcfg.validate();
    mcfg.validate();
    fcfg.validate();
    data.norm.validate();
    if (data.train.empty()) throw ValidationError("training split is empty");
    if (data.val.empty()) throw ValidationError("validation split is empty");
    const bool fine = tcfg.stage == TrainStage::Fine;
    if (fine && (coarse_params == nullptr || coarse_cfg == nullptr)) {
        throw ValidationError("the fine stage requires the coarse model");
    }
    const int want_channels = fcfg.channel_count(fine);
    if (mcfg.in_channels != want_channels) {
        throw ValidationError("model expects " + std::to_string(mcfg.in_channels) +
                              " input channels but the feature set provides " +
                              std::to_string(want_channels));
    }

    const auto train_cache =
        cache_samples(data.train, fcfg, data.norm, fine, coarse_params, coarse_cfg);
    const auto val_cache =
        cache_samples(data.val, fcfg, data.norm, fine, coarse_params, coarse_cfg);
    const int coarse_channel = fine ? train_cache[0].stack.find("coarse_pred") : -1;
    if (fine && coarse_channel < 0) throw ValidationError("coarse channel missing");

    ModelParams params = build_model(mcfg, tcfg.seed);
    if (fine && tcfg.zero_residual_init) {
        auto& hw = params.at("head.w").data;
        std::fill(hw.begin(), hw.end(), 0.0f);
        auto& hb = params.at("head.b").data;
        std::fill(hb.begin(), hb.end(), 0.0f);
    }

    AdamState adam;
    StageResult result;
    TrainHistory& history = result.history;
    ModelParams best = params;
    double best_rmse = 0.0;
    int best_epoch = -1;

    const int n_train = static_cast<int>(train_cache.size());
    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, tcfg.epochs, tcfg.base_lr);
        adam.lr = lr;
        Rng shuffle_rng(seed_for(tcfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng aug_rng(seed_for(tcfg.seed, "augment", static_cast<std::uint64_t>(epoch)));

        double loss_acc = 0.0;
        for (int begin = 0; begin < n_train; begin += tcfg.batch_size) {
            const int end = std::min(n_train, begin + tcfg.batch_size);
            std::vector<FeatureStack> aug_stacks;
            std::vector<Grid> aug_targets;
            for (int j = begin; j < end; ++j) {
                const CachedSample& s = train_cache[static_cast<std::size_t>(
                    order[static_cast<std::size_t>(j)])];
                if (tcfg.augment) {
                    auto [fs, tg] = augment_sample(s.stack, s.target_norm, aug_rng);
                    aug_stacks.push_back(std::move(fs));
                    aug_targets.push_back(std::move(tg));
                } else {
                    aug_stacks.push_back(s.stack);
                    aug_targets.push_back(s.target_norm);
                }
            }
            std::vector<const FeatureStack*> stacks;
            std::vector<const Grid*> targets;
            std::vector<const Grid*> coarse_maps;
            for (std::size_t j = 0; j < aug_stacks.size(); ++j) {
                stacks.push_back(&aug_stacks[j]);
                targets.push_back(&aug_targets[j]);
                if (fine) {
                    coarse_maps.push_back(
                        &aug_stacks[j].channel(static_cast<std::size_t>(coarse_channel)));
                }
            }

            Tape tape;
            const auto nodes = track_params(tape, params, true);
            const int input = tape.track(batch_features(stacks), false);
            int pred = model_forward(tape, mcfg, nodes, params, input);
            if (fine) {
                const int coarse_node = tape.track(batch_grids(coarse_maps), false);
                pred = combine_residual(tape, coarse_node, pred);
            }
            const int loss = tape.mse_loss(pred, batch_grids(targets));
            tape.backward(loss);

            std::vector<Tensor*> param_ptrs;
            std::vector<const Tensor*> grad_ptrs;
            for (std::size_t i = 0; i < params.size(); ++i) {
                param_ptrs.push_back(&params.tensors[i]);
                grad_ptrs.push_back(&tape.grad(nodes[i]));
            }
            adam_step(param_ptrs, grad_ptrs, adam);
            loss_acc +=
                static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(end - begin);
        }

        double sq_sum = 0.0;
        std::int64_t px = 0;
        for (const auto& v : val_cache) {
            const Grid pred_norm =
                predict_norm_cached(params, mcfg, v.stack, fine, coarse_channel);
            const Grid pred_db = denormalize(pred_norm, data.norm);
            for (std::size_t i = 0; i < pred_db.data().size(); ++i) {
                const double d = static_cast<double>(pred_db.data()[i]) -
                                 static_cast<double>(v.target_db->data()[i]);
                sq_sum += d * d;
            }
            px += static_cast<std::int64_t>(pred_db.data().size());
        }
        const double val_rmse = std::sqrt(sq_sum / static_cast<double>(px));

        history.train_loss.push_back(loss_acc / static_cast<double>(n_train));
        history.val_rmse_db.push_back(val_rmse);
        history.lr.push_back(lr);
        if (best_epoch < 0 || val_rmse < best_rmse) {
            best_rmse = val_rmse;
            best_epoch = epoch;
            best = params;
        }
        log_info("epoch " + std::to_string(epoch) + ": loss " +
                 std::to_string(history.train_loss.back()) + ", val rmse " +
                 std::to_string(val_rmse) + " dB");
    }

    history.best_epoch = best_epoch;
    history.best_val_rmse_db = best_rmse;
    result.params = std::move(best);
    return result;
}

TwoStageResult train_two_stage(const TrainDataset& data, const ModelConfig& coarse_cfg,
                               const ModelConfig& fine_cfg, const FeatureConfig& fcfg,
                               const TrainConfig& coarse_tcfg, const TrainConfig& fine_tcfg) {
    TrainConfig c1 = coarse_tcfg;
    c1.stage = TrainStage::Coarse;
    StageResult s1 = train_stage(data, coarse_cfg, fcfg, c1);

    TrainConfig c2 = fine_tcfg;
    c2.stage = TrainStage::Fine;
    StageResult s2 = train_stage(data, fine_cfg, fcfg, c2, &s1.params, &coarse_cfg);

    TwoStageResult out;
    out.coarse = std::move(s1.params);
    out.coarse_history = std::move(s1.history);
    out.fine = std::move(s2.params);
    out.fine_history = std::move(s2.history);
    return out;
}

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,lr,train_loss,val_rmse_db\n";
    char buf[160];
    for (std::size_t i = 0; i < history.train_loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, history.lr[i],
                      history.train_loss[i], history.val_rmse_db[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "# best_epoch=%d best_val_rmse_db=%.17g\n",
                  history.best_epoch, history.best_val_rmse_db);
    out << buf;
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace radiomap
