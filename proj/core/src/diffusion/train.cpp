#include "latref/diffusion/train.hpp"

#include <cmath>

#include "latref/nn/adam.hpp"

namespace latref::diffusion {

Tensor gather_rows(const Tensor& pool, const std::vector<int>& ids) {
    std::vector<int> shape = pool.shape();
    shape[0] = static_cast<int>(ids.size());
    Tensor out(shape);
    const int64_t per = pool.numel() / pool.dim(0);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(pool.data() + static_cast<int64_t>(ids[i]) * per, per,
                    out.data() + static_cast<int64_t>(i) * per);
    return out;
}

float latent_std(const Tensor& pool) {
    const double m = mean(pool);
    double var = 0.0;
    for (int64_t i = 0; i < pool.numel(); ++i) {
        const double d = pool[i] - m;
        var += d * d;
    }
    return static_cast<float>(std::sqrt(var / static_cast<double>(pool.numel())));
}

DiffusionTrainResult train_diffusion(const LatentPairs& pairs, const DiffusionConfig& cfg,
                                     uint64_t seed) {
    if (pairs.count() == 0) throw Error("training", "empty latent pair pool");
    if (!pairs.z0.same_shape(pairs.z_d))
        throw Error("training", "latent pair pools must be aligned");

    DiffusionTrainResult res;
    res.sigma_data = std::max(latent_std(pairs.z0), 1e-3f);
    res.sigma_max = cfg.sigma_max > 0.0f ? cfg.sigma_max : 3.0f * res.sigma_data;
    if (res.sigma_max <= cfg.sigma_min)
        throw Error("training", "resolved sigma_max does not exceed sigma_min");

    ScoreNetConfig net_cfg;
    net_cfg.d = pairs.z0.dim(1);
    net_cfg.width = cfg.width;
    net_cfg.levels = cfg.levels;
    net_cfg.emb_dim = cfg.emb_dim;
    net_cfg.sigma_data = res.sigma_data;
    res.net = ScoreNetwork(net_cfg);

    Rng init_rng(mix_seed(seed, 0x41));
    res.net.init(init_rng);

    nn::ParamRefs params;
    res.net.collect(params);
    nn::Adam opt(cfg.lr);
    nn::EmaWeights ema(0.999f);
    Rng data_rng(mix_seed(seed, 0x42));

    const int batch = std::min(cfg.batch, pairs.count());
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> ids(static_cast<size_t>(batch));
        for (auto& id : ids) id = data_rng.uniform_int(0, pairs.count() - 1);
        DsmBatch b = make_dsm_batch(gather_rows(pairs.z0, ids), gather_rows(pairs.z_d, ids),
                                    cfg.sigma_min, res.sigma_max, data_rng);
        nn::zero_grads(params);
        ScoreNetCtx ctx;
        Tensor gD;
        res.loss.push_back(dsm_loss_training(res.net, b, ctx, gD));
        res.net.backward(ctx, gD);
        opt.set_lr(nn::cosine_lr(cfg.lr, step, cfg.steps));
        opt.step(params);
        ema.update(params);

        if ((step + 1) % 50 == 0 || step + 1 == cfg.steps) {
            if (!nn::params_finite(params))
                throw Error("training", "NaN in weights at step " + std::to_string(step + 1));
        }
    }
    ema.copy_to(params);  // evaluate with the averaged weights
    return res;
}

}  // namespace latref::diffusion
