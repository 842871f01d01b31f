#include "latref/vq/train.hpp"

#include <cmath>

#include "latref/nn/adam.hpp"

namespace latref::vq {

namespace {

Tensor gather_batch(const pipeline::Corpus& corpus, const std::vector<int>& ids) {
    std::vector<Tensor> items;
    items.reserve(ids.size());
    for (int i : ids) items.push_back(corpus.images[static_cast<size_t>(i)]);
    return stack(items);
}

void init_codebook_from_latents(Codebook& cb, const Tensor& z, int K, Rng& rng) {
    const int n = z.dim(0), d = z.dim(1), h = z.dim(2), w = z.dim(3);
    const int plane = h * w;
    cb.entries = Tensor({K, d});
    for (int k = 0; k < K; ++k) {
        const int img = rng.uniform_int(0, n - 1);
        const int pos = rng.uniform_int(0, plane - 1);
        for (int c = 0; c < d; ++c)
            cb.entries.at(k, c) =
                z[(static_cast<size_t>(img) * d + c) * plane + pos] + 0.01f * rng.normalf();
    }
}

}  // namespace

double VqTrainResult::dead_code_fraction() const {
    if (usage.empty()) return 0.0;
    int64_t dead = 0;
    for (int64_t u : usage)
        if (u == 0) ++dead;
    return static_cast<double>(dead) / static_cast<double>(usage.size());
}

VqTrainResult train_vqvae(const pipeline::Corpus& corpus, const VqConfig& cfg, uint64_t seed) {
    if (corpus.size() == 0) throw Error("training", "empty corpus");
    for (const auto& img : corpus.images) check_shape(img, {3, cfg.image_size, cfg.image_size},
                                                      "train_vqvae corpus image");

    VqTrainResult res;
    res.model.cfg = cfg;
    res.model.encoder = Encoder(cfg);
    res.model.decoder = Decoder(cfg);
    res.disc = Discriminator(3, cfg.base_width);

    Rng init_rng(mix_seed(seed, 0x11));
    res.model.encoder.init(init_rng);
    res.model.decoder.init(init_rng);
    res.disc.init(init_rng);

    nn::ParamRefs ae_params;
    res.model.encoder.collect(ae_params);
    res.model.decoder.collect(ae_params);
    nn::Param codebook_param;  // optimized jointly with the autoencoder
    nn::ParamRefs disc_params;
    res.disc.collect(disc_params);

    nn::Adam ae_opt(cfg.lr);
    nn::Adam disc_opt(cfg.lr);

    Rng data_rng(mix_seed(seed, 0x22));
    std::vector<int> order(static_cast<size_t>(corpus.size()));
    for (int i = 0; i < corpus.size(); ++i) order[static_cast<size_t>(i)] = i;
    size_t cursor = order.size();

    const int batch = std::min(cfg.batch, corpus.size());
    const int64_t latent_numel =
        static_cast<int64_t>(batch) * cfg.d * cfg.latent_size() * cfg.latent_size();

    std::vector<int64_t> usage(static_cast<size_t>(cfg.codebook_size), 0);
    std::vector<int64_t> usage_since_check = usage;
    bool codebook_ready = false;
    const int steps_per_epoch = std::max(1, corpus.size() / batch);
    const int final_epoch_start = std::max(0, cfg.steps - steps_per_epoch);

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> ids(static_cast<size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            if (cursor == order.size()) {
                data_rng.shuffle(order);
                cursor = 0;
            }
            ids[static_cast<size_t>(i)] = order[cursor++];
        }
        Tensor x = gather_batch(corpus, ids);

        EncoderCtx enc_ctx;
        Tensor z = res.model.encoder.forward(x, enc_ctx);
        if (!codebook_ready) {
            init_codebook_from_latents(res.model.codebook, z, cfg.codebook_size, init_rng);
            codebook_param.value = res.model.codebook.entries;
            codebook_param.grad = Tensor(codebook_param.value.shape());
            codebook_param.name = "codebook";
            ae_params.push_back(&codebook_param);
            codebook_ready = true;
        } else {
            res.model.codebook.entries = codebook_param.value;
        }

        Tensor zq;
        std::vector<int32_t> indices;
        quantize_batch(z, res.model.codebook, zq, indices);
        for (int32_t k : indices) {
            ++usage_since_check[static_cast<size_t>(k)];
            if (step >= final_epoch_start) ++usage[static_cast<size_t>(k)];
        }

        DecoderCtx dec_ctx;
        Tensor x_rec = res.model.decoder.forward(zq, dec_ctx);  // straight-through values

        const bool adv_on = step >= cfg.disc_start && cfg.w_adv > 0.0f;
        Tensor real_logits, fake_logits;
        DiscriminatorCtx dg_ctx;
        if (adv_on) {
            real_logits = res.disc.forward(x);
            fake_logits = res.disc.forward(x_rec, dg_ctx);
        }
        LossBreakdown terms = vq_loss(x, x_rec, z, zq, adv_on ? &real_logits : nullptr,
                                      adv_on ? &fake_logits : nullptr, perceptual());
        res.log.steps.push_back(terms);

        // ---- autoencoder + codebook update
        nn::zero_grads(ae_params);

        Tensor g_img(x.shape());
        const float rec_scale = cfg.w_rec / static_cast<float>(x.numel());
        for (int64_t i = 0; i < x.numel(); ++i)
            g_img[i] = (x_rec[i] > x[i] ? rec_scale : (x_rec[i] < x[i] ? -rec_scale : 0.0f));

        if (cfg.w_perc > 0.0f) {
            PerceptualCtx pc;
            const PerceptualPyramid& phi = perceptual();
            auto f_rec = phi.features(x_rec, pc);
            auto f_ref = phi.features(x);
            std::vector<Tensor> gf(f_rec.size());
            for (size_t l = 0; l < f_rec.size(); ++l) {
                gf[l] = Tensor(f_rec[l].shape());
                const float s = cfg.w_perc / static_cast<float>(f_rec[l].numel());
                for (int64_t i = 0; i < f_rec[l].numel(); ++i)
                    gf[l][i] = f_rec[l][i] > f_ref[l][i] ? s : (f_rec[l][i] < f_ref[l][i] ? -s : 0.0f);
            }
            g_img += phi.backward(pc, gf);
        }

        if (adv_on) {
            // generator maximizes log D(x_rec)
            Tensor g_logit(fake_logits.shape());
            const float s = cfg.w_adv / static_cast<float>(fake_logits.numel());
            for (int64_t i = 0; i < fake_logits.numel(); ++i) {
                const float sig = 1.0f / (1.0f + std::exp(-fake_logits[i]));
                g_logit[i] = s * (sig - 1.0f);
            }
            g_img += res.disc.backward_input(dg_ctx, g_logit);
        }

        Tensor g_zq = res.model.decoder.backward(dec_ctx, g_img);

        // straight-through copy plus the commitment pull toward the codebook
        Tensor g_z = g_zq;
        const float commit_scale = 2.0f * cfg.w_commit / static_cast<float>(latent_numel);
        for (int64_t i = 0; i < z.numel(); ++i) g_z[i] += commit_scale * (z[i] - zq[i]);
        res.model.encoder.backward(enc_ctx, g_z);

        // codebook term moves only the entries
        const float cb_scale = 2.0f * cfg.w_codebook / static_cast<float>(latent_numel);
        const int plane = cfg.latent_size() * cfg.latent_size();
        for (int img = 0; img < batch; ++img)
            for (int p = 0; p < plane; ++p) {
                const int32_t k = indices[static_cast<size_t>(img) * plane + p];
                for (int c = 0; c < cfg.d; ++c) {
                    const float zv = z[(static_cast<size_t>(img) * cfg.d + c) * plane + p];
                    codebook_param.grad.at(k, c) +=
                        cb_scale * (codebook_param.value.at(k, c) - zv);
                }
            }

        ae_opt.step(ae_params);
        res.model.codebook.entries = codebook_param.value;

        // ---- discriminator update
        if (adv_on) {
            nn::zero_grads(disc_params);
            DiscriminatorCtx dr_ctx, df_ctx;
            Tensor lr_ = res.disc.forward(x, dr_ctx);
            Tensor lf = res.disc.forward(x_rec, df_ctx);
            double dloss = 0.0;
            Tensor g_r(lr_.shape()), g_f(lf.shape());
            const float sr = 1.0f / static_cast<float>(lr_.numel());
            for (int64_t i = 0; i < lr_.numel(); ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(lr_[i])));
                dloss += -std::log(std::max(sig, 1e-12)) * sr;
                g_r[i] = static_cast<float>((sig - 1.0) * sr);
            }
            for (int64_t i = 0; i < lf.numel(); ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(lf[i])));
                dloss += -std::log(std::max(1.0 - sig, 1e-12)) * sr;
                g_f[i] = static_cast<float>(sig * sr);
            }
            res.disc.backward(dr_ctx, g_r);
            res.disc.backward(df_ctx, g_f);
            disc_opt.step(disc_params);
            res.log.disc_loss.push_back(dloss);
        } else {
            res.log.disc_loss.push_back(0.0);
        }

        if (cfg.dead_code_reinit && (step + 1) % cfg.dead_code_patience == 0) {
            Rng reinit_rng(mix_seed(seed, 0x33, static_cast<uint64_t>(step)));
            for (int k = 0; k < cfg.codebook_size; ++k) {
                if (usage_since_check[static_cast<size_t>(k)] != 0) continue;
                const int img = reinit_rng.uniform_int(0, batch - 1);
                const int p = reinit_rng.uniform_int(0, plane - 1);
                for (int c = 0; c < cfg.d; ++c)
                    codebook_param.value.at(k, c) =
                        z[(static_cast<size_t>(img) * cfg.d + c) * plane + p];
            }
            std::fill(usage_since_check.begin(), usage_since_check.end(), 0);
            res.model.codebook.entries = codebook_param.value;
        }

        if ((step + 1) % 25 == 0 || step + 1 == cfg.steps) {
            if (!nn::params_finite(ae_params) || !nn::params_finite(disc_params))
                throw Error("training",
                            "NaN in weights at step " + std::to_string(step + 1));
        }
    }

    res.usage = usage;
    return res;
}

}  // namespace latref::vq
