#pragma once

#include "imo/cmfa.hpp"
#include "imo/diffusion.hpp"
#include "imo/encoders.hpp"
#include "imo/grading.hpp"

namespace imo {

struct ModelConfig {
    int image_size = 64;
    int fused_channels = 64;
    int cmfa_reduction = 4;
    int se_reduction = 4;
    EpsNetConfig eps;
    bool no_oct = false, no_grading = false, no_segmentation = false, no_cmfa = false,
         no_ird = false;
};

// Dual encoders, fusion, the noise-prediction decoder, and the grading head,
// with one flat name->tensor registry for the optimizer and checkpoints. All
// submodules are constructed regardless of ablation flags so every arm draws
// identical initial weights; the flags only select which paths run.
template <typename T>
class ImoModel {
public:
    ModelConfig cfg;
    FundusEncoder<T> fundus;
    OctEncoder<T> oct;
    Cmfa<T> cmfa;
    ConcatFusion<T> concat_fuse;
    EpsNet<T> eps;
    GradingHead<T> grading;

    ImoModel(Rng& rng, const ModelConfig& c)
        : cfg(c),
          fundus(rng, c.fused_channels),
          oct(rng, c.fused_channels),
          cmfa(rng, c.fused_channels, c.cmfa_reduction),
          concat_fuse(rng, c.fused_channels),
          eps(rng, c.eps),
          grading(rng, c.fused_channels, c.se_reduction) {
        if (c.no_oct && c.no_cmfa)
            throw ValidationError("model: no_oct and no_cmfa cannot combine (nothing to concatenate)");
        fundus.collect(reg_, "fundus");
        oct.collect(reg_, "oct");
        cmfa.collect(reg_, "cmfa");
        concat_fuse.collect(reg_, "concat_fuse");
        eps.collect(reg_, "eps");
        grading.collect(reg_, "grading");
    }
    ImoModel(const ImoModel&) = delete;
    ImoModel& operator=(const ImoModel&) = delete;

    ParamRegistry<T>& params() { return reg_; }
    const ParamRegistry<T>& params() const { return reg_; }

    struct SampleFeatures {
        Tensor<T> fused;         // [C, H/8, W/8]
        Tensor<T> skip1, skip2;  // fundus pyramid at strides 2 and 4
        Tensor<T> probs;         // [3] grade probabilities; undefined when ablated
    };

    std::vector<SampleFeatures> forward_features(Tape<T>& tape,
                                                 const std::vector<Tensor<T>>& imgs,
                                                 const std::vector<Tensor<T>>& vols,
                                                 bool training) {
        auto ff = fundus.forward(tape, imgs, training);
        std::vector<Tensor<T>> fused(imgs.size());
        if (cfg.no_oct) {
            for (std::size_t i = 0; i < imgs.size(); ++i)
                fused[i] = cmfa.forward_fundus_only(tape, ff[i].top);
        } else {
            if (vols.size() != imgs.size())
                throw ShapeError("model: batch has " + std::to_string(imgs.size()) +
                                 " images but " + std::to_string(vols.size()) + " volumes");
            auto of = oct.forward(tape, vols, training);
            for (std::size_t i = 0; i < imgs.size(); ++i) {
                if (ff[i].top.shape() != of[i].shape())
                    throw ShapeError("model: fundus top grid " + shape_str(ff[i].top.shape()) +
                                     " does not match oct grid " + shape_str(of[i].shape()));
                fused[i] = cfg.no_cmfa ? concat_fuse.forward(tape, ff[i].top, of[i])
                                       : cmfa.forward(tape, ff[i].top, of[i]);
            }
        }
        std::vector<Tensor<T>> probs;
        if (!cfg.no_grading) probs = grading.forward(tape, fused, training);
        std::vector<SampleFeatures> out(imgs.size());
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            out[i].fused = fused[i];
            out[i].skip1 = ff[i].s2;
            out[i].skip2 = ff[i].s4;
            if (!cfg.no_grading) out[i].probs = probs[i];
        }
        return out;
    }

    Tensor<T> predict_eps(Tape<T>& tape, const Tensor<T>& xt, int t,
                          const SampleFeatures& f) const {
        return eps.forward(tape, xt, t, f.fused, f.skip1, f.skip2);
    }

    Shape latent_shape() const { return {3, cfg.image_size, cfg.image_size}; }

    // single-pass decoding: one evaluation at t = T from a zero latent, the
    // output read directly as the clean latent
    Tensor<T> single_pass_latent(Tape<T>& tape, const SampleFeatures& f, int big_t) const {
        Tensor<T> zero(latent_shape());
        return eps.forward(tape, zero, big_t, f.fused, f.skip1, f.skip2);
    }

private:
    ParamRegistry<T> reg_;
};

// DDIM refinement from seeded noise down to a decoded label map.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_mask(
    const ImoModel<T>& model, const typename ImoModel<T>::SampleFeatures& f,
    const NoiseSchedule& sched, int steps, std::uint64_t seed,
    const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&, int)>* eps_override = nullptr) {
    std::function<Tensor<T>(Tape<T>&, const Tensor<T>&, int)> eps_fn =
        [&](Tape<T>& tape, const Tensor<T>& xt, int t) { return model.predict_eps(tape, xt, t, f); };
    Tensor<T> latent = ddim_sample<T>(eps_override ? *eps_override : eps_fn, model.latent_shape(),
                                      sched, steps, seed);
    Tensor<T> labels = decode_mask_latent(latent);
    return {latent, labels};
}

}  // namespace imo
