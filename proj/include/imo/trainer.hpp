#pragma once

#include <cstdio>

#include "imo/config.hpp"
#include "imo/metrics.hpp"
#include "imo/model.hpp"
#include "imo/phantom.hpp"

namespace imo {

inline ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig m;
    m.image_size = cfg.image_size;
    m.fused_channels = cfg.fused_channels;
    m.cmfa_reduction = cfg.cmfa_reduction;
    m.se_reduction = cfg.se_reduction;
    m.eps.cond_channels = cfg.fused_channels;
    m.eps.cond_proj = cfg.eps_cond_channels;
    m.eps.skip1_channels = 16;
    m.eps.skip2_channels = 32;
    m.eps.w0 = cfg.eps_w0;
    m.eps.w1 = cfg.eps_w1;
    m.eps.w2 = cfg.eps_w2;
    m.eps.temb_dim = cfg.temb_dim;
    m.no_oct = cfg.no_oct;
    m.no_grading = cfg.no_grading;
    m.no_segmentation = cfg.no_segmentation;
    m.no_cmfa = cfg.no_cmfa;
    m.no_ird = cfg.no_ird;
    return m;
}

// Sub-seed streams derived from the root seed; keeps the split reproducible
// without replaying the init or training draw sequences.
enum class SeedStream : std::uint64_t { Init = 1, Split = 2, Train = 3, Eval = 4 };

inline std::uint64_t sub_seed(std::uint64_t root, SeedStream s) {
    return mix_seed(root, static_cast<std::uint64_t>(s));
}

// 1 - mean_k (2 sum q y + e) / (sum q + sum y + e) with q = sigmoid(latent)
template <typename T>
Tensor<T> soft_dice_loss(Tape<T>& tape, const Tensor<T>& latent, const Tensor<T>& onehot) {
    require_same_shape(latent, onehot, "soft_dice_loss");
    const int k = latent.dim(0);
    Tensor<T> q = sigmoid(tape, latent);
    const T eps_term = T(1e-6);
    Tensor<T> acc;
    for (int c = 0; c < k; ++c) {
        Tensor<T> qc = channel_slice(tape, q, c);
        Tensor<T> yc = channel_slice(tape, onehot, c);
        Tensor<T> inter = sum(tape, mul(tape, qc, yc));
        Tensor<T> denom = add(tape, sum(tape, qc), sum(tape, yc));
        Tensor<T> num = add(tape, scale(tape, inter, T(2)), Tensor<T>::scalar(eps_term));
        Tensor<T> den = add(tape, denom, Tensor<T>::scalar(eps_term));
        Tensor<T> ratio = mul(tape, num, reciprocal(tape, den));
        acc = acc.defined() ? add(tape, acc, ratio) : ratio;
    }
    return sub(tape, Tensor<T>::scalar(T(1)), scale(tape, acc, T(1) / static_cast<T>(k)));
}

// -log p[label] on already-normalized probabilities
template <typename T>
Tensor<T> cross_entropy_probs(Tape<T>& tape, const Tensor<T>& probs, int label) {
    if (label < 0 || label >= static_cast<int>(probs.size()))
        throw ValidationError("cross_entropy_probs: label " + std::to_string(label) +
                              " out of range");
    return scale(tape, log(tape, pick(tape, probs, static_cast<std::size_t>(label))), T(-1));
}

template <typename T>
using EpsOracle = std::function<Tensor<T>(Tape<T>&, const Tensor<T>& xt, int t,
                                          const Tensor<T>& true_eps)>;

template <typename T>
struct JointLossResult {
    Tensor<T> total;  // scalar on the tape
    double total_value = 0, diff = 0, x0 = 0, cls = 0;
};

// L = l_diff * MSE(eps, eps_hat) + l_x0 * softDice(sigmoid(x0_hat), onehot)
//   + l_cls * CE(probs, grade), means over the batch. Ablated branches are
//   skipped and report 0. Draw order per sample: t, then the noise values in
//   row-major order. The no-IRD arm replaces the noise MSE by an MSE between
//   the single-pass output and the clean latent.
template <typename T>
JointLossResult<T> joint_loss(Tape<T>& tape, ImoModel<T>& model, const NoiseSchedule& sched,
                              const std::vector<PhantomSample<T>>& batch, const RunConfig& cfg,
                              Rng& rng, bool training = true,
                              const EpsOracle<T>* eps_override = nullptr) {
    if (batch.empty()) throw ValidationError("joint_loss: empty batch");
    if (cfg.no_grading && cfg.no_segmentation)
        throw ValidationError("joint_loss: both branches disabled, nothing to train");

    std::vector<Tensor<T>> imgs, vols;
    for (const auto& s : batch) {
        imgs.push_back(s.fundus);
        if (!cfg.no_oct) vols.push_back(s.oct);
    }
    auto feats = model.forward_features(tape, imgs, vols, training);

    Tensor<T> diff_sum, dice_sum, cls_sum;
    auto accumulate = [&tape](Tensor<T>& acc, const Tensor<T>& v) {
        acc = acc.defined() ? add(tape, acc, v) : v;
    };

    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!cfg.no_segmentation) {
            Tensor<T> x0_latent = encode_mask_latent(batch[i].mask);
            Tensor<T> x0_hat;
            if (cfg.no_ird) {
                Tensor<T> pred = model.single_pass_latent(tape, feats[i], sched.steps);
                accumulate(diff_sum, mse(tape, pred, x0_latent));
                x0_hat = pred;
            } else {
                const int t = rng.uniform_int(1, sched.steps);
                Tensor<T> eps_true(x0_latent.shape());
                for (auto& v : eps_true.values()) v = static_cast<T>(rng.normal());
                Tensor<T> xt = forward_noise(tape, x0_latent, t, eps_true, sched);
                Tensor<T> eps_hat = eps_override
                                        ? (*eps_override)(tape, xt, t, eps_true)
                                        : model.predict_eps(tape, xt, t, feats[i]);
                accumulate(diff_sum, mse(tape, eps_true, eps_hat));
                x0_hat = predict_x0(tape, xt, t, eps_hat, sched);
            }
            accumulate(dice_sum, soft_dice_loss(tape, x0_hat, encode_mask_onehot(batch[i].mask)));
        }
        if (!cfg.no_grading)
            accumulate(cls_sum, cross_entropy_probs<T>(tape, feats[i].probs, batch[i].grade));
    }

    const T inv_b = T(1) / static_cast<T>(batch.size());
    JointLossResult<T> r;
    Tensor<T> total;
    auto add_part = [&](Tensor<T>& part_sum, double lambda, double& out_value) {
        if (!part_sum.defined()) return;
        Tensor<T> m = scale(tape, part_sum, inv_b);
        out_value = static_cast<double>(m.item());
        Tensor<T> weighted = scale(tape, m, static_cast<T>(lambda));
        total = total.defined() ? add(tape, total, weighted) : weighted;
    };
    add_part(diff_sum, cfg.lambda_diff, r.diff);
    add_part(dice_sum, cfg.lambda_x0, r.x0);
    add_part(cls_sum, cfg.lambda_cls, r.cls);
    r.total = total;
    r.total_value = static_cast<double>(total.item());
    return r;
}

// v <- mu v + g; p <- p - lr v
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(ParamRegistry<T>& reg, T lr, T momentum = T(0.9))
        : reg_(&reg), lr_(lr), mu_(momentum) {
        for (const auto& e : reg.entries())
            vel_.push_back(e.learnable ? std::vector<T>(e.tensor->size(), T(0))
                                       : std::vector<T>());
    }

    void step() {
        const auto& entries = reg_->entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (!entries[i].learnable) continue;
            auto g = entries[i].tensor->grad();
            auto p = entries[i].tensor->values();
            auto& v = vel_[i];
            for (std::size_t j = 0; j < v.size(); ++j) {
                v[j] = mu_ * v[j] + g[j];
                p[j] -= lr_ * v[j];
            }
        }
    }

private:
    ParamRegistry<T>* reg_;
    std::vector<std::vector<T>> vel_;
    T lr_, mu_;
};

struct TrainRecord {
    int step;
    double total, diff, x0, cls;
};

// Training loop: per step the rng draws batch indices (with replacement),
// then joint_loss draws each sample's timestep and noise.
template <typename T>
class Trainer {
public:
    Trainer(ImoModel<T>& model, const RunConfig& cfg)
        : model_(&model),
          cfg_(cfg),
          sched_(NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)),
          rng_(sub_seed(cfg.seed, SeedStream::Train)),
          opt_(model.params(), static_cast<T>(cfg.lr)) {}

    const NoiseSchedule& schedule() const { return sched_; }
    const std::vector<TrainRecord>& history() const { return history_; }

    TrainRecord step(const std::vector<PhantomSample<T>>& data) {
        if (data.empty()) throw ValidationError("train: empty dataset");
        std::vector<PhantomSample<T>> batch;
        for (int b = 0; b < cfg_.batch_size; ++b)
            batch.push_back(data[static_cast<std::size_t>(
                rng_.uniform_int(0, static_cast<int>(data.size()) - 1))]);
        Tape<T> tape;
        auto loss = joint_loss(tape, *model_, sched_, batch, cfg_, rng_, true);
        tape.backward(loss.total);
        if (!std::isfinite(loss.total_value)) {
            for (const auto& e : model_->params().entries()) {
                if (!e.learnable) continue;
                for (T g : e.tensor->grad())
                    if (!std::isfinite(static_cast<double>(g)))
                        throw ValidationError("train: non-finite loss at step " +
                                              std::to_string(step_) +
                                              "; first non-finite gradient in '" + e.name + "'");
            }
            throw ValidationError("train: non-finite loss at step " + std::to_string(step_));
        }
        opt_.step();
        model_->params().zero_grad();
        TrainRecord rec{step_, loss.total_value, loss.diff, loss.x0, loss.cls};
        history_.push_back(rec);
        ++step_;
        return rec;
    }

    void run(const std::vector<PhantomSample<T>>& data) {
        for (int s = 0; s < cfg_.max_steps; ++s) step(data);
    }

    std::string history_csv() const {
        std::string out = "step,total,diff,x0,cls\n";
        char buf[160];
        for (const auto& r : history_) {
            std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.total, r.diff,
                          r.x0, r.cls);
            out += buf;
        }
        return out;
    }

private:
    ImoModel<T>* model_;
    RunConfig cfg_;
    NoiseSchedule sched_;
    Rng rng_;
    SgdMomentum<T> opt_;
    std::vector<TrainRecord> history_;
    int step_ = 0;
};

// Segmentation scores are per-image per-class Dice averaged over samples
// (both-empty counts as 1); grading metrics are macro-averaged.
template <typename T>
MetricsReport evaluate(ImoModel<T>& model, const NoiseSchedule& sched,
                       const std::vector<PhantomSample<T>>& samples, const RunConfig& cfg,
                       std::uint64_t eval_seed) {
    if (samples.empty()) throw ValidationError("evaluate: empty sample set");
    MetricsReport r;
    r.has_dice = !cfg.no_segmentation;
    r.has_cls = !cfg.no_grading;
    std::vector<int> grade_pred, grade_true;
    double dsum[3] = {0, 0, 0};

    for (std::size_t base = 0; base < samples.size(); base += cfg.batch_size) {
        const std::size_t end = std::min(samples.size(), base + cfg.batch_size);
        std::vector<Tensor<T>> imgs, vols;
        for (std::size_t i = base; i < end; ++i) {
            imgs.push_back(samples[i].fundus);
            if (!cfg.no_oct) vols.push_back(samples[i].oct);
        }
        Tape<T> tape(false);
        auto feats = model.forward_features(tape, imgs, vols, false);
        for (std::size_t i = base; i < end; ++i) {
            const auto& f = feats[i - base];
            if (!cfg.no_segmentation) {
                Tensor<T> labels;
                if (cfg.no_ird) {
                    Tape<T> t2(false);
                    labels = decode_mask_latent(model.single_pass_latent(t2, f, sched.steps));
                } else {
                    labels = sample_mask(model, f, sched, cfg.sample_steps,
                                         mix_seed(eval_seed, i))
                                 .second;
                }
                auto pred = labels_of(labels);
                auto truth = labels_of(samples[i].mask);
                for (int k = 0; k < 3; ++k) dsum[k] += dice_score(pred, truth, k);
            }
            if (!cfg.no_grading) {
                auto pv = f.probs.values();
                int best = 0;
                for (int k = 1; k < 3; ++k)
                    if (pv[k] > pv[best]) best = k;
                grade_pred.push_back(best);
                grade_true.push_back(samples[i].grade);
            }
        }
    }

    if (r.has_cls) {
        MetricsReport c = classification_metrics(grade_pred, grade_true);
        r.precision = c.precision;
        r.accuracy = c.accuracy;
        r.recall = c.recall;
        r.f1 = c.f1;
        r.confusion = c.confusion;
    }
    if (r.has_dice) {
        const double n = static_cast<double>(samples.size());
        r.dice_unlabel = dsum[0] / n;
        r.dice_disc = dsum[1] / n;
        r.dice_cup = dsum[2] / n;
        r.mdice = (r.dice_unlabel + r.dice_disc + r.dice_cup) / 3.0;
    }
    return r;
}

struct AblationRow {
    std::string name;
    MetricsReport report;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

// Six arms sharing one root seed: every arm re-derives the same initial
// weights, split, and draw streams, so a rerun is byte-identical.
template <typename T>
std::vector<AblationRow> run_ablation_grid(const RunConfig& base,
                                           const std::vector<PhantomSample<T>>& dataset) {
    struct Arm {
        const char* name;
        bool RunConfig::* flag;
    };
    const Arm arms[] = {
        {"full", nullptr},
        {"w/o OCT", &RunConfig::no_oct},
        {"w/o Grd.", &RunConfig::no_grading},
        {"w/o Seg.", &RunConfig::no_segmentation},
        {"w/o CMFA", &RunConfig::no_cmfa},
        {"w/o IRD", &RunConfig::no_ird},
    };
    auto [train_idx, test_idx] =
        split_dataset(static_cast<int>(dataset.size()), base.split_fraction,
                      sub_seed(base.seed, SeedStream::Split));
    std::vector<PhantomSample<T>> train_set, test_set;
    for (int i : train_idx) train_set.push_back(dataset[i]);
    for (int i : test_idx) test_set.push_back(dataset[i]);

    std::vector<AblationRow> rows;
    for (const auto& arm : arms) {
        RunConfig cfg = base;
        cfg.no_oct = cfg.no_grading = cfg.no_segmentation = cfg.no_cmfa = cfg.no_ird = false;
        if (arm.flag) cfg.*(arm.flag) = true;
        Rng init_rng(sub_seed(cfg.seed, SeedStream::Init));
        ImoModel<T> model(init_rng, model_config_from(cfg));
        Trainer<T> trainer(model, cfg);
        trainer.run(train_set);
        MetricsReport rep = evaluate(model, trainer.schedule(), test_set, cfg,
                                     sub_seed(cfg.seed, SeedStream::Eval));
        rows.push_back({arm.name, rep});
    }
    return rows;
}

}  // namespace imo
