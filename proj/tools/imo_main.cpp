// imo: phantom data generation, training, evaluation, DDIM segmentation,
// ablation grid, and gradient verification in one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "imo/checkpoint.hpp"
#include "imo/dataset.hpp"
#include "imo/trainer.hpp"
#include "imo/verify.hpp"

namespace fs = std::filesystem;
using imo::RunConfig;

namespace {

void write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
        if (!os) throw imo::FileError("cannot write " + tmp);
        os << text;
    }
    fs::rename(tmp, path);
}

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;

    RunConfig load() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::parse_file(config_path);
        if (seed_set) cfg.seed = seed;
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonFlags& c) {
    cmd->add_option("--config", c.config_path, "key=value config file");
    cmd->add_option("--seed", c.seed, "root seed override")->each([&](const std::string&) {
        c.seed_set = true;
    });
}

std::string config_help() {
    std::string out = "config keys (key=value file, defaults shown):\n";
    RunConfig defaults;
    for (const auto& k : imo::config_keys()) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-18s %s [%s]\n", k.key, k.help,
                      k.get(defaults).c_str());
        out += buf;
    }
    return out;
}

// shared split derivation so train/eval agree on membership
std::vector<imo::PhantomSample<float>> select_split(std::vector<imo::PhantomSample<float>> all,
                                                    const RunConfig& cfg,
                                                    const std::string& which) {
    if (which == "all") return all;
    auto [train_idx, test_idx] = imo::split_dataset(
        static_cast<int>(all.size()), cfg.split_fraction,
        imo::sub_seed(cfg.seed, imo::SeedStream::Split));
    std::vector<imo::PhantomSample<float>> out;
    for (int i : which == "train" ? train_idx : test_idx) out.push_back(std::move(all[i]));
    return out;
}

int cmd_gen_data(const CommonFlags& common, int n, const std::string& out_dir, int image_size,
                 const std::string& volume_size) {
    RunConfig cfg = common.load();
    if (image_size > 0) {
        cfg.image_size = image_size;
        cfg.volume_h = cfg.volume_w = image_size / 2;
        cfg.volume_d = image_size / 4;
    }
    if (!volume_size.empty()) {
        int d = 0, h = 0, w = 0;
        if (std::sscanf(volume_size.c_str(), "%dx%dx%d", &d, &h, &w) != 3)
            throw imo::ConfigError("--volume-size must look like DxHxW");
        cfg.volume_d = d;
        cfg.volume_h = h;
        cfg.volume_w = w;
    }
    cfg.validate();
    if (n < 1) throw imo::ValidationError("gen-data: --n must be >= 1");
    const imo::PhantomConfig pc = cfg.phantom();
    for (int i = 0; i < n; ++i) {
        auto s = imo::generate_sample<float>(pc, i);
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05d", i);
        imo::write_sample_dir(out_dir + "/" + name, s);
    }
    std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
    return 0;
}

int cmd_train(const CommonFlags& common, const std::string& data_dir, const std::string& ckpt,
              int steps, const std::string& out_dir) {
    RunConfig cfg = common.load();
    if (steps >= 0) cfg.max_steps = steps;
    cfg.validate();
    auto data = imo::load_dataset<float>(data_dir);
    auto train_set = select_split(std::move(data), cfg, "train");
    imo::Rng init(imo::sub_seed(cfg.seed, imo::SeedStream::Init));
    imo::ImoModel<float> model(init, imo::model_config_from(cfg));
    imo::Trainer<float> trainer(model, cfg);
    trainer.run(train_set);
    imo::save_checkpoint(ckpt, model.params());
    const std::string hist_path =
        out_dir.empty() ? ckpt + ".history.csv" : out_dir + "/history.csv";
    if (!out_dir.empty()) fs::create_directories(out_dir);
    write_text(hist_path, trainer.history_csv());
    const auto& h = trainer.history();
    std::printf("trained %zu steps on %zu samples; final loss %.6f\n", h.size(),
                train_set.size(), h.empty() ? 0.0 : h.back().total);
    std::printf("checkpoint: %s\nhistory: %s\n", ckpt.c_str(), hist_path.c_str());
    return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& data_dir, const std::string& ckpt,
             const std::string& split) {
    RunConfig cfg = common.load();
    cfg.validate();
    auto samples = select_split(imo::load_dataset<float>(data_dir), cfg, split);
    imo::Rng init(imo::sub_seed(cfg.seed, imo::SeedStream::Init));
    imo::ImoModel<float> model(init, imo::model_config_from(cfg));
    imo::load_checkpoint(ckpt, model.params());
    imo::NoiseSchedule sched =
        imo::NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
    imo::MetricsReport rep =
        imo::evaluate(model, sched, samples, cfg, imo::sub_seed(cfg.seed, imo::SeedStream::Eval));
    std::fputs(rep.to_kv().c_str(), stdout);
    return 0;
}

int cmd_segment(const CommonFlags& common, const std::string& input_dir, const std::string& ckpt,
                int steps, const std::string& out_dir) {
    RunConfig cfg = common.load();
    if (steps > 0) cfg.sample_steps = steps;
    cfg.validate();
    imo::Rng init(imo::sub_seed(cfg.seed, imo::SeedStream::Init));
    imo::ImoModel<float> model(init, imo::model_config_from(cfg));
    imo::load_checkpoint(ckpt, model.params());
    imo::NoiseSchedule sched =
        imo::NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
    fs::create_directories(out_dir);

    std::string report;
    double msum = 0;
    int mcount = 0;
    const auto dirs = imo::list_sample_dirs(input_dir);
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        auto s = imo::read_sample_dir<float>(dirs[i]);
        std::vector<imo::Tensor<float>> vols;
        if (!cfg.no_oct) vols.push_back(s.oct);
        imo::Tape<float> tape(false);
        auto feats = model.forward_features(tape, {s.fundus}, vols, false);
        imo::Tensor<float> labels;
        if (cfg.no_ird) {
            imo::Tape<float> t2(false);
            labels = imo::decode_mask_latent(model.single_pass_latent(t2, feats[0], sched.steps));
        } else {
            labels = imo::sample_mask(model, feats[0], sched, cfg.sample_steps,
                                      imo::mix_seed(cfg.seed, i))
                         .second;
        }
        const std::string name = fs::path(dirs[i]).filename().string();
        imo::write_array(out_dir + "/" + name + "_pred.imoa", labels);
        if (s.mask.defined()) {
            auto pred = imo::labels_of(labels);
            auto truth = imo::labels_of(s.mask);
            const double d0 = imo::dice_score(pred, truth, 0);
            const double d1 = imo::dice_score(pred, truth, 1);
            const double d2 = imo::dice_score(pred, truth, 2);
            const double md = (d0 + d1 + d2) / 3.0;
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "%s dice_unlabel=%.4f dice_disc=%.4f dice_cup=%.4f mdice=%.4f\n",
                          name.c_str(), d0, d1, d2, md);
            report += buf;
            msum += md;
            ++mcount;
        }
    }
    if (mcount > 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "mean_mdice=%.4f over %d images\n", msum / mcount, mcount);
        report += buf;
        write_text(out_dir + "/dice_report.txt", report);
        std::fputs(report.c_str(), stdout);
    }
    std::printf("wrote %zu predictions to %s\n", dirs.size(), out_dir.c_str());
    return 0;
}

int cmd_ablate(const CommonFlags& common, const std::string& data_dir,
               const std::string& out_dir) {
    RunConfig cfg = common.load();
    cfg.validate();
    auto data = imo::load_dataset<float>(data_dir);
    auto rows = imo::run_ablation_grid(cfg, data);
    fs::create_directories(out_dir);
    write_text(out_dir + "/ablation.csv", imo::ablation_csv(rows));
    const std::string table = imo::ablation_table(rows);
    write_text(out_dir + "/ablation.txt", table);
    std::fputs(table.c_str(), stdout);
    const auto& full = rows[0].report;
    const auto& wo_cmfa = rows[4].report;
    std::printf("directional: full mdice %.4f vs w/o CMFA %.4f (%s)\n", full.mdice, wo_cmfa.mdice,
                full.mdice >= wo_cmfa.mdice ? "full >= w/o CMFA" : "inverted at toy scale");
    return 0;
}

int cmd_gradcheck(int seeds) {
    auto results = imo::run_gradient_suite(seeds);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-20s %.3e %s\n", r.name.c_str(), r.max_rel_err,
                    r.max_rel_err < 1e-5 ? "ok" : "FAIL");
        ok = ok && r.max_rel_err < 1e-5;
    }
    std::printf("%s\n", ok ? "all blocks < 1e-5" : "gradient check failed");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imo: joint optic disc/cup segmentation and glaucoma grading on phantom data"};
    app.require_subcommand(1);
    app.footer(config_help());

    CommonFlags cf_gen, cf_train, cf_eval, cf_seg, cf_abl;

    auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
    int gen_n = 0, gen_img = 0;
    std::string gen_out, gen_vol;
    gen->add_option("--n", gen_n, "number of samples")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--image-size", gen_img, "fundus side length (scales the OCT grid)");
    gen->add_option("--volume-size", gen_vol, "OCT volume as DxHxW");
    add_common(gen, cf_gen);

    auto* train = app.add_subcommand("train", "train on a phantom dataset");
    std::string train_data, train_ckpt, train_out;
    int train_steps = -1;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--ckpt", train_ckpt, "checkpoint output path")->required();
    train->add_option("--steps", train_steps, "training steps override");
    train->add_option("--out", train_out, "directory for the loss history CSV");
    add_common(train, cf_train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_data, eval_ckpt, eval_split = "test";
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--split", eval_split, "train|test|all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    add_common(eval, cf_eval);

    auto* seg = app.add_subcommand("segment", "write predicted label maps");
    std::string seg_in, seg_ckpt, seg_out;
    int seg_steps = 0;
    seg->add_option("--input", seg_in, "input directory of samples")->required();
    seg->add_option("--ckpt", seg_ckpt, "checkpoint path")->required();
    seg->add_option("--steps", seg_steps, "DDIM steps");
    seg->add_option("--out", seg_out, "output directory")->required();
    add_common(seg, cf_seg);

    auto* abl = app.add_subcommand("ablate", "run the six-arm ablation grid");
    std::string abl_data, abl_out;
    abl->add_option("--data", abl_data, "dataset directory")->required();
    abl->add_option("--out", abl_out, "output directory")->required();
    add_common(abl, cf_abl);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suite");
    int gc_seeds = 20;
    gc->add_option("--seeds", gc_seeds, "random seeds per block");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(cf_gen, gen_n, gen_out, gen_img, gen_vol);
        if (train->parsed())
            return cmd_train(cf_train, train_data, train_ckpt, train_steps, train_out);
        if (eval->parsed()) return cmd_eval(cf_eval, eval_data, eval_ckpt, eval_split);
        if (seg->parsed()) return cmd_segment(cf_seg, seg_in, seg_ckpt, seg_steps, seg_out);
        if (abl->parsed()) return cmd_ablate(cf_abl, abl_data, abl_out);
        if (gc->parsed()) return cmd_gradcheck(gc_seeds);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const imo::FileError& e) {
        std::fprintf(stderr, "error: file: %s\n", e.what());
        return 2;
    } catch (const imo::ConfigError& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 3;
    } catch (const imo::FormatError& e) {
        std::fprintf(stderr, "error: format: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
