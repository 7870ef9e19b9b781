#pragma once

#include <functional>
#include <string>
#include <vector>

#include "imo/phantom.hpp"

namespace imo {

// One flat configuration for data generation, model shape, schedule, and
// training; parsed from plain key=value text ('#' comments). Unknown keys
// are rejected.
struct RunConfig {
    // phantom data
    int image_size = 64;
    int volume_d = 16, volume_h = 32, volume_w = 32;
    double disc_r_min = 0.15, disc_r_max = 0.30;
    double cdr_min = 0.2, cdr_max = 0.95;
    double noise_amp = 0.1;
    double grade_t1 = 0.5, grade_t2 = 0.7;

    // model
    int fused_channels = 64;
    int cmfa_reduction = 4;
    int se_reduction = 4;
    int eps_w0 = 12, eps_w1 = 16, eps_w2 = 24;
    int eps_cond_channels = 16;
    int temb_dim = 64;

    // diffusion schedule
    int diffusion_steps = 100;
    double beta_start = 1e-4, beta_end = 0.02;
    int sample_steps = 5;

    // training
    double lr = 1e-4;
    int batch_size = 4;
    int max_steps = 2000;
    double lambda_diff = 1.0, lambda_cls = 1.0, lambda_x0 = 0.5;
    double split_fraction = 0.8;
    std::uint64_t seed = 1;
    bool no_oct = false, no_grading = false, no_segmentation = false, no_cmfa = false,
         no_ird = false;

    // paths (usually given as CLI flags)
    std::string data_dir, out_dir, ckpt_path;

    PhantomConfig phantom() const;
    void validate() const;
    std::string dump() const;
    void set_kv(const std::string& key, const std::string& value);

    static RunConfig parse_text(const std::string& text);
    static RunConfig parse_file(const std::string& path);
};

struct ConfigKey {
    const char* key;
    const char* help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

}  // namespace imo
