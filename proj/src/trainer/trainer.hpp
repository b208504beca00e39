#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "losses/losses.hpp"
#include "networks/checkpoint.hpp"
#include "synthdata/dataset.hpp"
#include "trainer/optimizer.hpp"

namespace morphsdf {

// Two-stage autodecoder training. Stage 1 fits geometry, uv and texture
// networks plus the latent tables from surface supervision alone (images
// withheld): surface + eikonal + normal + uv + tex + landmark + reg. Stage 2
// freezes g and g-inverse bit-exactly and fine-tunes f, h and the latents
// with image supervision through the differentiable renderer: surface +
// eikonal + normal + reg + img_l2 + img_percep + silhouette. Weights fields
// outside the active stage's term set are ignored.
struct TrainConfig {
    int stage = 1;
    int epochs = 0;         // 0: derive the epoch count from step_limit
    int step_limit = 2000;  // hard step cap; 0: run exactly `epochs` epochs
    int batch_size = 4;     // samples per step
    int surface_points = 512;   // surface rows per sample per step
    int eikonal_points = 1024;  // per sample per step; half box, half near-surface
    int rays_per_view = 2048;   // stage 2: traced rays per sample per step
    int lattice = 64;           // stage 2: strided pixel lattice extent (square)
    float lr_networks = 5e-4f;
    float lr_latents = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    uint64_t seed = 0;
    LossWeights weights;
    int checkpoint_every = 0;    // steps between snapshots; 0 = final state only
    std::string checkpoint_dir;  // required when checkpoint_every > 0
    ModelConfig model;
};
void validate(const TrainConfig& cfg, const Dataset& ds);

// Deterministic batch: which samples this step visits and the per-sample
// surface/eikonal/ray subsets. Epochs are seeded permutations of the sample
// list, so every sample is visited exactly once per epoch.
struct BatchItem {
    int sample = 0;
    std::vector<int> surface_rows;  // indices into sample.surface
    std::vector<int> eikonal_rows;  // base rows for the eikonal draw
    int view = 0;                   // stage 2: view index
    std::vector<int> lattice_px;    // stage 2: position in the lattice frame
    std::vector<int> view_px;       // stage 2: same ray, pixel in the full view
};
struct Batch {
    int64_t step = 0;
    int epoch = 0;
    std::vector<BatchItem> items;
};

int steps_per_epoch(const Dataset& ds, const TrainConfig& cfg);
int64_t total_steps(const Dataset& ds, const TrainConfig& cfg);
Batch sample_batch(const Dataset& ds, const TrainConfig& cfg, int64_t step);

// Everything needed to resume or evaluate a run. Serialized as a version-2
// MSDF container (model + latent blocks as in the plain model checkpoint,
// plus optimizer moment blocks and a train section in the meta JSON), so
// load_checkpoint() on the same file yields the model and tables.
struct TrainState {
    Model model;
    LatentTables tables;
    TrainConfig config;
    int stage = 1;
    int64_t step = 0;
    AdamState opt;
};

struct TrainResult {
    TrainState state;
    std::vector<LossReport> history;  // one report per step
};

// Fresh model + tables, stage-1 objective. Deterministic given cfg.seed.
// Throws on a non-finite loss, naming the offending term; non-finite
// gradients skip the step and are counted in state.opt.skipped.
TrainResult train_stage1(const Dataset& ds, const TrainConfig& cfg, std::ostream* log = nullptr);

// Continues from a stage-1 state (deep copy; `start` is untouched). g and
// g-inverse parameters are excluded from every update, so they match the
// stage-1 state bit-for-bit. Optimizer state starts fresh.
TrainResult train_stage2(const TrainState& start, const Dataset& ds, const TrainConfig& cfg,
                         std::ostream* log = nullptr);

void save_train_state(const std::string& path, TrainState& state);
TrainState load_train_state(const std::string& path);

// Mean squared rgb error over the ground-truth foreground of one view,
// rendered full-frame. The stage-2 progress metric.
float masked_image_l2(const Model& model, const AvatarCodes& codes, const View& view);

// Deep copies (fresh storage; plain Tensor copies share it).
Model clone_model(const Model& m);
LatentTables clone_tables(const LatentTables& t);

}  // namespace morphsdf
