#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "losses/losses.hpp"
#include "networks/model.hpp"
#include "renderer/render.hpp"
#include "synthdata/dataset.hpp"

namespace morphsdf {

// Everything a single-shot reconstruction consumes: one RGB view, its
// foreground mask and camera, and sparse 2D landmark observations keyed by
// the canonical anchor ids (see kLandmarkAnchors for the anchor -> uv table).
struct InversionInput {
    Image image;                    // [H,W,3], values in [0,1]
    Image mask;                     // [H,W,1], foreground in {0,1}
    Camera camera;
    std::vector<int> landmark_ids;  // anchor ids, each in [0, kNumLandmarks)
    std::vector<Vec2> landmark_px;  // observed pixel per id
};
void validate(const InversionInput& in);

// Synthetic-input builder: packs a rendered view plus the shape's projected
// landmarks into the record an inversion run consumes.
InversionInput input_from_view(const View& view, const Shape& shape);

// Folder round trip: {image.png, mask.png, camera.txt, landmarks.txt}.
void save_inversion_input(const std::string& dir, const InversionInput& in);
InversionInput load_inversion_input(const std::string& dir);

// Spherical offset of a camera around the origin (the shape family is
// origin-centered). Zero adjustment returns the camera unchanged, bit-exactly.
struct CameraAdjust {
    float yaw = 0.f;       // radians
    float pitch = 0.f;     // radians
    float log_dist = 0.f;  // distance scales by exp(log_dist)
};
Camera orbit_camera(const Camera& cam, const CameraAdjust& adj);

struct InversionOptions {
    int latent_steps = 800;
    int finetune_steps = 60;
    float lr_latent = 1e-2f;    // plain gradient descent, cosine-decayed to 0
    float lr_finetune = 1e-4f;  // Adam on the network weights
    int lattice = 24;           // jittered square ray lattice per step (mult. of 4)
    bool skip_finetune = false;
    bool refine_camera = false;  // jointly fit a yaw/pitch/distance offset
    LossWeights weights;         // img_l2, img_percep, silhouette, mvc, landmark2d, reg
    uint64_t seed = 0;
};
void validate(const InversionOptions& opt, const InversionInput& in);

// Componentwise mean of each latent table: the encoder-free initializer.
AvatarCodes mean_init(const LatentTables& tables);

AvatarCodes clone_codes(const AvatarCodes& codes);

// Phase one: model weights frozen (never touched), codes descend on
// image + silhouette + multi-view + landmark + regularization losses.
struct LatentFit {
    AvatarCodes codes;
    CameraAdjust camera;              // zeros unless opt.refine_camera
    std::vector<LossReport> history;  // one report per step
};
LatentFit optimize_latents(const Model& model, const AvatarCodes& init, const InversionInput& in,
                           const InversionOptions& opt, std::ostream* log = nullptr);

// Phase two: codes frozen, a deep copy of the weights fine-tunes on the same
// losses minus silhouette (dropped entirely; unfrozen weights let it bloat
// the geometry, so it appears in no report of this phase).
struct FinetuneFit {
    Model model;
    std::vector<LossReport> history;
};
FinetuneFit finetune_weights(const Model& model, const AvatarCodes& codes,
                             const InversionInput& in, const InversionOptions& opt,
                             const CameraAdjust& adj = {}, std::ostream* log = nullptr);

// mean_init -> optimize_latents -> optional finetune_weights, plus the final
// render at the (possibly refined) input camera.
struct InversionResult {
    AvatarCodes codes;
    Model model;  // fine-tuned deep copy; bit-equal to the input model when skipped
    bool finetuned = false;
    CameraAdjust camera;
    std::vector<LossReport> latent_history;
    std::vector<LossReport> finetune_history;
    RenderResult final_view;
};
InversionResult invert(const Model& model, const LatentTables& tables, const InversionInput& in,
                       const InversionOptions& opt, std::ostream* log = nullptr);

}  // namespace morphsdf
