#pragma once

#include <string>
#include <vector>

#include "renderer/render.hpp"
#include "synthdata/shape.hpp"
#include "synthdata/texture.hpp"

namespace morphsdf {

struct SurfaceSample {
    Vec3 p{};
    Vec3 n{};
    Vec2 uv{};
};

struct View {
    Camera camera;
    Image image;  // 3ch
    Image depth;  // 1ch
    Image mask;   // 1ch
};

struct TrainSample {
    int subject = 0;
    int expression = 0;  // 0 = neutral
    SubjectSpec subject_spec;
    ExpressionSpec expression_spec;
    Shape shape;  // subject+expression with Lipschitz bound
    std::vector<SurfaceSample> surface;  // landmarks occupy the first 16 rows
    std::vector<Landmark> marks;
    TextureParams texture_params;
    Image texture;
    std::vector<View> views;
};

struct DatasetConfig {
    int subjects = 32;
    int expressions = 8;  // per subject, id 0 neutral
    int views = 6;
    int surface_samples = 512;  // includes the 16 landmarks
    int image_size = 128;
    int texture_size = 256;
    uint64_t seed = 1;
};

struct Dataset {
    DatasetConfig cfg;
    std::vector<TrainSample> samples;  // subject-major, expression-minor

    const TrainSample& at(int subject, int expression) const;
    std::vector<int> subject_of_sample() const;  // for latent table wiring
};

// The six capture poses: yaw -30,-15,0,15,30 degrees at eye level plus one
// elevated frontal view. More views repeat the cycle with a small
// deterministic distance offset.
Camera dataset_camera(int view_index, int image_size);

// Ground-truth render through the shared sphere-tracing path (bit-identical
// depth to any later re-render of the same field).
View render_gt(const Shape& shape, const Image& texture, const Camera& camera);

// Deterministic in (cfg, ids). The subject spec/texture derive only from
// (seed, subject), expressions from (seed, subject, expression).
TrainSample generate_sample(const DatasetConfig& cfg, int subject, int expression);
Dataset make_dataset(const DatasetConfig& cfg);

// Directory layout: <dir>/manifest.json plus one folder per sample
// (sNN_eMM) holding samples.bin, landmarks.txt, texture.png and
// views/<k>/{image.png, depth.bin, mask.png, camera.txt}.
void write_sample(const std::string& dir, const TrainSample& sample);
void write_dataset(const std::string& dir, const DatasetConfig& cfg);  // streams, low memory
TrainSample load_sample(const std::string& dir, int subject, int expression);
Dataset load_dataset(const std::string& dir);
DatasetConfig load_manifest(const std::string& dir);

// Invariant audit used by tests and the CLI: |field| < 1e-4 at every
// surface sample, unit normals, landmark anchors at their shared uv,
// neutral expressions undeformed. Returns a human-readable failure list.
std::vector<std::string> audit_sample(const TrainSample& sample);

}  // namespace morphsdf
