#pragma once

// Procedural synthetic interaction videos: objects with action-specific
// functional parts, a manipulator blob that travels to the right part, and a
// paired manipulator-free image per clip. Ground truth (keypoints, part
// boxes) falls out of the construction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "htk/rng.hpp"
#include "htk/tensor.hpp"

namespace htk {

struct GenConfig {
    int image_size = 64;
    int clip_len = 8;
    int train_per_cell = 60;  // clips per (object, action) cell
    int test_per_cell = 15;
    std::vector<std::string> objects = {"kettle", "pan", "mug", "drawer"};
    std::vector<std::string> actions = {"grasp", "twist", "press"};
    double noise_sigma = 0.02;
    double jitter = 0.10;
    int annotators = 3;
};

// All geometry in pixel coordinates of the configured image size.
struct PartSpec {
    int action = 0;
    double cx = 0, cy = 0;
    double half = 0;  // half side of the square part
    std::array<double, 3> color{};
};

struct SceneSpec {
    int object_id = 0;
    int image_size = 64;
    double noise_sigma = 0.02;
    double body_cx = 0, body_cy = 0, body_hw = 0, body_hh = 0;
    std::array<double, 3> body_color{};
    std::vector<PartSpec> parts;  // index = action id
};

struct ObjectInstance {
    SceneSpec spec;
    Tensor<float> inactive;                          // 3,H,W, includes render noise
    std::vector<std::pair<double, double>> keypoints;  // per action: part center
};

struct ClipEntry {
    std::string id;
    std::string object;
    std::string action;
    std::string split;  // "train" | "test"
    std::string clip_file;
    std::string inactive_file;
    int object_id = 0;
    int action_id = 0;
    double kx = 0, ky = 0;                // keypoint (part center)
    std::array<double, 4> part_box{};     // x0, y0, x1, y1
};

struct DatasetManifest {
    std::filesystem::path root;
    std::uint64_t seed = 0;
    std::string config_hash;
    int image_size = 64;
    int clip_len = 8;
    std::vector<std::string> actions;
    std::vector<std::string> objects;
    std::vector<ClipEntry> clips;
};

struct KeypointAnnotation {
    std::string image;  // inactive image path relative to dataset root
    std::string action;
    std::string annotator;
    std::string clip_id;
    std::vector<std::pair<double, double>> points;
};

SceneSpec gen_scene(const GenConfig& cfg, int object_id, Rng& rng);

Tensor<float> render_inactive(const SceneSpec& spec, Rng& rng);

ObjectInstance gen_object(const GenConfig& cfg, int object_id, Rng& rng);

// Frames of a manipulator approaching the action's part, overlapping it for
// the final ceil(T/3) frames with the part brightened.
std::vector<Tensor<float>> gen_clip(const ObjectInstance& inst, int action, int T, Rng& rng);

DatasetManifest gen_dataset(const GenConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_annotations(const std::vector<KeypointAnnotation>& anns, const std::filesystem::path& path);
std::vector<KeypointAnnotation> load_annotations(const std::filesystem::path& path);

// Familiar-only train manifest and unfamiliar-only test manifest.
std::pair<DatasetManifest, DatasetManifest> novel_object_split(const DatasetManifest& m,
                                                               const std::vector<int>& holdout_classes);

// Partition of all classes into `splits` disjoint holdout groups, so the
// rotating evaluation sees every class as unfamiliar exactly once.
std::vector<std::vector<int>> rotating_holdout_groups(int num_classes, int splits = 3);

Tensor<float> load_clip_tensor(const DatasetManifest& m, const ClipEntry& e);
Tensor<float> load_inactive_tensor(const DatasetManifest& m, const ClipEntry& e);

// Split a clip tensor into consecutive chunk_len-frame chunks (frames list
// per chunk); a shorter tail chunk keeps the remaining frames.
std::vector<std::vector<Tensor<float>>> chunk_frames(const Tensor<float>& clip, int chunk_len);

std::string canonical_gen_config_json(const GenConfig& cfg);

}  // namespace htk
