#include "htk/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "htk/common.hpp"
#include "htk/container.hpp"
#include "json.hpp"

namespace htk {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr std::array<std::array<double, 3>, 8> kBodyPalette = {{
    {0.42, 0.38, 0.34},
    {0.34, 0.40, 0.46},
    {0.44, 0.34, 0.44},
    {0.36, 0.44, 0.34},
    {0.46, 0.42, 0.30},
    {0.30, 0.42, 0.44},
    {0.40, 0.32, 0.36},
    {0.34, 0.36, 0.42},
}};

constexpr std::array<std::array<double, 3>, 6> kActionPalette = {{
    {0.92, 0.20, 0.18},
    {0.16, 0.85, 0.25},
    {0.18, 0.30, 0.95},
    {0.95, 0.85, 0.15},
    {0.90, 0.20, 0.90},
    {0.15, 0.88, 0.88},
}};

double jitter1(Rng& rng) { return 2.0 * rng.uniform() - 1.0; }

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

void fill_rect(std::vector<float>& img, int S, double x0, double y0, double x1, double y1,
               const std::array<double, 3>& color) {
    const int ylo = std::max(0, static_cast<int>(std::floor(y0)));
    const int yhi = std::min(S - 1, static_cast<int>(std::ceil(y1)));
    const int xlo = std::max(0, static_cast<int>(std::floor(x0)));
    const int xhi = std::min(S - 1, static_cast<int>(std::ceil(x1)));
    for (int c = 0; c < 3; ++c) {
        float* plane = img.data() + static_cast<std::size_t>(c) * S * S;
        for (int y = ylo; y <= yhi; ++y) {
            if (y + 0.5 < y0 || y + 0.5 > y1) continue;
            for (int x = xlo; x <= xhi; ++x) {
                if (x + 0.5 < x0 || x + 0.5 > x1) continue;
                plane[static_cast<std::size_t>(y) * S + x] = static_cast<float>(color[static_cast<std::size_t>(c)]);
            }
        }
    }
}

void fill_disc(std::vector<float>& img, int S, double cx, double cy, double r,
               const std::array<double, 3>& color) {
    const int ylo = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int yhi = std::min(S - 1, static_cast<int>(std::ceil(cy + r)));
    const int xlo = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int xhi = std::min(S - 1, static_cast<int>(std::ceil(cx + r)));
    const double r2 = r * r;
    for (int y = ylo; y <= yhi; ++y) {
        const double dy = y + 0.5 - cy;
        for (int x = xlo; x <= xhi; ++x) {
            const double dx = x + 0.5 - cx;
            if (dx * dx + dy * dy > r2) continue;
            for (int c = 0; c < 3; ++c)
                img[(static_cast<std::size_t>(c) * S + static_cast<std::size_t>(y)) * S + x] =
                    static_cast<float>(color[static_cast<std::size_t>(c)]);
        }
    }
}

struct Manipulator {
    double cx = 0, cy = 0, r = 0;
};

// Scene raster: background, body, parts (one optionally brightened), then an
// optional manipulator on top, then additive noise.
Tensor<float> render_scene(const SceneSpec& spec, const Manipulator* manip, int brighten_part, Rng& rng) {
    const int S = spec.image_size;
    std::vector<float> img(static_cast<std::size_t>(3) * S * S, 0.12f);
    fill_rect(img, S, spec.body_cx - spec.body_hw, spec.body_cy - spec.body_hh, spec.body_cx + spec.body_hw,
              spec.body_cy + spec.body_hh, spec.body_color);
    for (std::size_t p = 0; p < spec.parts.size(); ++p) {
        const PartSpec& part = spec.parts[p];
        std::array<double, 3> color = part.color;
        double half = part.half;
        if (static_cast<int>(p) == brighten_part) {
            // multiplicative so the hue survives the flash; additive offsets
            // wash every part toward the same near-white
            for (auto& ch : color) ch = clampd(ch * 2.2, 0.0, 1.0);
            half *= 1.35;
        }
        fill_rect(img, S, part.cx - half, part.cy - half, part.cx + half, part.cy + half, color);
    }
    if (manip) fill_disc(img, S, manip->cx, manip->cy, manip->r, {0.95, 0.92, 0.86});
    if (spec.noise_sigma > 0.0)
        for (auto& v : img)
            v = static_cast<float>(clampd(v + spec.noise_sigma * rng.normal(), 0.0, 1.0));
    return Tensor<float>(Shape{3, S, S}, std::move(img));
}

std::string zero_pad(int v, int width) {
    std::ostringstream os;
    os << v;
    std::string s = os.str();
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

json gen_config_to_json(const GenConfig& cfg) {
    json j;
    j["image_size"] = cfg.image_size;
    j["clip_len"] = cfg.clip_len;
    j["train_per_cell"] = cfg.train_per_cell;
    j["test_per_cell"] = cfg.test_per_cell;
    j["objects"] = cfg.objects;
    j["actions"] = cfg.actions;
    j["noise_sigma"] = cfg.noise_sigma;
    j["jitter"] = cfg.jitter;
    j["annotators"] = cfg.annotators;
    return j;
}

}  // namespace

std::string canonical_gen_config_json(const GenConfig& cfg) { return gen_config_to_json(cfg).dump(); }

SceneSpec gen_scene(const GenConfig& cfg, int object_id, Rng& rng) {
    if (object_id < 0 || object_id >= static_cast<int>(cfg.objects.size()))
        throw ValueError("gen_scene: object id out of range");
    const int S = cfg.image_size;
    const double j = cfg.jitter;
    SceneSpec spec;
    spec.object_id = object_id;
    spec.image_size = S;
    spec.noise_sigma = cfg.noise_sigma;
    spec.body_cx = S * (0.5 + 0.05 * jitter1(rng));
    spec.body_cy = S * (0.5 + 0.05 * jitter1(rng));
    const double bw = 0.22 + 0.015 * static_cast<double>(object_id % 3);
    const double bh = 0.22 + 0.015 * static_cast<double>((object_id + 1) % 3);
    spec.body_hw = S * bw * (1.0 + j * jitter1(rng));
    spec.body_hh = S * bh * (1.0 + j * jitter1(rng));
    std::array<double, 3> body = kBodyPalette[static_cast<std::size_t>(object_id) % kBodyPalette.size()];
    const double shade = 0.05 * static_cast<double>(object_id / static_cast<int>(kBodyPalette.size()));
    for (auto& ch : body) ch = clampd(ch + shade + 0.04 * jitter1(rng), 0.0, 1.0);
    spec.body_color = body;

    const int A = static_cast<int>(cfg.actions.size());
    if (A > 8) throw ConfigError("gen_scene: the part ring has 8 slots, got " + std::to_string(A) + " actions");
    // Slots are re-dealt per instance: a fixed layout would let position stand
    // in for the action (padding makes the encoder position-aware), and the
    // learned maps would stop transferring across objects. Spreading parts
    // 8/A slots apart keeps them from overlapping.
    std::vector<int> order(static_cast<std::size_t>(A));
    for (int a = 0; a < A; ++a) order[static_cast<std::size_t>(a)] = a;
    rng.shuffle(order);
    const int rot = static_cast<int>(rng.below(8));
    std::vector<int> slot_of(static_cast<std::size_t>(A));
    for (int i = 0; i < A; ++i)
        slot_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = (rot + (8 / A) * i) % 8;
    for (int a = 0; a < A; ++a) {
        PartSpec part;
        part.action = a;
        const int slot = slot_of[static_cast<std::size_t>(a)];
        const double theta = static_cast<double>(slot) * (3.14159265358979323846 / 4.0);
        const double ring = 0.275 * S;
        part.half = S * 0.085 * (1.0 + j * jitter1(rng));
        double cx = spec.body_cx + ring * std::cos(theta) * (1.0 + 0.06 * jitter1(rng));
        double cy = spec.body_cy + ring * std::sin(theta) * (1.0 + 0.06 * jitter1(rng));
        cx = clampd(cx, part.half + 1.0, S - part.half - 1.0);
        cy = clampd(cy, part.half + 1.0, S - part.half - 1.0);
        part.cx = cx;
        part.cy = cy;
        std::array<double, 3> color = kActionPalette[static_cast<std::size_t>(a) % kActionPalette.size()];
        for (auto& ch : color) ch = clampd(ch + 0.05 * jitter1(rng), 0.0, 1.0);
        part.color = color;
        spec.parts.push_back(part);
    }
    return spec;
}

Tensor<float> render_inactive(const SceneSpec& spec, Rng& rng) { return render_scene(spec, nullptr, -1, rng); }

ObjectInstance gen_object(const GenConfig& cfg, int object_id, Rng& rng) {
    ObjectInstance inst;
    inst.spec = gen_scene(cfg, object_id, rng);
    inst.inactive = render_inactive(inst.spec, rng);
    for (const auto& p : inst.spec.parts) inst.keypoints.emplace_back(p.cx, p.cy);
    return inst;
}

std::vector<Tensor<float>> gen_clip(const ObjectInstance& inst, int action, int T, Rng& rng) {
    const SceneSpec& spec = inst.spec;
    if (action < 0 || action >= static_cast<int>(spec.parts.size()))
        throw ValueError("gen_clip: action " + std::to_string(action) + " is not afforded by this object");
    if (T < 2) throw ValueError("gen_clip: need at least 2 frames");
    const int S = spec.image_size;
    const PartSpec& part = spec.parts[static_cast<std::size_t>(action)];
    const double tx = part.cx, ty = part.cy;
    const double min_start_dist = 0.35 * S;

    double sx = 0, sy = 0;
    for (int tries = 0; tries < 256; ++tries) {
        const int side = static_cast<int>(rng.below(4));
        const double t = rng.uniform() * S;
        switch (side) {
            case 0: sx = t, sy = 1.0; break;
            case 1: sx = t, sy = S - 1.0; break;
            case 2: sx = 1.0, sy = t; break;
            default: sx = S - 1.0, sy = t; break;
        }
        const double dx = sx - tx, dy = sy - ty;
        if (std::sqrt(dx * dx + dy * dy) >= min_start_dist) break;
    }

    const double mr = 0.05 * S * (1.0 + 0.1 * jitter1(rng));
    const int contact = (T + 2) / 3;  // ceil(T/3)
    const int approach = T - contact;
    std::vector<Tensor<float>> frames;
    frames.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        Manipulator m;
        m.r = mr;
        if (t < approach) {
            const double alpha = approach > 0 ? static_cast<double>(t) / static_cast<double>(approach) : 0.0;
            const double wob = t == 0 ? 0.0 : 0.01 * S;
            m.cx = sx + alpha * (tx - sx) + wob * rng.normal();
            m.cy = sy + alpha * (ty - sy) + wob * rng.normal();
        } else {
            m.cx = tx + 0.003 * S * rng.normal();
            m.cy = ty + 0.003 * S * rng.normal();
        }
        frames.push_back(render_scene(spec, &m, t >= approach ? action : -1, rng));
    }
    return frames;
}

namespace {

struct PlannedClip {
    std::string id;
    int object_id = 0;
    int action_id = 0;
    std::string split;
    int instance_k = 0;  // per-object instance counter
};

}  // namespace

DatasetManifest gen_dataset(const GenConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir) {
    if (cfg.objects.size() < 2 || cfg.actions.size() < 2)
        throw ConfigError("gen_dataset: need at least 2 objects and 2 actions");
    if (cfg.image_size < 16) throw ConfigError("gen_dataset: image_size too small");
    if (cfg.clip_len < 2) throw ConfigError("gen_dataset: clip_len must be >= 2");
    if (cfg.train_per_cell < 1 || cfg.test_per_cell < 1)
        throw ConfigError("gen_dataset: per-cell clip counts must be >= 1");
    if (cfg.annotators < 1) throw ConfigError("gen_dataset: need at least 1 annotator");
    {
        std::set<std::string> uniq(cfg.objects.begin(), cfg.objects.end());
        if (uniq.size() != cfg.objects.size()) throw ConfigError("gen_dataset: duplicate object names");
        std::set<std::string> uniqa(cfg.actions.begin(), cfg.actions.end());
        if (uniqa.size() != cfg.actions.size()) throw ConfigError("gen_dataset: duplicate action names");
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "clips", ec);
    std::filesystem::create_directories(out_dir / "inactive", ec);
    if (!std::filesystem::is_directory(out_dir / "clips") || !std::filesystem::is_directory(out_dir / "inactive"))
        throw IoError("gen_dataset: cannot create output directories under " + out_dir.string());

    const int O = static_cast<int>(cfg.objects.size());
    const int A = static_cast<int>(cfg.actions.size());

    std::vector<PlannedClip> plan;
    for (const std::string split : {std::string("train"), std::string("test")}) {
        const int per = split == "train" ? cfg.train_per_cell : cfg.test_per_cell;
        for (int o = 0; o < O; ++o)
            for (int a = 0; a < A; ++a)
                for (int i = 0; i < per; ++i) {
                    PlannedClip pc;
                    pc.object_id = o;
                    pc.action_id = a;
                    pc.split = split;
                    const int base = split == "train" ? a * cfg.train_per_cell
                                                      : A * cfg.train_per_cell + a * cfg.test_per_cell;
                    pc.instance_k = base + i;
                    pc.id = cfg.objects[static_cast<std::size_t>(o)] + "_" +
                            cfg.actions[static_cast<std::size_t>(a)] + "_" + split + "_" + zero_pad(i, 3);
                    plan.push_back(std::move(pc));
                }
    }

    DatasetManifest m;
    m.root = out_dir;
    m.seed = seed;
    m.config_hash = to_hex(fnv1a64(canonical_gen_config_json(cfg)));
    m.image_size = cfg.image_size;
    m.clip_len = cfg.clip_len;
    m.actions = cfg.actions;
    m.objects = cfg.objects;
    m.clips.resize(plan.size());

    std::vector<std::vector<KeypointAnnotation>> annots(plan.size());

    parallel_for(plan.size(), [&](std::size_t idx) {
        const PlannedClip& pc = plan[idx];
        Rng rng(derive_seed(seed, fnv1a64(pc.id)));
        ObjectInstance inst = gen_object(cfg, pc.object_id, rng);
        std::vector<Tensor<float>> frames = gen_clip(inst, pc.action_id, cfg.clip_len, rng);

        const int S = cfg.image_size;
        std::vector<float> stacked(static_cast<std::size_t>(cfg.clip_len) * 3 * S * S);
        for (int t = 0; t < cfg.clip_len; ++t)
            std::copy(frames[static_cast<std::size_t>(t)].value().begin(),
                      frames[static_cast<std::size_t>(t)].value().end(),
                      stacked.begin() + static_cast<std::size_t>(t) * 3 * S * S);
        Tensor<float> clip(Shape{cfg.clip_len, 3, S, S}, std::move(stacked));

        ClipEntry e;
        e.id = pc.id;
        e.object = cfg.objects[static_cast<std::size_t>(pc.object_id)];
        e.action = cfg.actions[static_cast<std::size_t>(pc.action_id)];
        e.split = pc.split;
        e.object_id = pc.object_id;
        e.action_id = pc.action_id;
        e.clip_file = "clips/" + pc.id + ".htk";
        e.inactive_file = "inactive/" + e.object + "_" + zero_pad(pc.instance_k, 4) + ".htk";
        const PartSpec& part = inst.spec.parts[static_cast<std::size_t>(pc.action_id)];
        e.kx = part.cx;
        e.ky = part.cy;
        e.part_box = {part.cx - part.half, part.cy - part.half, part.cx + part.half, part.cy + part.half};

        save_tensor(out_dir / e.clip_file, clip);
        save_tensor(out_dir / e.inactive_file, inst.inactive);

        if (pc.split == "test") {
            for (int an = 0; an < cfg.annotators; ++an) {
                KeypointAnnotation ka;
                ka.image = e.inactive_file;
                ka.action = e.action;
                ka.annotator = "ann" + std::to_string(an);
                ka.clip_id = e.id;
                const int npts = 1 + static_cast<int>(rng.below(2));
                for (int p = 0; p < npts; ++p) {
                    double px = part.cx + 0.35 * part.half * rng.normal();
                    double py = part.cy + 0.35 * part.half * rng.normal();
                    px = clampd(px, e.part_box[0], e.part_box[2]);
                    py = clampd(py, e.part_box[1], e.part_box[3]);
                    ka.points.emplace_back(px, py);
                }
                annots[idx].push_back(std::move(ka));
            }
        }
        m.clips[idx] = std::move(e);
    });

    std::vector<KeypointAnnotation> flat;
    for (auto& v : annots)
        for (auto& ka : v) flat.push_back(std::move(ka));

    save_manifest(m, out_dir / "manifest.json");
    save_annotations(flat, out_dir / "annotations.jsonl");
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    ordered_json j;
    j["version"] = 1;
    j["seed"] = m.seed;
    j["config_hash"] = m.config_hash;
    j["image_size"] = m.image_size;
    j["clip_len"] = m.clip_len;
    j["actions"] = m.actions;
    j["objects"] = m.objects;
    ordered_json clips = ordered_json::array();
    for (const auto& e : m.clips) {
        ordered_json c;
        c["id"] = e.id;
        c["object"] = e.object;
        c["action"] = e.action;
        c["split"] = e.split;
        c["object_id"] = e.object_id;
        c["action_id"] = e.action_id;
        c["clip_file"] = e.clip_file;
        c["inactive_file"] = e.inactive_file;
        c["keypoint"] = {e.kx, e.ky};
        c["part_box"] = {e.part_box[0], e.part_box[1], e.part_box[2], e.part_box[3]};
        clips.push_back(std::move(c));
    }
    j["clips"] = std::move(clips);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path_in) {
    std::filesystem::path path = path_in;
    if (std::filesystem::is_directory(path)) path /= "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.root = path.parent_path();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.image_size = j.at("image_size").get<int>();
        m.clip_len = j.at("clip_len").get<int>();
        m.actions = j.at("actions").get<std::vector<std::string>>();
        m.objects = j.at("objects").get<std::vector<std::string>>();
        for (const auto& c : j.at("clips")) {
            ClipEntry e;
            e.id = c.at("id").get<std::string>();
            e.object = c.at("object").get<std::string>();
            e.action = c.at("action").get<std::string>();
            e.split = c.at("split").get<std::string>();
            e.object_id = c.at("object_id").get<int>();
            e.action_id = c.at("action_id").get<int>();
            e.clip_file = c.at("clip_file").get<std::string>();
            e.inactive_file = c.at("inactive_file").get<std::string>();
            e.kx = c.at("keypoint")[0].get<double>();
            e.ky = c.at("keypoint")[1].get<double>();
            for (int i = 0; i < 4; ++i) e.part_box[static_cast<std::size_t>(i)] = c.at("part_box")[static_cast<std::size_t>(i)].get<double>();
            m.clips.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw IoError("manifest " + path.string() + " is missing fields: " + e.what());
    }
    return m;
}

void save_annotations(const std::vector<KeypointAnnotation>& anns, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write annotations: " + path.string());
    for (const auto& a : anns) {
        ordered_json j;
        j["image"] = a.image;
        j["action"] = a.action;
        j["annotator"] = a.annotator;
        j["clip"] = a.clip_id;
        ordered_json pts = ordered_json::array();
        for (const auto& [x, y] : a.points) pts.push_back({x, y});
        j["points"] = std::move(pts);
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("short write: " + path.string());
}

std::vector<KeypointAnnotation> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotations: " + path.string());
    std::vector<KeypointAnnotation> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            KeypointAnnotation a;
            a.image = j.at("image").get<std::string>();
            a.action = j.at("action").get<std::string>();
            a.annotator = j.at("annotator").get<std::string>();
            a.clip_id = j.value("clip", std::string());
            for (const auto& p : j.at("points")) a.points.emplace_back(p[0].get<double>(), p[1].get<double>());
            out.push_back(std::move(a));
        } catch (const json::exception& e) {
            throw IoError("annotations " + path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::pair<DatasetManifest, DatasetManifest> novel_object_split(const DatasetManifest& m,
                                                               const std::vector<int>& holdout_classes) {
    std::set<int> hold(holdout_classes.begin(), holdout_classes.end());
    for (int c : hold)
        if (c < 0 || c >= static_cast<int>(m.objects.size()))
            throw ValueError("novel_object_split: class id " + std::to_string(c) + " out of range");
    DatasetManifest train = m, test = m;
    train.clips.clear();
    test.clips.clear();
    for (const auto& e : m.clips) {
        const bool held = hold.count(e.object_id) > 0;
        if (e.split == "train" && !held) train.clips.push_back(e);
        if (e.split == "test" && held) test.clips.push_back(e);
    }
    std::set<int> familiar_actions;
    for (const auto& e : train.clips) familiar_actions.insert(e.action_id);
    for (const auto& e : test.clips)
        if (!familiar_actions.count(e.action_id))
            throw ValueError("novel_object_split: action '" + e.action + "' has no familiar exemplar");
    return {std::move(train), std::move(test)};
}

std::vector<std::vector<int>> rotating_holdout_groups(int num_classes, int splits) {
    if (num_classes < 2) throw ValueError("rotating_holdout_groups: need at least 2 classes");
    if (splits < 1) throw ValueError("rotating_holdout_groups: need at least 1 split");
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(std::min(splits, num_classes)));
    for (int c = 0; c < num_classes; ++c) groups[static_cast<std::size_t>(c % static_cast<int>(groups.size()))].push_back(c);
    return groups;
}

Tensor<float> load_clip_tensor(const DatasetManifest& m, const ClipEntry& e) {
    return load_tensor<float>(m.root / e.clip_file);
}

Tensor<float> load_inactive_tensor(const DatasetManifest& m, const ClipEntry& e) {
    return load_tensor<float>(m.root / e.inactive_file);
}

std::vector<std::vector<Tensor<float>>> chunk_frames(const Tensor<float>& clip, int chunk_len) {
    if (clip.rank() != 4) throw ShapeError("chunk_frames: expected clip[T,C,H,W]");
    if (chunk_len < 1) throw ValueError("chunk_frames: chunk_len must be >= 1");
    const int T = clip.dim(0), C = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
    const std::size_t frame_sz = static_cast<std::size_t>(C) * H * W;
    std::vector<std::vector<Tensor<float>>> chunks;
    for (int t0 = 0; t0 < T; t0 += chunk_len) {
        std::vector<Tensor<float>> frames;
        for (int t = t0; t < std::min(T, t0 + chunk_len); ++t) {
            std::vector<float> v(clip.value().begin() + static_cast<std::ptrdiff_t>(frame_sz * static_cast<std::size_t>(t)),
                                 clip.value().begin() + static_cast<std::ptrdiff_t>(frame_sz * static_cast<std::size_t>(t + 1)));
            frames.emplace_back(Shape{C, H, W}, std::move(v));
        }
        chunks.push_back(std::move(frames));
    }
    return chunks;
}

}  // namespace htk
