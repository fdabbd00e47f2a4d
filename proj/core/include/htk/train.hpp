#pragma once

// Losses, active-frame selection, the Adam optimizer, the training loop, and
// checkpoint io. Training runs in float; gradient checks instantiate the same
// templates in double.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "htk/common.hpp"
#include "htk/container.hpp"
#include "htk/data.hpp"
#include "htk/net.hpp"
#include "htk/rng.hpp"
#include "htk/tensor.hpp"

#include "json.hpp"

namespace htk {

enum class AntMode { L2, Triplet };

inline std::string ant_mode_name(AntMode m) { return m == AntMode::L2 ? "l2" : "triplet"; }

struct LossWeights {
    double cls = 1.0;
    double ant = 0.1;
    double aux = 1.0;
};

template <typename T>
struct TrainItem {
    std::vector<Tensor<T>> frames;
    Tensor<T> inactive;  // may be undefined when no pairing exists
    int action = 0;
    int object = 0;
    std::string id;
};

// Frame where the recurrent classifier is most confident of the true action;
// ties break toward the earliest frame.
template <typename T>
int select_active_frame(const std::vector<Tensor<T>>& step_logits, int action) {
    if (step_logits.empty()) throw ValueError("select_active_frame: no steps");
    if (action < 0 || action >= step_logits[0].dim(0))
        throw ValueError("select_active_frame: action index out of range");
    int best = 0;
    double best_p = -1.0;
    for (std::size_t t = 0; t < step_logits.size(); ++t) {
        const auto p = softmax_values(step_logits[t].value());
        const double pa = static_cast<double>(p[static_cast<std::size_t>(action)]);
        if (pa > best_p) {
            best_p = pa;
            best = static_cast<int>(t);
        }
    }
    return best;
}

// Feature matching loss: distance between the pooled anticipated embedding
// and the pooled active target. The target is detached; gradient reaches only
// the anticipation module and the inactive branch.
template <typename T>
Tensor<T> loss_ant_l2(Tape<T>* tape, HotspotModel<T>& model, const Tensor<T>& x_I, const Tensor<T>& x_star,
                      bool train) {
    Tensor<T> pa = model.pool(tape, model.anticipate(tape, x_I, train));
    Tensor<T> pt = model.pool(nullptr, x_star.detached(false));
    return euclidean_distance(tape, pa, pt);
}

// Triplet form: hinge on the margin between anchor-positive and
// anchor-negative distances of L2-normalized pooled embeddings.
template <typename T>
Tensor<T> loss_ant_triplet(Tape<T>* tape, HotspotModel<T>& model, const Tensor<T>& x_star,
                           const Tensor<T>& x_pos, const Tensor<T>& x_neg, T margin, bool train) {
    if (margin <= T(0)) throw ValueError("loss_ant_triplet: margin must be positive");
    Tensor<T> anchor = l2_normalize(tape, model.pool(nullptr, x_star.detached(false)));
    Tensor<T> pos = l2_normalize(tape, model.pool(tape, model.anticipate(tape, x_pos, train)));
    Tensor<T> neg = l2_normalize(tape, model.pool(tape, model.anticipate(tape, x_neg, train)));
    Tensor<T> dpos = euclidean_distance(tape, anchor, pos);
    Tensor<T> dneg = euclidean_distance(tape, anchor, neg);
    Tensor<T> gap = add(tape, dpos, scale(tape, dneg, T(-1)));
    return relu(tape, add(tape, gap, Tensor<T>::scalar(margin)));
}

struct LossBreakdown {
    double total = 0, cls = 0, ant = 0, aux = 0;
    std::int64_t items = 0;
    std::int64_t correct = 0;
    std::int64_t ant_skipped = 0;
};

// One batch: per-item tapes, gradients averaged into parameter buffers via
// the backward seed. Caller zeroes grads first and runs the optimizer after.
template <typename T>
LossBreakdown train_batch(HotspotModel<T>& model, const std::vector<const TrainItem<T>*>& batch,
                          const LossWeights& w, AntMode mode, T margin, Rng& rng, bool backward = true) {
    if (batch.empty()) throw ValueError("train_batch: empty batch");
    LossBreakdown bd;
    const T seed = T(1) / static_cast<T>(batch.size());
    const int d = model.feature_channels();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TrainItem<T>& it = *batch[i];
        if (it.action < 0 || it.action >= model.num_actions())
            throw ValueError("train_batch: item '" + it.id + "' has label outside the vocabulary");
        Tape<T> tape;
        StepOutputs<T> so = model.forward_video(&tape, it.frames);
        Tensor<T> lcls = softmax_cross_entropy(&tape, so.y.back(), it.action);
        {
            const auto& yv = so.y.back().value();
            int am = 0;
            for (int k = 1; k < static_cast<int>(yv.size()); ++k)
                if (yv[static_cast<std::size_t>(k)] > yv[static_cast<std::size_t>(am)]) am = k;
            if (am == it.action) bd.correct++;
        }
        Tensor<T> total = scale(&tape, lcls, static_cast<T>(w.cls));

        const bool want_inactive = w.ant > 0.0 || w.aux > 0.0;
        if (want_inactive) {
            if (!it.inactive.defined()) {
                warn("train_batch: item '" + it.id + "' has no paired inactive image; skipping those terms");
                bd.ant_skipped++;
            } else {
                Tensor<T> x_I = model.encode_frame(&tape, it.inactive);
                Tensor<T> xa = model.anticipate(&tape, x_I, true);
                Tensor<T> pa = model.pool(&tape, xa);
                if (w.aux > 0.0) {
                    auto hc = lstm_step(&tape, pa, Tensor<T>::zeros(Shape{d}), Tensor<T>::zeros(Shape{d}),
                                        model.lstm.Wx, model.lstm.Wh, model.lstm.b);
                    Tensor<T> yaux = linear(&tape, hc.h, model.classifier.W, model.classifier.b);
                    Tensor<T> laux = softmax_cross_entropy(&tape, yaux, it.action);
                    bd.aux += static_cast<double>(laux.item());
                    total = add(&tape, total, scale(&tape, laux, static_cast<T>(w.aux)));
                }
                if (w.ant > 0.0) {
                    const int tstar = select_active_frame(so.y, it.action);
                    Tensor<T> gstar = so.g[static_cast<std::size_t>(tstar)].detached(false);
                    Tensor<T> lant;
                    bool have_ant = true;
                    if (mode == AntMode::L2) {
                        lant = euclidean_distance(&tape, pa, gstar);
                    } else {
                        std::vector<std::size_t> cands;
                        for (std::size_t j = 0; j < batch.size(); ++j)
                            if (j != i && batch[j]->object != it.object && batch[j]->inactive.defined())
                                cands.push_back(j);
                        if (cands.empty()) {
                            warn("train_batch: no different-class negative in batch for item '" + it.id +
                                 "'; skipping the anticipation term");
                            bd.ant_skipped++;
                            have_ant = false;
                        } else {
                            const TrainItem<T>& negit = *batch[cands[rng.below(cands.size())]];
                            Tensor<T> xn = model.encode_frame(&tape, negit.inactive);
                            Tensor<T> pn = l2_normalize(&tape, model.pool(&tape, model.anticipate(&tape, xn, true)));
                            Tensor<T> anchor = l2_normalize(&tape, Tensor<T>(gstar.shape(), gstar.value()));
                            Tensor<T> ppos = l2_normalize(&tape, pa);
                            Tensor<T> dpos = euclidean_distance(&tape, anchor, ppos);
                            Tensor<T> dneg = euclidean_distance(&tape, anchor, pn);
                            Tensor<T> gap = add(&tape, dpos, scale(&tape, dneg, T(-1)));
                            lant = relu(&tape, add(&tape, gap, Tensor<T>::scalar(margin)));
                        }
                    }
                    if (have_ant) {
                        bd.ant += static_cast<double>(lant.item());
                        total = add(&tape, total, scale(&tape, lant, static_cast<T>(w.ant)));
                    }
                }
            }
        }

        const double tv = static_cast<double>(total.item());
        if (!std::isfinite(tv)) throw NumericError("non-finite loss at item '" + it.id + "'");
        bd.total += tv;
        bd.cls += static_cast<double>(lcls.item());
        bd.items++;
        if (backward) tape.backward(total, seed);
    }
    const double n = static_cast<double>(bd.items);
    bd.total /= n;
    bd.cls /= n;
    bd.ant /= n;
    bd.aux /= n;
    return bd;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
public:
    Adam(T lr, T weight_decay) : lr_(lr), wd_(weight_decay) {}

    // Parameter list must be identical (order and shapes) on every call.
    void step(const std::vector<Tensor<T>*>& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->value().size(), T(0));
                v_[i].assign(params[i]->value().size(), T(0));
            }
        }
        if (m_.size() != params.size()) throw ValueError("adam: parameter list changed size");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (m_[i].size() != params[i]->value().size())
                throw ValueError("adam: parameter " + std::to_string(i) + " changed size");
            if (params[i]->has_grad())
                for (T g : params[i]->grad())
                    if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient; step aborted");
        }
        t_ += 1;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            const bool hg = p.has_grad();
            for (std::size_t k = 0; k < p.value().size(); ++k) {
                const T g = (hg ? p.grad()[k] : T(0)) + wd_ * p.value()[k];
                m_[i][k] = beta1_ * m_[i][k] + (T(1) - beta1_) * g;
                v_[i][k] = beta2_ * v_[i][k] + (T(1) - beta2_) * g * g;
                const T mhat = m_[i][k] / bc1;
                const T vhat = v_[i][k] / bc2;
                p.value()[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::int64_t t() const { return t_; }
    std::vector<std::vector<T>>& m() { return m_; }
    std::vector<std::vector<T>>& v() { return v_; }
    void set_t(std::int64_t t) { t_ = t; }
    T lr() const { return lr_; }
    T weight_decay() const { return wd_; }

private:
    T lr_, wd_;
    T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <typename T, typename Model>
std::vector<Tensor<T>*> collect_params(Model& m) {
    std::vector<Tensor<T>*> out;
    m.for_each_param([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {
inline std::filesystem::path param_file(const std::filesystem::path& dir, const std::string& name,
                                        const char* prefix) {
    return dir / (std::string(prefix) + name + ".htk");
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, HotspotModel<T>& model, const Adam<T>* opt, int epoch,
                     const Rng* rng, const nlohmann::json& config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!std::filesystem::is_directory(dir)) throw IoError("cannot create checkpoint dir " + dir.string());

    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["epoch"] = epoch;
    manifest["config"] = config;
    manifest["config_hash"] = to_hex(fnv1a64(config.dump()));
    manifest["bn_updates"] = model.bn_updates();
    if (rng) manifest["rng"] = rng->save_state();

    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    std::vector<std::string> names;
    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        save_tensor(detail::param_file(dir, name, "param."), t);
        nlohmann::ordered_json p;
        p["name"] = name;
        p["shape"] = t.shape();
        params.push_back(std::move(p));
        names.push_back(name);
    });
    manifest["params"] = std::move(params);

    nlohmann::ordered_json buffers = nlohmann::ordered_json::array();
    model.for_each_buffer([&](const std::string& name, std::vector<T>& buf) {
        save_tensor(detail::param_file(dir, name, "buffer."),
                    Tensor<T>(Shape{static_cast<int>(buf.size())}, buf));
        buffers.push_back(name);
    });
    manifest["buffers"] = std::move(buffers);

    if (opt) {
        manifest["adam_t"] = const_cast<Adam<T>*>(opt)->t();
        auto& m = const_cast<Adam<T>*>(opt)->m();
        auto& v = const_cast<Adam<T>*>(opt)->v();
        if (!m.empty()) {
            if (m.size() != names.size()) throw ValueError("checkpoint: optimizer state does not match params");
            for (std::size_t i = 0; i < names.size(); ++i) {
                save_tensor(detail::param_file(dir, names[i], "adam.m."),
                            Tensor<T>(Shape{static_cast<int>(m[i].size())}, m[i]));
                save_tensor(detail::param_file(dir, names[i], "adam.v."),
                            Tensor<T>(Shape{static_cast<int>(v[i].size())}, v[i]));
            }
            manifest["adam_saved"] = true;
        } else {
            manifest["adam_saved"] = false;
        }
    }

    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("short write: checkpoint manifest in " + dir.string());
}

// Loads into an already-constructed model of the same architecture. Returns
// the stored epoch. opt and rng are optional (predict-only loads pass null).
template <typename T>
int load_checkpoint(const std::filesystem::path& dir, HotspotModel<T>& model, Adam<T>* opt, Rng* rng,
                    nlohmann::json* config_out = nullptr) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (config_out) *config_out = manifest.value("config", nlohmann::json::object());

    model.for_each_param([&](const std::string& name, Tensor<T>& t) {
        Tensor<T> loaded = load_tensor<T>(detail::param_file(dir, name, "param."));
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint parameter '" + name + "' has shape " + shape_str(loaded.shape()) +
                          ", model expects " + shape_str(t.shape()));
        t.value() = loaded.value();
        t.zero_grad();
    });
    model.for_each_buffer([&](const std::string& name, std::vector<T>& buf) {
        Tensor<T> loaded = load_tensor<T>(detail::param_file(dir, name, "buffer."));
        if (loaded.value().size() != buf.size()) throw IoError("checkpoint buffer '" + name + "' size mismatch");
        buf = loaded.value();
    });
    model.set_bn_updates(manifest.value("bn_updates", std::int64_t(0)));

    if (opt) {
        if (!manifest.value("adam_saved", false))
            throw IoError("checkpoint has no optimizer state; cannot resume training");
        opt->set_t(manifest.at("adam_t").get<std::int64_t>());
        auto& m = opt->m();
        auto& v = opt->v();
        m.clear();
        v.clear();
        model.for_each_param([&](const std::string& name, Tensor<T>&) {
            m.push_back(load_tensor<T>(detail::param_file(dir, name, "adam.m.")).value());
            v.push_back(load_tensor<T>(detail::param_file(dir, name, "adam.v.")).value());
        });
    }
    if (rng) {
        if (!manifest.contains("rng")) throw IoError("checkpoint has no rng state; cannot resume training");
        rng->load_state(manifest.at("rng").get<std::string>());
    }
    return manifest.at("epoch").get<int>();
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    int batch_size = 16;
    int epochs = 30;
    int chunk_len = 8;
    std::uint64_t seed = 1;
    AntMode ant_mode = AntMode::L2;
    double triplet_margin = 0.5;
    LossWeights weights;
};

struct EpochLog {
    int epoch = 0;
    double total = 0, cls = 0, ant = 0, aux = 0, accuracy = 0;
    std::int64_t ant_skipped = 0;
    double seconds = 0;
};

// Epochs of seeded shuffled minibatches with per-epoch logging and
// checkpointing. resume_from, when nonempty, restores parameters, optimizer
// moments, and RNG state so the continued run is bit-exact with an
// uninterrupted one.
template <typename T>
std::vector<EpochLog> fit(HotspotModel<T>& model, const std::vector<TrainItem<T>>& items,
                          const TrainConfig& cfg, const std::filesystem::path& out_dir,
                          const nlohmann::json& config_snapshot,
                          const std::filesystem::path& resume_from = {}) {
    if (items.empty()) throw ValueError("fit: empty dataset");
    if (cfg.batch_size < 1) throw ConfigError("fit: batch_size must be >= 1");
    if (cfg.ant_mode == AntMode::Triplet && cfg.triplet_margin <= 0)
        throw ConfigError("fit: triplet margin must be positive");
    for (const auto& it : items)
        if (it.action < 0 || it.action >= model.num_actions())
            throw ValueError("fit: item '" + it.id + "' has label outside the vocabulary");

    Adam<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.weight_decay));
    Rng rng(derive_seed(cfg.seed, fnv1a64("train-loop")));
    int start_epoch = 0;
    if (!resume_from.empty()) start_epoch = load_checkpoint(resume_from, model, &opt, &rng) + 1;

    const bool to_disk = !out_dir.empty();
    std::ofstream log_stream;
    if (to_disk) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir / "checkpoints", ec);
        log_stream.open(out_dir / "train_log.jsonl", std::ios::app);
        if (!log_stream) throw IoError("cannot open training log under " + out_dir.string());
    }

    std::vector<Tensor<T>*> params = collect_params<T>(model);
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochLog> logs;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // reshuffle from the identity so the epoch order depends only on the
        // RNG state, keeping resumed runs bit-exact with uninterrupted ones
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        LossBreakdown agg;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<const TrainItem<T>*> batch;
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t k = b0; k < b1; ++k) batch.push_back(&items[order[k]]);
            model.zero_grad();
            LossBreakdown bd;
            try {
                bd = train_batch(model, batch, cfg.weights, cfg.ant_mode,
                                 static_cast<T>(cfg.triplet_margin), rng);
            } catch (const NumericError& e) {
                if (to_disk) {
                    nlohmann::ordered_json dump;
                    dump["epoch"] = epoch;
                    dump["batch_start"] = b0;
                    nlohmann::ordered_json ids = nlohmann::ordered_json::array();
                    for (const auto* it : batch) ids.push_back(it->id);
                    dump["items"] = std::move(ids);
                    dump["error"] = e.what();
                    std::ofstream d(out_dir / "nan_dump.json", std::ios::trunc);
                    d << dump.dump(2) << "\n";
                }
                throw;
            }
            opt.step(params);
            agg.total += bd.total * static_cast<double>(bd.items);
            agg.cls += bd.cls * static_cast<double>(bd.items);
            agg.ant += bd.ant * static_cast<double>(bd.items);
            agg.aux += bd.aux * static_cast<double>(bd.items);
            agg.items += bd.items;
            agg.correct += bd.correct;
            agg.ant_skipped += bd.ant_skipped;
        }
        EpochLog el;
        el.epoch = epoch;
        const double n = static_cast<double>(agg.items);
        el.total = agg.total / n;
        el.cls = agg.cls / n;
        el.ant = agg.ant / n;
        el.aux = agg.aux / n;
        el.accuracy = static_cast<double>(agg.correct) / n;
        el.ant_skipped = agg.ant_skipped;
        el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        logs.push_back(el);

        if (to_disk) {
            nlohmann::ordered_json j;
            j["epoch"] = el.epoch;
            j["loss"] = el.total;
            j["loss_cls"] = el.cls;
            j["loss_ant"] = el.ant;
            j["loss_aux"] = el.aux;
            j["train_accuracy"] = el.accuracy;
            j["ant_skipped"] = el.ant_skipped;
            j["seconds"] = el.seconds;
            log_stream << j.dump() << "\n";
            log_stream.flush();
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d", epoch);
            save_checkpoint(out_dir / "checkpoints" / name, model, &opt, epoch, &rng, config_snapshot);
            // stable path for predict/eval and for resuming the latest state
            save_checkpoint(out_dir / "checkpoint", model, &opt, epoch, &rng, config_snapshot);
        }
    }
    return logs;
}

// Video classification accuracy over items, no training side effects.
template <typename T>
double clip_accuracy(HotspotModel<T>& model, const std::vector<TrainItem<T>>& items) {
    if (items.empty()) throw ValueError("clip_accuracy: no items");
    std::int64_t correct = 0;
    for (const auto& it : items) {
        StepOutputs<T> so = model.forward_video(nullptr, it.frames);
        const auto& yv = so.y.back().value();
        int am = 0;
        for (int k = 1; k < static_cast<int>(yv.size()); ++k)
            if (yv[static_cast<std::size_t>(k)] > yv[static_cast<std::size_t>(am)]) am = k;
        if (am == it.action) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

// Materialize training items for a split: each chunk of each clip becomes an
// item sharing the clip's paired inactive image.
inline std::vector<TrainItem<float>> build_train_items(const DatasetManifest& m, const std::string& split,
                                                       int chunk_len) {
    std::vector<TrainItem<float>> items;
    for (const auto& e : m.clips) {
        if (e.split != split) continue;
        Tensor<float> clip = load_clip_tensor(m, e);
        Tensor<float> inactive = load_inactive_tensor(m, e);
        auto chunks = chunk_frames(clip, chunk_len);
        for (std::size_t c = 0; c < chunks.size(); ++c) {
            TrainItem<float> it;
            it.frames = std::move(chunks[c]);
            it.inactive = inactive;
            it.action = e.action_id;
            it.object = e.object_id;
            it.id = chunks.size() > 1 ? e.id + "#" + std::to_string(c) : e.id;
            items.push_back(std::move(it));
        }
    }
    return items;
}

}  // namespace htk
