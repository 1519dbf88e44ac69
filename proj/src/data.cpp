#include "hrg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "hrg/serial.hpp"

namespace fs = std::filesystem;

namespace hrg {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw IoError("unknown split name '" + name + "'");
}

std::vector<int> SplitDataset::classes_in(Split s) const {
    std::vector<int> out;
    for (const auto& [cls, sp] : class_split) {
        if (sp == s) out.push_back(cls);
    }
    return out;  // map iteration is already sorted
}

int64_t SplitDataset::video_count() const {
    int64_t n = 0;
    for (const auto& [cls, vids] : by_class) n += static_cast<int64_t>(vids.size());
    return n;
}

// ---- synthetic generator ---------------------------------------------------

namespace {

constexpr int kAtomPool = 8;       // shared direction pool
constexpr int kComponents = 4;     // Fourier components per class

// Stream ids for sub-generators; structural, so any template or video is
// reproducible without replaying the draws before it.
uint64_t atoms_stream() { return 0; }
uint64_t class_stream(int cls) { return 1 + static_cast<uint64_t>(cls); }
uint64_t video_stream(const SyntheticConfig& cfg, int cls, int vid) {
    const uint64_t total =
        static_cast<uint64_t>(cfg.train_classes + cfg.val_classes + cfg.test_classes);
    return 1 + total + static_cast<uint64_t>(cls) * cfg.videos_per_class +
           static_cast<uint64_t>(vid);
}

struct ClassModel {
    // component j contributes amp[j]*cos(2*pi*freq[j]*tau + phase[j]) along
    // the unit direction atoms[atom_idx[j]].
    std::vector<int> atom_idx;
    std::vector<double> amp, freq, phase;
};

std::vector<std::vector<double>> draw_atoms(const SyntheticConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, atoms_stream()));
    std::vector<std::vector<double>> atoms(kAtomPool);
    for (auto& a : atoms) {
        a.resize(static_cast<size_t>(cfg.channels));
        double sq = 0.0;
        for (double& v : a) {
            v = rng.normal();
            sq += v * v;
        }
        const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
        for (double& v : a) v *= inv;
    }
    return atoms;
}

ClassModel draw_class_model(const SyntheticConfig& cfg, int cls) {
    Rng rng(Rng::mix(cfg.seed, class_stream(cls)));
    ClassModel m;
    const int comps = std::min(kComponents, kAtomPool);
    m.atom_idx = rng.sample_without_replacement(kAtomPool, comps);
    for (int j = 0; j < comps; ++j) {
        m.amp.push_back(rng.uniform(0.6, 1.4));
        m.freq.push_back(rng.uniform(0.5, 2.0));
        m.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    return m;
}

void eval_template(const ClassModel& m,
                   const std::vector<std::vector<double>>& atoms, double tau,
                   double* out, int channels) {
    std::fill_n(out, channels, 0.0);
    for (size_t j = 0; j < m.atom_idx.size(); ++j) {
        const double a =
            m.amp[j] * std::cos(2.0 * std::numbers::pi * m.freq[j] * tau + m.phase[j]);
        const std::vector<double>& dir = atoms[static_cast<size_t>(m.atom_idx[j])];
        for (int k = 0; k < channels; ++k) out[k] += a * dir[k];
    }
}

void normalize_frame(double* f, int channels) {
    double sq = 0.0;
    for (int k = 0; k < channels; ++k) sq += f[k] * f[k];
    const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
    for (int k = 0; k < channels; ++k) f[k] *= inv;
}

}  // namespace

SplitDataset gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.train_classes < 0 || cfg.val_classes < 0 || cfg.test_classes < 0 ||
        cfg.train_classes + cfg.val_classes + cfg.test_classes < 1) {
        throw ContractError("gen_synthetic: need at least one class");
    }
    if (cfg.videos_per_class < 1) {
        throw ContractError("gen_synthetic: videos_per_class must be positive");
    }
    if (cfg.frame_count < 2) {
        throw ContractError("gen_synthetic: frame_count must be >= 2");
    }
    if (cfg.channels < 2) {
        throw ContractError("gen_synthetic: channels must be >= 2");
    }
    if (cfg.noise_sigma < 0.0 || cfg.warp_strength < 0.0) {
        throw ContractError("gen_synthetic: noise/warp must be non-negative");
    }

    const auto atoms = draw_atoms(cfg);
    const int total = cfg.train_classes + cfg.val_classes + cfg.test_classes;
    const int t_count = cfg.frame_count, c_count = cfg.channels;

    SplitDataset ds;
    ds.frame_count = t_count;
    ds.channels = c_count;
    for (int cls = 0; cls < total; ++cls) {
        const ClassModel model = draw_class_model(cfg, cls);
        const Split sp = cls < cfg.train_classes ? Split::Train
                         : cls < cfg.train_classes + cfg.val_classes ? Split::Val
                                                                     : Split::Test;
        ds.class_split[cls] = sp;
        auto& vids = ds.by_class[cls];
        for (int v = 0; v < cfg.videos_per_class; ++v) {
            Rng rng(Rng::mix(cfg.seed, video_stream(cfg, cls, v)));

            // Monotone time warp: normalized cumulative sum of positive
            // increments exp(s*z); s = 0 degenerates to the uniform grid.
            const double s = rng.uniform(0.0, cfg.warp_strength);
            std::vector<double> inc(static_cast<size_t>(t_count - 1));
            double inc_total = 0.0;
            for (double& g : inc) {
                g = std::exp(s * rng.normal());
                inc_total += g;
            }
            std::vector<double> pos(static_cast<size_t>(t_count), 0.0);
            double run = 0.0;
            for (int t = 1; t < t_count; ++t) {
                run += inc[static_cast<size_t>(t - 1)];
                pos[static_cast<size_t>(t)] = run / inc_total;
            }

            std::vector<double> frames(static_cast<size_t>(t_count) * c_count);
            for (int t = 0; t < t_count; ++t) {
                double* f = frames.data() + static_cast<size_t>(t) * c_count;
                eval_template(model, atoms, pos[static_cast<size_t>(t)], f, c_count);
                for (int k = 0; k < c_count; ++k) {
                    f[k] += cfg.noise_sigma * rng.normal();
                }
                normalize_frame(f, c_count);
            }

            std::ostringstream id;
            id << "c" << (cls < 100 ? (cls < 10 ? "00" : "0") : "") << cls << "_v"
               << (v < 100 ? (v < 10 ? "00" : "0") : "") << v;
            FeatureSequence seq;
            seq.video_id = id.str();
            seq.class_id = cls;
            seq.frames = Tensor::from_data({t_count, c_count}, std::move(frames));
            vids.push_back(std::move(seq));
        }
        std::sort(vids.begin(), vids.end(),
                  [](const FeatureSequence& a, const FeatureSequence& b) {
                      return a.video_id < b.video_id;
                  });
    }
    return ds;
}

Tensor synthetic_class_template(const SyntheticConfig& cfg, int class_id) {
    const auto atoms = draw_atoms(cfg);
    const ClassModel model = draw_class_model(cfg, class_id);
    const int t_count = cfg.frame_count, c_count = cfg.channels;
    std::vector<double> frames(static_cast<size_t>(t_count) * c_count);
    for (int t = 0; t < t_count; ++t) {
        double* f = frames.data() + static_cast<size_t>(t) * c_count;
        eval_template(model, atoms, static_cast<double>(t) / (t_count - 1), f, c_count);
        normalize_frame(f, c_count);
    }
    return Tensor::from_data({t_count, c_count}, std::move(frames));
}

// ---- feature files and index ---------------------------------------------

void write_feature_file(const std::string& path, const Tensor& frames) {
    if (frames.rank() != 2) throw ShapeError("write_feature_file: frames must be rank 2");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    io::write_magic(os, "HRG1");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<uint32_t>(frames.dim(0)));
    io::write_u32(os, static_cast<uint32_t>(frames.dim(1)));
    for (double v : frames.values()) io::write_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor read_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open feature file '" + path + "'");
    if (!io::read_magic(is, "HRG1")) {
        throw IoError("bad magic in feature file '" + path + "'");
    }
    const uint32_t version = io::read_u32(is);
    if (version != 1) {
        throw IoError("unsupported feature file version " + std::to_string(version) +
                      " in '" + path + "'");
    }
    const uint32_t t = io::read_u32(is);
    const uint32_t c = io::read_u32(is);
    if (t == 0 || c == 0 || t > 100000 || c > 100000) {
        throw IoError("implausible header T=" + std::to_string(t) +
                      " C=" + std::to_string(c) + " in '" + path + "'");
    }
    std::vector<double> data(static_cast<size_t>(t) * c);
    for (double& v : data) {
        const float f = io::read_f32(is);
        if (!std::isfinite(f)) {
            throw IoError("non-finite value in feature file '" + path + "'");
        }
        v = static_cast<double>(f);
    }
    return Tensor::from_data({static_cast<int>(t), static_cast<int>(c)},
                             std::move(data));
}

void write_dataset(const SplitDataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "features");
    std::ofstream index(fs::path(dir) / "index.jsonl");
    if (!index) throw IoError("cannot open index for writing in '" + dir + "'");
    for (const auto& [cls, vids] : ds.by_class) {
        for (const FeatureSequence& seq : vids) {
            const std::string rel = "features/" + seq.video_id + ".hrg1";
            write_feature_file((fs::path(dir) / rel).string(), seq.frames);
            nlohmann::json rec;
            rec["video_id"] = seq.video_id;
            rec["class_id"] = seq.class_id;
            rec["split"] = split_name(ds.class_split.at(cls));
            rec["path"] = rel;
            index << rec.dump() << "\n";
        }
    }
    if (!index) throw IoError("index write failed in '" + dir + "'");
}

SplitDataset load_dataset(const std::string& index_path) {
    std::ifstream is(index_path);
    if (!is) throw IoError("cannot open index '" + index_path + "'");
    const fs::path base = fs::path(index_path).parent_path();

    SplitDataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("index line " + std::to_string(line_no) +
                          ": malformed JSON: " + e.what());
        }
        if (!rec.contains("video_id") || !rec["video_id"].is_string()) {
            throw IoError("index line " + std::to_string(line_no) +
                          ": missing video_id");
        }
        const std::string vid = rec["video_id"].get<std::string>();
        auto fail = [&](const std::string& what) -> IoError {
            return IoError("record '" + vid + "': " + what);
        };
        if (!rec.contains("class_id") || !rec["class_id"].is_number_integer()) {
            throw fail("missing or non-integer class_id");
        }
        if (!rec.contains("split") || !rec["split"].is_string()) {
            throw fail("missing split");
        }
        if (!rec.contains("path") || !rec["path"].is_string()) {
            throw fail("missing path");
        }
        const int cls = rec["class_id"].get<int>();
        if (cls < 0) throw fail("negative class_id");
        const Split sp = split_from_name(rec["split"].get<std::string>());

        fs::path fpath(rec["path"].get<std::string>());
        if (fpath.is_relative()) fpath = base / fpath;

        FeatureSequence seq;
        seq.video_id = vid;
        seq.class_id = cls;
        try {
            seq.frames = read_feature_file(fpath.string());
        } catch (const IoError& e) {
            throw fail(e.what());
        }
        const int t = seq.frames.dim(0), c = seq.frames.dim(1);
        if (ds.frame_count == 0) {
            ds.frame_count = t;
            ds.channels = c;
        } else if (t != ds.frame_count || c != ds.channels) {
            throw fail("inconsistent dimensions T=" + std::to_string(t) + " C=" +
                       std::to_string(c) + ", expected T=" +
                       std::to_string(ds.frame_count) + " C=" +
                       std::to_string(ds.channels));
        }
        auto [it, inserted] = ds.class_split.emplace(cls, sp);
        if (!inserted && it->second != sp) {
            throw fail("class " + std::to_string(cls) +
                       " appears in multiple splits");
        }
        ds.by_class[cls].push_back(std::move(seq));
    }
    for (auto& [cls, vids] : ds.by_class) {
        std::sort(vids.begin(), vids.end(),
                  [](const FeatureSequence& a, const FeatureSequence& b) {
                      return a.video_id < b.video_id;
                  });
    }
    return ds;
}

// ---- episode sampling -------------------------------------------------------

Episode sample_episode(const SplitDataset& ds, Split split, int way, int shot,
                       int query_count, Rng& rng) {
    if (way < 1 || shot < 1 || query_count < 1) {
        throw ContractError("sample_episode: way, shot, query_count must be positive");
    }
    const std::vector<int> classes = ds.classes_in(split);
    if (static_cast<int>(classes.size()) < way) {
        throw SamplingError("sample_episode: split '" + std::string(split_name(split)) +
                            "' has " + std::to_string(classes.size()) +
                            " classes, need " + std::to_string(way));
    }
    const int max_queries_per_class = (query_count + way - 1) / way;
    for (int cls : classes) {
        const int have = static_cast<int>(ds.by_class.at(cls).size());
        if (have < shot + max_queries_per_class) {
            throw SamplingError("sample_episode: class " + std::to_string(cls) +
                                " has " + std::to_string(have) + " videos, need " +
                                std::to_string(shot + max_queries_per_class));
        }
    }

    const std::vector<int> picked =
        rng.sample_without_replacement(static_cast<int>(classes.size()), way);

    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.query_count = query_count;
    std::vector<std::vector<const FeatureSequence*>> query_pool(
        static_cast<size_t>(way));
    for (int label = 0; label < way; ++label) {
        const int cls = classes[static_cast<size_t>(picked[static_cast<size_t>(label)])];
        const auto& vids = ds.by_class.at(cls);
        const int per_class_queries =
            query_count / way + (label < query_count % way ? 1 : 0);
        const std::vector<int> chosen = rng.sample_without_replacement(
            static_cast<int>(vids.size()), shot + per_class_queries);
        for (int i = 0; i < shot; ++i) {
            ep.support.push_back(vids[static_cast<size_t>(chosen[static_cast<size_t>(i)])]);
            ep.support_labels.push_back(label);
        }
        for (int i = shot; i < shot + per_class_queries; ++i) {
            query_pool[static_cast<size_t>(label)].push_back(
                &vids[static_cast<size_t>(chosen[static_cast<size_t>(i)])]);
        }
    }
    for (size_t round = 0; ep.query.size() < static_cast<size_t>(query_count); ++round) {
        for (int label = 0; label < way; ++label) {
            if (round < query_pool[static_cast<size_t>(label)].size()) {
                ep.query.push_back(*query_pool[static_cast<size_t>(label)][round]);
                ep.query_labels.push_back(label);
            }
        }
    }
    return ep;
}

}  // namespace hrg
