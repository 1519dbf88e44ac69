#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hrg/rng.hpp"
#include "hrg/tensor.hpp"

namespace hrg {

// One video as per-frame feature vectors.
struct FeatureSequence {
    std::string video_id;
    int class_id = 0;
    Tensor frames;  // [T x C]
};

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// Class-grouped sequences with disjoint train/val/test class partitions.
struct SplitDataset {
    int frame_count = 0;
    int channels = 0;
    std::map<int, std::vector<FeatureSequence>> by_class;  // sorted by video_id
    std::map<int, Split> class_split;

    std::vector<int> classes_in(Split s) const;
    int64_t video_count() const;
};

// One N-way K-shot task. Support is class-major (class 0's K videos first);
// queries are drawn round-robin over the episode classes. Labels are the
// rank of each class in the sampled order.
struct Episode {
    int way = 0;
    int shot = 0;
    int query_count = 0;
    std::vector<FeatureSequence> support;
    std::vector<int> support_labels;
    std::vector<FeatureSequence> query;
    std::vector<int> query_labels;
};

struct SyntheticConfig {
    int train_classes = 10;
    int val_classes = 0;
    int test_classes = 5;
    int videos_per_class = 20;
    int frame_count = 8;
    int channels = 32;
    double noise_sigma = 0.3;
    double warp_strength = 0.25;
    uint64_t seed = 42;
};

// Synthetic temporal-pattern data. Each class owns a smooth latent
// trajectory (a few random Fourier components along random directions from
// a shared atom pool); each video samples it under a random monotone time
// warp plus i.i.d. Gaussian noise, then unit-normalizes every frame.
SplitDataset gen_synthetic(const SyntheticConfig& cfg);

// Noise-free, unwarped class template frames, unit-normalized. Test hook
// for alignment-based properties of the generator.
Tensor synthetic_class_template(const SyntheticConfig& cfg, int class_id);

// Index file: one JSON object per line with video_id/class_id/split/path.
// Feature paths resolve relative to the index file's directory.
SplitDataset load_dataset(const std::string& index_path);

Episode sample_episode(const SplitDataset& ds, Split split, int way, int shot,
                       int query_count, Rng& rng);

// HRG1 feature file: magic "HRG1", u32 version=1, u32 T, u32 C, then T*C
// little-endian float32 values row-major.
void write_feature_file(const std::string& path, const Tensor& frames);
Tensor read_feature_file(const std::string& path);

// Writes <dir>/index.jsonl plus <dir>/features/<video_id>.hrg1.
void write_dataset(const SplitDataset& ds, const std::string& dir);

}  // namespace hrg
