#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "hrg/trainer.hpp"
#include "testing.hpp"

using hrg::RunConfig;
using hrg::Tensor;
using hrg::TrainConfig;

namespace fs = std::filesystem;

namespace {

// Small, fast run description used across these tests.
RunConfig tiny_run(uint64_t seed = 42) {
    RunConfig run;
    run.train.way = 3;
    run.train.shot = 1;
    run.train.query_count = 3;
    run.train.frame_count = 4;
    run.train.channels = 8;
    run.train.epochs = 1;
    run.train.episodes_per_epoch = 10;
    run.train.prototype_count = 2;
    run.train.bank_capacity = 8;
    run.train.seed = seed;
    run.synthetic.train_classes = 5;
    run.synthetic.val_classes = 0;
    run.synthetic.test_classes = 4;
    run.synthetic.videos_per_class = 6;
    run.synthetic.frame_count = run.train.frame_count;
    run.synthetic.channels = run.train.channels;
    run.synthetic.seed = 7;
    return run;
}

std::vector<unsigned char> file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

uint64_t hash_doubles(const std::vector<double>& v, uint64_t h = 1469598103934665603ULL) {
    for (double d : v) {
        uint64_t bits;
        std::memcpy(&bits, &d, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

uint64_t hash_bank(const hrg::KnowledgeBank& bank) {
    uint64_t h = hash_doubles(bank.entries);
    h ^= static_cast<uint64_t>(bank.occupancy);
    return h;
}

uint64_t hash_model(const hrg::Model& model) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, t] : model.named_params) h = hash_doubles(t.values(), h);
    return h;
}

}  // namespace

TEST_CASE("config json round trip rejects unknown keys and bad ranges") {
    const RunConfig run = tiny_run();
    const nlohmann::json j = hrg::run_config_to_json(run);
    const RunConfig back = hrg::run_config_from_json(j);
    CHECK(hrg::run_config_to_json(back) == j);

    nlohmann::json bad = j;
    bad["learning_rte"] = 0.1;
    CHECK_THROWS_AS(hrg::run_config_from_json(bad), hrg::ConfigError);

    nlohmann::json bad_ds = j;
    bad_ds["dataset"]["nois_sigma"] = 0.5;
    CHECK_THROWS_AS(hrg::run_config_from_json(bad_ds), hrg::ConfigError);

    nlohmann::json bad_range = j;
    bad_range["kappa"] = 1.5;
    CHECK_THROWS_AS(hrg::run_config_from_json(bad_range), hrg::ConfigError);

    nlohmann::json bad_heads = j;
    bad_heads["encoder_heads"] = 3;  // does not divide channels=8
    CHECK_THROWS_AS(hrg::run_config_from_json(bad_heads), hrg::ConfigError);
}

TEST_CASE("forward episode determinism and ablation composition") {
    const RunConfig run = tiny_run();
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    const hrg::Model model = hrg::Model::init(run.train);
    const hrg::KnowledgeBank bank =
        hrg::KnowledgeBank::create(run.train.bank_capacity, run.train.channels, 0.99);

    hrg::Rng rng(5);
    const hrg::Episode ep = hrg::sample_episode(ds, hrg::Split::Train, 3, 1, 3, rng);

    const Tensor a = hrg::forward_episode(ep, model, bank, run.train).logits;
    const Tensor b = hrg::forward_episode(ep, model, bank, run.train).logits;
    CHECK(std::memcmp(a.values().data(), b.values().data(),
                      a.values().size() * sizeof(double)) == 0);

    // with both modules disabled, the logits come from encoder + metric only;
    // order flag must not matter for that baseline
    TrainConfig baseline = run.train;
    baseline.disable_isc = true;
    baseline.disable_ikt = true;
    const Tensor base1 = hrg::forward_episode(ep, model, bank, baseline).logits;
    baseline.module_order = hrg::ModuleOrder::IktIsc;
    const Tensor base2 = hrg::forward_episode(ep, model, bank, baseline).logits;
    CHECK(std::memcmp(base1.values().data(), base2.values().data(),
                      base1.values().size() * sizeof(double)) == 0);

    // zero-initialized output projections: at init the full pipeline equals
    // the baseline on an empty bank
    const Tensor full = hrg::forward_episode(ep, model, bank, run.train).logits;
    CHECK(hrgtest::max_abs_diff(full.values(), base1.values()) < 1e-12);
}

TEST_CASE("noise-free data classifies perfectly with an untrained model") {
    RunConfig run = tiny_run();
    run.synthetic.noise_sigma = 0.0;
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    const hrg::Model model = hrg::Model::init(run.train);
    const hrg::KnowledgeBank bank =
        hrg::KnowledgeBank::create(run.train.bank_capacity, run.train.channels, 0.99);
    const hrg::EvalReport report =
        hrg::evaluate(model, bank, run.train, ds, hrg::Split::Train, 40, 3);
    CHECK(report.mean_accuracy == 1.0);
}

TEST_CASE("disabled modules receive exactly zero gradient") {
    RunConfig run = tiny_run();
    run.train.disable_isc = true;
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    hrg::Model model = hrg::Model::init(run.train);
    const hrg::KnowledgeBank bank =
        hrg::KnowledgeBank::create(run.train.bank_capacity, run.train.channels, 0.99);
    hrg::Rng rng(6);
    const hrg::Episode ep = hrg::sample_episode(ds, hrg::Split::Train, 3, 1, 3, rng);
    const auto fwd = hrg::forward_episode(ep, model, bank, run.train);
    model.zero_grad();
    hrg::cross_entropy(fwd.logits, ep.query_labels).backward();
    for (const auto& [name, t] : model.named_params) {
        if (name.rfind("isc.", 0) == 0) {
            CHECK_FALSE(t.has_grad());
        }
        if (name.rfind("enc.", 0) == 0) {
            CHECK(t.has_grad());
        }
    }
}

TEST_CASE("training runs, logs every step, and zero lr freezes parameters") {
    RunConfig run = tiny_run();
    const hrg::SplitDataset ds = hrg::build_dataset(run);

    std::vector<hrg::StepLog> logs;
    const hrg::Checkpoint ckpt =
        hrg::train(run, ds, [&](const hrg::StepLog& log) { logs.push_back(log); });
    CHECK(logs.size() == 10);
    for (const auto& log : logs) CHECK(std::isfinite(log.loss));
    CHECK(ckpt.step == 10);
    CHECK(ckpt.bank.occupancy > 0);

    // lr = 0: parameters bitwise unchanged, bank still evolves
    RunConfig frozen = tiny_run();
    frozen.train.learning_rate = 0.0;
    const hrg::Model fresh = hrg::Model::init(frozen.train);
    const hrg::Checkpoint still = hrg::train(frozen, ds);
    CHECK(hash_model(still.model) == hash_model(fresh));
    CHECK(still.bank.occupancy > 0);
}

TEST_CASE("repeated single episode training drives the loss down") {
    RunConfig run = tiny_run();
    run.train.way = 2;
    run.train.query_count = 2;
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    hrg::Model model = hrg::Model::init(run.train);
    hrg::KnowledgeBank bank =
        hrg::KnowledgeBank::create(run.train.bank_capacity, run.train.channels, 0.99);
    hrg::Rng rng(8);
    const hrg::Episode ep = hrg::sample_episode(ds, hrg::Split::Train, 2, 1, 2, rng);

    hrg::AdamState opt;
    std::vector<double> losses;
    for (int step = 0; step < 20; ++step) {
        const auto fwd = hrg::forward_episode(ep, model, bank, run.train);
        const Tensor loss = hrg::cross_entropy(fwd.logits, ep.query_labels);
        losses.push_back(loss.at(0));
        model.zero_grad();
        loss.backward();
        hrg::adam_step(model, opt, 1e-3);
        hrg::update_bank(bank, fwd.prototypes_hat);
    }
    int non_monotone = 0;
    for (size_t i = 1; i < losses.size(); ++i) {
        if (losses[i] > losses[i - 1]) ++non_monotone;
    }
    CHECK(non_monotone <= 2);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("checkpoint save/load round trip is exact and resume is bitwise") {
    const RunConfig run = tiny_run();
    const hrg::SplitDataset ds = hrg::build_dataset(run);

    std::vector<double> continuous_losses;
    RunConfig two_epochs = run;
    two_epochs.train.epochs = 2;
    hrg::train(two_epochs, ds,
               [&](const hrg::StepLog& log) { continuous_losses.push_back(log.loss); });

    const hrg::Checkpoint first = hrg::train(run, ds);
    const fs::path path = fs::temp_directory_path() / "hrg_test_ckpt.hrgc";
    hrg::save_checkpoint(first, path.string());
    const hrg::Checkpoint loaded = hrg::load_checkpoint(path.string());
    CHECK(hash_model(loaded.model) == hash_model(first.model));
    CHECK(hash_bank(loaded.bank) == hash_bank(first.bank));
    CHECK(loaded.step == first.step);
    CHECK(loaded.rng_state == first.rng_state);
    CHECK(loaded.opt.step == first.opt.step);

    // resuming reproduces the continuous run's losses bitwise
    std::vector<double> resumed_losses;
    hrg::train(two_epochs, ds,
               [&](const hrg::StepLog& log) { resumed_losses.push_back(log.loss); },
               &loaded);
    REQUIRE(resumed_losses.size() == 10);
    for (size_t i = 0; i < resumed_losses.size(); ++i) {
        CHECK(resumed_losses[i] == continuous_losses[10 + i]);
    }

    // saving the same checkpoint twice gives byte-identical files
    const fs::path path2 = fs::temp_directory_path() / "hrg_test_ckpt2.hrgc";
    hrg::save_checkpoint(first, path2.string());
    CHECK(file_bytes(path.string()) == file_bytes(path2.string()));
}

TEST_CASE("evaluation is deterministic, thread-invariant, and touches nothing") {
    const RunConfig run = tiny_run();
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    const hrg::Checkpoint ckpt = hrg::train(run, ds);

    const uint64_t model_hash = hash_model(ckpt.model);
    const uint64_t bank_hash = hash_bank(ckpt.bank);

    const hrg::EvalReport a =
        hrg::evaluate(ckpt.model, ckpt.bank, run.train, ds, hrg::Split::Test, 50, 11, 1);
    const hrg::EvalReport b =
        hrg::evaluate(ckpt.model, ckpt.bank, run.train, ds, hrg::Split::Test, 50, 11, 1);
    const hrg::EvalReport c =
        hrg::evaluate(ckpt.model, ckpt.bank, run.train, ds, hrg::Split::Test, 50, 11, 3);
    CHECK(a.per_task == b.per_task);
    CHECK(a.per_task == c.per_task);
    CHECK(a.mean_accuracy == b.mean_accuracy);
    CHECK(a.num_tasks == 50);
    CHECK(a.per_task.size() == 50);
    CHECK(a.ci95 >= 0.0);

    // no state was touched by evaluation
    CHECK(hash_model(ckpt.model) == model_hash);
    CHECK(hash_bank(ckpt.bank) == bank_hash);
}

TEST_CASE("end-to-end determinism: identical seeds give identical artifacts") {
    const RunConfig run = tiny_run(1234);
    const hrg::SplitDataset ds = hrg::build_dataset(run);

    const hrg::Checkpoint a = hrg::train(run, ds);
    const hrg::Checkpoint b = hrg::train(run, ds);
    const fs::path pa = fs::temp_directory_path() / "hrg_det_a.hrgc";
    const fs::path pb = fs::temp_directory_path() / "hrg_det_b.hrgc";
    hrg::save_checkpoint(a, pa.string());
    hrg::save_checkpoint(b, pb.string());
    CHECK(file_bytes(pa.string()) == file_bytes(pb.string()));

    const hrg::EvalReport ra =
        hrg::evaluate(a.model, a.bank, run.train, ds, hrg::Split::Test, 30, 5);
    const hrg::EvalReport rb =
        hrg::evaluate(b.model, b.bank, run.train, ds, hrg::Split::Test, 30, 5);
    CHECK(ra.per_task == rb.per_task);
}

TEST_CASE("full episode gradient suite against finite differences") {
    // tiny pipeline: T=3, C=4, N=2, K=1, L=2, one encoder layer
    RunConfig run = tiny_run();
    run.train.way = 2;
    run.train.shot = 1;
    run.train.query_count = 2;
    run.train.frame_count = 3;
    run.train.channels = 4;
    run.train.prototype_count = 2;
    run.synthetic.frame_count = 3;
    run.synthetic.channels = 4;
    const hrg::SplitDataset ds = hrg::build_dataset(run);
    hrg::Model model = hrg::Model::init(run.train);
    hrg::KnowledgeBank bank =
        hrg::KnowledgeBank::create(run.train.bank_capacity, run.train.channels, 0.99);
    // a few live bank entries so retrieval participates
    hrg::Rng fill(9);
    hrg::update_bank(bank, hrgtest::random_tensor(fill, {4, 4}, 0.5, false));
    // move the zero-initialized output projections off zero so every path
    // carries signal
    for (auto& [name, t] : model.named_params) {
        if (name.find("attn.wo") != std::string::npos) {
            for (auto& v : t.mutable_values()) v += fill.normal(0.0, 0.05);
        }
    }

    hrg::Rng rng(10);
    const hrg::Episode ep = hrg::sample_episode(ds, hrg::Split::Train, 2, 1, 2, rng);

    std::vector<Tensor> leaves;
    for (const auto& [name, t] : model.named_params) leaves.push_back(t);
    const double err = hrgtest::fd_max_rel_err(
        [&] {
            const auto fwd = hrg::forward_episode(ep, model, bank, run.train);
            return hrg::cross_entropy(fwd.logits, ep.query_labels);
        },
        leaves, 1e-5, 4);
    CHECK(err < 1e-4);
}
