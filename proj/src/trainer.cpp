#include "hrg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "hrg/serial.hpp"

namespace hrg {

const char* module_order_name(ModuleOrder o) {
    return o == ModuleOrder::IscIkt ? "isc_ikt" : "ikt_isc";
}

ModuleOrder module_order_from_name(const std::string& name) {
    if (name == "isc_ikt") return ModuleOrder::IscIkt;
    if (name == "ikt_isc") return ModuleOrder::IktIsc;
    throw ConfigError("unknown module order '" + name + "'");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    require(way >= 1, "way must be >= 1");
    require(shot >= 1, "shot must be >= 1");
    require(query_count >= 1, "query_count must be >= 1");
    require(frame_count >= 1, "frame_count must be >= 1");
    require(channels >= 2, "channels must be >= 2");
    require(epochs >= 1, "epochs must be >= 1");
    require(episodes_per_epoch >= 1, "episodes_per_epoch must be >= 1");
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0,1]");
    for (int m : lr_milestones) require(m >= 1, "lr milestones are 1-based epochs");
    require(kappa > 0.0 && kappa <= 1.0, "kappa must be in (0,1]");
    require(prototype_count >= 1, "prototypes must be >= 1");
    require(bank_capacity >= 1, "bank_size must be >= 1");
    require(momentum >= 0.0 && momentum <= 1.0, "momentum must be in [0,1]");
    require(gamma >= 0.0, "gamma must be >= 0");
    require(metric != MetricKind::Otam || gamma > 0.0,
            "otam metric requires gamma > 0");
    require(tau > 0.0, "tau must be > 0");
    require(encoder_layers >= 1, "encoder_layers must be >= 1");
    for (int h : {encoder_heads, isc_heads, ikt_heads}) {
        require(h >= 1 && channels % h == 0, "heads must divide channels");
    }
    require(pe_scale >= 0.0, "pe_scale must be >= 0");
}

nlohmann::json config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["way"] = c.way;
    j["shot"] = c.shot;
    j["query_count"] = c.query_count;
    j["frame_count"] = c.frame_count;
    j["channels"] = c.channels;
    j["epochs"] = c.epochs;
    j["episodes_per_epoch"] = c.episodes_per_epoch;
    j["learning_rate"] = c.learning_rate;
    j["lr_milestones"] = c.lr_milestones;
    j["lr_decay"] = c.lr_decay;
    j["seed"] = c.seed;
    j["mask_strategy"] = mask_strategy_name(c.mask_strategy);
    j["metric"] = metric_name(c.metric);
    j["kappa"] = c.kappa;
    j["prototypes"] = c.prototype_count;
    j["bank_size"] = c.bank_capacity;
    j["momentum"] = c.momentum;
    j["gamma"] = c.gamma;
    j["tau"] = c.tau;
    j["module_order"] = module_order_name(c.module_order);
    j["disable_isc"] = c.disable_isc;
    j["disable_ikt"] = c.disable_ikt;
    j["retrieval_weighting"] = retrieval_weighting_name(c.retrieval_weighting);
    j["encoder_layers"] = c.encoder_layers;
    j["encoder_heads"] = c.encoder_heads;
    j["isc_heads"] = c.isc_heads;
    j["ikt_heads"] = c.ikt_heads;
    j["pe_scale"] = c.pe_scale;
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "way", "shot", "query_count", "frame_count", "channels", "epochs",
        "episodes_per_epoch", "learning_rate", "lr_milestones", "lr_decay",
        "seed", "mask_strategy", "metric", "kappa", "prototypes", "bank_size",
        "momentum", "gamma", "tau", "module_order", "disable_isc", "disable_ikt",
        "retrieval_weighting", "encoder_layers", "encoder_heads", "isc_heads",
        "ikt_heads", "pe_scale"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (known.find(key) == known.end()) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    TrainConfig c;
    try {
        if (j.contains("way")) c.way = j["way"].get<int>();
        if (j.contains("shot")) c.shot = j["shot"].get<int>();
        if (j.contains("query_count")) c.query_count = j["query_count"].get<int>();
        if (j.contains("frame_count")) c.frame_count = j["frame_count"].get<int>();
        if (j.contains("channels")) c.channels = j["channels"].get<int>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
        if (j.contains("episodes_per_epoch")) {
            c.episodes_per_epoch = j["episodes_per_epoch"].get<int>();
        }
        if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
        if (j.contains("lr_milestones")) {
            c.lr_milestones = j["lr_milestones"].get<std::vector<int>>();
        }
        if (j.contains("lr_decay")) c.lr_decay = j["lr_decay"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
        if (j.contains("mask_strategy")) {
            c.mask_strategy = mask_strategy_from_name(j["mask_strategy"].get<std::string>());
        }
        if (j.contains("metric")) c.metric = metric_from_name(j["metric"].get<std::string>());
        if (j.contains("kappa")) c.kappa = j["kappa"].get<double>();
        if (j.contains("prototypes")) c.prototype_count = j["prototypes"].get<int>();
        if (j.contains("bank_size")) c.bank_capacity = j["bank_size"].get<int>();
        if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
        if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
        if (j.contains("tau")) c.tau = j["tau"].get<double>();
        if (j.contains("module_order")) {
            c.module_order = module_order_from_name(j["module_order"].get<std::string>());
        }
        if (j.contains("disable_isc")) c.disable_isc = j["disable_isc"].get<bool>();
        if (j.contains("disable_ikt")) c.disable_ikt = j["disable_ikt"].get<bool>();
        if (j.contains("retrieval_weighting")) {
            c.retrieval_weighting =
                retrieval_weighting_from_name(j["retrieval_weighting"].get<std::string>());
        }
        if (j.contains("encoder_layers")) c.encoder_layers = j["encoder_layers"].get<int>();
        if (j.contains("encoder_heads")) c.encoder_heads = j["encoder_heads"].get<int>();
        if (j.contains("isc_heads")) c.isc_heads = j["isc_heads"].get<int>();
        if (j.contains("ikt_heads")) c.ikt_heads = j["ikt_heads"].get<int>();
        if (j.contains("pe_scale")) c.pe_scale = j["pe_scale"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    train.validate();
    if (source == Source::Synthetic) {
        if (synthetic.frame_count != train.frame_count ||
            synthetic.channels != train.channels) {
            throw ConfigError("config: dataset frame_count/channels must mirror the train section");
        }
        const int needed_train = train.way;
        if (synthetic.train_classes < needed_train) {
            throw ConfigError("config: synthetic train_classes below episode way");
        }
    } else if (index_path.empty()) {
        throw ConfigError("config: dataset source 'files' needs index_path");
    }
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j = config_to_json(cfg.train);
    nlohmann::json ds;
    if (cfg.source == RunConfig::Source::Synthetic) {
        ds["source"] = "synthetic";
        ds["train_classes"] = cfg.synthetic.train_classes;
        ds["val_classes"] = cfg.synthetic.val_classes;
        ds["test_classes"] = cfg.synthetic.test_classes;
        ds["videos_per_class"] = cfg.synthetic.videos_per_class;
        ds["noise_sigma"] = cfg.synthetic.noise_sigma;
        ds["warp_strength"] = cfg.synthetic.warp_strength;
        ds["data_seed"] = cfg.synthetic.seed;
    } else {
        ds["source"] = "files";
        ds["index_path"] = cfg.index_path;
    }
    j["dataset"] = std::move(ds);
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig cfg;
    nlohmann::json train_part = j;
    if (j.contains("dataset")) train_part.erase("dataset");
    cfg.train = config_from_json(train_part);

    if (j.contains("dataset")) {
        const nlohmann::json& ds = j["dataset"];
        if (!ds.is_object()) throw ConfigError("config: dataset must be an object");
        static const std::set<std::string> known = {
            "source",          "train_classes", "val_classes",
            "test_classes",    "videos_per_class", "noise_sigma",
            "warp_strength",   "data_seed",     "index_path"};
        for (const auto& [key, value] : ds.items()) {
            if (known.find(key) == known.end()) {
                throw ConfigError("config: unknown dataset key '" + key + "'");
            }
        }
        try {
            const std::string source =
                ds.contains("source") ? ds["source"].get<std::string>() : "synthetic";
            if (source == "synthetic") {
                cfg.source = RunConfig::Source::Synthetic;
            } else if (source == "files") {
                cfg.source = RunConfig::Source::Files;
            } else {
                throw ConfigError("config: unknown dataset source '" + source + "'");
            }
            if (ds.contains("train_classes")) cfg.synthetic.train_classes = ds["train_classes"].get<int>();
            if (ds.contains("val_classes")) cfg.synthetic.val_classes = ds["val_classes"].get<int>();
            if (ds.contains("test_classes")) cfg.synthetic.test_classes = ds["test_classes"].get<int>();
            if (ds.contains("videos_per_class")) cfg.synthetic.videos_per_class = ds["videos_per_class"].get<int>();
            if (ds.contains("noise_sigma")) cfg.synthetic.noise_sigma = ds["noise_sigma"].get<double>();
            if (ds.contains("warp_strength")) cfg.synthetic.warp_strength = ds["warp_strength"].get<double>();
            if (ds.contains("data_seed")) cfg.synthetic.seed = ds["data_seed"].get<uint64_t>();
            if (ds.contains("index_path")) cfg.index_path = ds["index_path"].get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: dataset: ") + e.what());
        }
    }
    cfg.synthetic.frame_count = cfg.train.frame_count;
    cfg.synthetic.channels = cfg.train.channels;
    cfg.validate();
    return cfg;
}

SplitDataset build_dataset(const RunConfig& cfg) {
    if (cfg.source == RunConfig::Source::Synthetic) {
        SyntheticConfig syn = cfg.synthetic;
        syn.frame_count = cfg.train.frame_count;
        syn.channels = cfg.train.channels;
        return gen_synthetic(syn);
    }
    return load_dataset(cfg.index_path);
}

// ---- model ------------------------------------------------------------------

namespace {

constexpr uint64_t kParamStream = 101;
constexpr uint64_t kEpisodeStream = 202;

Tensor init_matrix(Rng& rng, int r, int c, double sd) {
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (double& x : v) x = rng.normal(0.0, sd);
    return Tensor::parameter({r, c}, std::move(v));
}

Tensor init_zero_matrix(int r, int c) {
    return Tensor::parameter({r, c}, std::vector<double>(static_cast<size_t>(r) * c, 0.0));
}

Tensor init_gain(int c) {
    return Tensor::parameter({c}, std::vector<double>(static_cast<size_t>(c), 1.0));
}

Tensor init_bias(int c) {
    return Tensor::parameter({c}, std::vector<double>(static_cast<size_t>(c), 0.0));
}

}  // namespace

Model Model::init(const TrainConfig& cfg) {
    cfg.validate();
    Rng rng(Rng::mix(cfg.seed, kParamStream));
    const int c = cfg.channels;
    const int hidden = 2 * c;
    constexpr double kSd = 0.02;

    Model model;
    auto reg = [&model](const std::string& name, const Tensor& t) {
        model.named_params.emplace_back(name, t);
    };

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        EncoderLayerParams layer;
        layer.ln1_gain = init_gain(c);
        layer.ln1_bias = init_bias(c);
        layer.attn.num_heads = cfg.encoder_heads;
        layer.attn.wq = init_matrix(rng, c, c, kSd);
        layer.attn.wk = init_matrix(rng, c, c, kSd);
        layer.attn.wv = init_matrix(rng, c, c, kSd);
        layer.attn.wo = init_matrix(rng, c, c, kSd);
        layer.ln2_gain = init_gain(c);
        layer.ln2_bias = init_bias(c);
        layer.ffn_w1 = init_matrix(rng, c, hidden, kSd);
        layer.ffn_w2 = init_matrix(rng, hidden, c, kSd);

        const std::string p = "enc." + std::to_string(l) + ".";
        reg(p + "ln1.gain", layer.ln1_gain);
        reg(p + "ln1.bias", layer.ln1_bias);
        reg(p + "attn.wq", layer.attn.wq);
        reg(p + "attn.wk", layer.attn.wk);
        reg(p + "attn.wv", layer.attn.wv);
        reg(p + "attn.wo", layer.attn.wo);
        reg(p + "ln2.gain", layer.ln2_gain);
        reg(p + "ln2.bias", layer.ln2_bias);
        reg(p + "ffn.w1", layer.ffn_w1);
        reg(p + "ffn.w2", layer.ffn_w2);
        model.encoder.layers.push_back(std::move(layer));
    }
    model.encoder.pe_scale = cfg.pe_scale;

    // ISC and IKT output projections start at zero so both residual blocks
    // begin as exact identities and only move where gradients lead.
    model.isc.ln_gain = init_gain(c);
    model.isc.ln_bias = init_bias(c);
    model.isc.attn.num_heads = cfg.isc_heads;
    model.isc.attn.wq = init_matrix(rng, c, c, kSd);
    model.isc.attn.wk = init_matrix(rng, c, c, kSd);
    model.isc.attn.wv = init_matrix(rng, c, c, kSd);
    model.isc.attn.wo = init_zero_matrix(c, c);
    reg("isc.ln.gain", model.isc.ln_gain);
    reg("isc.ln.bias", model.isc.ln_bias);
    reg("isc.attn.wq", model.isc.attn.wq);
    reg("isc.attn.wk", model.isc.attn.wk);
    reg("isc.attn.wv", model.isc.attn.wv);
    reg("isc.attn.wo", model.isc.attn.wo);

    model.prototypes = init_matrix(rng, cfg.prototype_count, c, kSd);
    model.ikt.key_proj = init_matrix(rng, c, c, kSd);
    model.ikt.value_proj = init_matrix(rng, c, c, kSd);
    model.ikt.ln_gain = init_gain(c);
    model.ikt.ln_bias = init_bias(c);
    model.ikt.attn.num_heads = cfg.ikt_heads;
    model.ikt.attn.wq = init_matrix(rng, c, c, kSd);
    model.ikt.attn.wk = init_matrix(rng, c, c, kSd);
    model.ikt.attn.wv = init_matrix(rng, c, c, kSd);
    model.ikt.attn.wo = init_zero_matrix(c, c);
    reg("ikt.prototypes", model.prototypes);
    reg("ikt.key_proj", model.ikt.key_proj);
    reg("ikt.value_proj", model.ikt.value_proj);
    reg("ikt.ln.gain", model.ikt.ln_gain);
    reg("ikt.ln.bias", model.ikt.ln_bias);
    reg("ikt.attn.wq", model.ikt.attn.wq);
    reg("ikt.attn.wk", model.ikt.attn.wk);
    reg("ikt.attn.wv", model.ikt.attn.wv);
    reg("ikt.attn.wo", model.ikt.attn.wo);
    return model;
}

void Model::zero_grad() {
    for (auto& [name, t] : named_params) t.zero_grad();
}

// ---- forward ------------------------------------------------------------------

EpisodeForward forward_episode(const Episode& ep, const Model& model,
                               const KnowledgeBank& bank, const TrainConfig& cfg) {
    const int nk = ep.way * ep.shot;
    const int l = static_cast<int>(ep.query.size());
    const int t = cfg.frame_count;
    if (static_cast<int>(ep.support.size()) != nk || l < 1) {
        throw ContractError("forward_episode: malformed episode");
    }

    std::vector<Tensor> stacked;
    stacked.reserve(static_cast<size_t>(nk + l));
    for (const FeatureSequence& s : ep.support) stacked.push_back(s.frames);
    for (const FeatureSequence& q : ep.query) stacked.push_back(q.frames);
    const Tensor encoded =
        temporal_encode(concat_rows(stacked), nk + l, t, model.encoder);

    std::vector<int> sidx(static_cast<size_t>(nk) * t), qidx(static_cast<size_t>(l) * t);
    for (size_t i = 0; i < sidx.size(); ++i) sidx[i] = static_cast<int>(i);
    for (size_t i = 0; i < qidx.size(); ++i) qidx[i] = static_cast<int>(nk * t + i);
    Tensor f_s = gather_rows(encoded, sidx);
    Tensor f_q = gather_rows(encoded, qidx);

    EpisodeForward out;
    auto apply_isc = [&]() {
        const InteractionMask mask = build_mask(cfg.mask_strategy, ep.way, ep.shot, l);
        auto [s2, q2] = inter_video_correlate(f_s, nk, f_q, l, t, mask, model.isc);
        f_s = std::move(s2);
        f_q = std::move(q2);
    };
    auto apply_ikt = [&]() {
        out.prototypes_hat = construct_prototypes(model.prototypes, f_s, model.ikt);
        const Tensor retrieved =
            retrieve(out.prototypes_hat, bank, cfg.kappa, cfg.retrieval_weighting);
        f_s = aggregate(f_s, out.prototypes_hat, retrieved, model.ikt);
        // Queries stay untouched by design: the knowledge path transforms
        // support features only.
    };
    if (cfg.module_order == ModuleOrder::IscIkt) {
        if (!cfg.disable_isc) apply_isc();
        if (!cfg.disable_ikt) apply_ikt();
    } else {
        if (!cfg.disable_ikt) apply_ikt();
        if (!cfg.disable_isc) apply_isc();
    }

    std::vector<Tensor> prototypes;
    prototypes.reserve(static_cast<size_t>(ep.way));
    std::vector<int> rows(static_cast<size_t>(t));
    for (int n = 0; n < ep.way; ++n) {
        std::vector<Tensor> members;
        members.reserve(static_cast<size_t>(ep.shot));
        for (int k = 0; k < ep.shot; ++k) {
            const int video = n * ep.shot + k;
            for (int i = 0; i < t; ++i) rows[static_cast<size_t>(i)] = video * t + i;
            members.push_back(gather_rows(f_s, rows));
        }
        prototypes.push_back(class_prototype(members));
    }
    std::vector<Tensor> queries;
    queries.reserve(static_cast<size_t>(l));
    for (int q = 0; q < l; ++q) {
        for (int i = 0; i < t; ++i) rows[static_cast<size_t>(i)] = q * t + i;
        queries.push_back(gather_rows(f_q, rows));
    }
    out.logits = episode_logits(queries, prototypes, cfg.metric, cfg.gamma, cfg.tau);
    return out;
}

// ---- optimizer ------------------------------------------------------------------

void adam_step(Model& model, AdamState& state, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.empty()) {
        state.m.resize(model.named_params.size());
        state.v.resize(model.named_params.size());
        for (size_t i = 0; i < model.named_params.size(); ++i) {
            const size_t n = model.named_params[i].second.values().size();
            state.m[i].assign(n, 0.0);
            state.v[i].assign(n, 0.0);
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < model.named_params.size(); ++i) {
        Tensor& param = model.named_params[i].second;
        std::vector<double>& value = param.mutable_values();
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        const std::vector<double>* grad = param.has_grad() ? &param.grad() : nullptr;
        for (size_t k = 0; k < value.size(); ++k) {
            const double g = grad != nullptr ? (*grad)[k] : 0.0;
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    double lr = cfg.learning_rate;
    for (int milestone : cfg.lr_milestones) {
        if (epoch >= milestone) lr *= cfg.lr_decay;
    }
    return lr;
}

std::string episode_video_ids(const Episode& ep) {
    std::ostringstream os;
    for (const auto& s : ep.support) os << s.video_id << " ";
    os << "|";
    for (const auto& q : ep.query) os << " " << q.video_id;
    return os.str();
}

}  // namespace

Checkpoint train(const RunConfig& run, const SplitDataset& ds,
                 const StepCallback& on_step, const Checkpoint* resume) {
    run.validate();
    const TrainConfig& cfg = run.train;
    if (ds.frame_count != cfg.frame_count || ds.channels != cfg.channels) {
        throw ConfigError("train: dataset is T=" + std::to_string(ds.frame_count) +
                          " C=" + std::to_string(ds.channels) +
                          " but config wants T=" + std::to_string(cfg.frame_count) +
                          " C=" + std::to_string(cfg.channels));
    }

    Checkpoint ckpt;
    ckpt.config = run;
    Rng rng(Rng::mix(cfg.seed, kEpisodeStream));
    if (resume != nullptr) {
        // Fresh parameter nodes, then copy values: tensors are shared
        // handles and training mutates them in place.
        ckpt.model = Model::init(cfg);
        if (ckpt.model.named_params.size() != resume->model.named_params.size()) {
            throw ContractError("train: resume checkpoint architecture mismatch");
        }
        for (size_t i = 0; i < ckpt.model.named_params.size(); ++i) {
            ckpt.model.named_params[i].second.mutable_values() =
                resume->model.named_params[i].second.values();
        }
        ckpt.bank = resume->bank;
        ckpt.opt = resume->opt;
        ckpt.step = resume->step;
        rng.deserialize(resume->rng_state);
        unfreeze_bank(ckpt.bank);
    } else {
        ckpt.model = Model::init(cfg);
        ckpt.bank = KnowledgeBank::create(cfg.bank_capacity, cfg.channels, cfg.momentum);
    }

    const uint64_t total_steps =
        static_cast<uint64_t>(cfg.epochs) * static_cast<uint64_t>(cfg.episodes_per_epoch);
    while (ckpt.step < total_steps) {
        const int epoch = static_cast<int>(ckpt.step / cfg.episodes_per_epoch) + 1;
        const int episode_in_epoch = static_cast<int>(ckpt.step % cfg.episodes_per_epoch) + 1;
        const double lr = lr_at_epoch(cfg, epoch);

        const Episode ep = sample_episode(ds, Split::Train, cfg.way, cfg.shot,
                                          cfg.query_count, rng);
        const EpisodeForward fwd = forward_episode(ep, ckpt.model, ckpt.bank, cfg);
        const Tensor loss = cross_entropy(fwd.logits, ep.query_labels);
        const double loss_value = loss.at(0);
        if (!std::isfinite(loss_value)) {
            throw Error("training aborted: non-finite loss at epoch " +
                        std::to_string(epoch) + " episode " +
                        std::to_string(episode_in_epoch) +
                        " (videos: " + episode_video_ids(ep) + ")");
        }
        ckpt.model.zero_grad();
        loss.backward();
        adam_step(ckpt.model, ckpt.opt, lr);
        if (fwd.prototypes_hat.defined()) {
            update_bank(ckpt.bank, fwd.prototypes_hat);
        }
        ckpt.step += 1;
        if (on_step) {
            on_step(StepLog{ckpt.step, epoch, episode_in_epoch, loss_value, lr});
        }
    }
    ckpt.rng_state = rng.serialize();
    return ckpt;
}

// ---- evaluation ------------------------------------------------------------------

int eval_thread_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("HRG_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<unsigned>(cap) < hw) hw = static_cast<unsigned>(cap);
    }
    return static_cast<int>(hw);
}

EvalReport evaluate(const Model& model, const KnowledgeBank& bank,
                    const TrainConfig& cfg, const SplitDataset& ds, Split split,
                    int num_tasks, uint64_t seed, int threads) {
    if (num_tasks < 1) throw ContractError("evaluate: num_tasks must be >= 1");
    if (ds.frame_count != cfg.frame_count || ds.channels != cfg.channels) {
        throw ConfigError("evaluate: dataset dimensions do not match config");
    }
    const auto start = std::chrono::steady_clock::now();

    KnowledgeBank frozen = bank;
    freeze_bank(frozen);

    EvalReport report;
    report.num_tasks = num_tasks;
    report.per_task.assign(static_cast<size_t>(num_tasks), 0.0);

    auto run_task = [&](int task) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(task)));
        const Episode ep =
            sample_episode(ds, split, cfg.way, cfg.shot, cfg.query_count, rng);
        NoGradGuard no_grad;
        const EpisodeForward fwd = forward_episode(ep, model, frozen, cfg);
        const int l = fwd.logits.rows();
        const int n = fwd.logits.cols();
        int correct = 0;
        for (int q = 0; q < l; ++q) {
            int best = 0;
            for (int j = 1; j < n; ++j) {
                if (fwd.logits.at(q, j) > fwd.logits.at(q, best)) best = j;
            }
            if (best == ep.query_labels[static_cast<size_t>(q)]) ++correct;
        }
        report.per_task[static_cast<size_t>(task)] =
            static_cast<double>(correct) / static_cast<double>(l);
    };

    const int workers = std::max(1, std::min(threads, num_tasks));
    if (workers == 1) {
        for (int i = 0; i < num_tasks; ++i) run_task(i);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (int i = w; i < num_tasks; i += workers) run_task(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    double mean = 0.0;
    for (double a : report.per_task) mean += a;
    mean /= num_tasks;
    double var = 0.0;
    for (double a : report.per_task) var += (a - mean) * (a - mean);
    const double sd = num_tasks > 1 ? std::sqrt(var / (num_tasks - 1)) : 0.0;
    report.mean_accuracy = mean;
    report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(num_tasks));
    report.wall_clock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    return report;
}

// ---- checkpoint I/O ------------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
    io::write_magic(os, "HRGC");
    io::write_u32(os, 1);
    io::write_string(os, run_config_to_json(ckpt.config).dump());

    io::write_u32(os, static_cast<uint32_t>(ckpt.model.named_params.size()));
    for (const auto& [name, t] : ckpt.model.named_params) {
        io::write_string(os, name);
        io::write_u32(os, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) io::write_u32(os, static_cast<uint32_t>(t.dim(i)));
        io::write_f64_array(os, t.values());
    }

    // Bank block: u32 G, u32 occupancy, f64 momentum, occupancy*C values.
    io::write_u32(os, static_cast<uint32_t>(ckpt.bank.capacity));
    io::write_u32(os, static_cast<uint32_t>(ckpt.bank.occupancy));
    io::write_f64(os, ckpt.bank.momentum);
    for (int g = 0; g < ckpt.bank.occupancy; ++g) {
        for (int k = 0; k < ckpt.bank.channels; ++k) io::write_f64(os, ckpt.bank.entry(g)[k]);
    }

    io::write_string(os, ckpt.rng_state);
    io::write_u64(os, ckpt.step);

    io::write_u64(os, ckpt.opt.step);
    io::write_u32(os, static_cast<uint32_t>(ckpt.opt.m.size()));
    for (size_t i = 0; i < ckpt.opt.m.size(); ++i) {
        io::write_f64_array(os, ckpt.opt.m[i]);
        io::write_f64_array(os, ckpt.opt.v[i]);
    }
    if (!os) throw IoError("checkpoint write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    if (!io::read_magic(is, "HRGC")) {
        throw IoError("bad magic in checkpoint '" + path + "'");
    }
    const uint32_t version = io::read_u32(is);
    if (version != 1) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = run_config_from_json(nlohmann::json::parse(io::read_string(is)));
    ckpt.model = Model::init(ckpt.config.train);

    const uint32_t n_params = io::read_u32(is);
    if (n_params != ckpt.model.named_params.size()) {
        throw IoError("checkpoint parameter count mismatch");
    }
    for (auto& [name, t] : ckpt.model.named_params) {
        const std::string got = io::read_string(is);
        if (got != name) {
            throw IoError("checkpoint parameter order mismatch: expected '" + name +
                          "', got '" + got + "'");
        }
        const uint32_t rank = io::read_u32(is);
        Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(io::read_u32(is));
        if (shape != t.shape()) {
            throw IoError("checkpoint shape mismatch for '" + name + "'");
        }
        t.mutable_values() = io::read_f64_array(is, t.values().size());
    }

    const int capacity = static_cast<int>(io::read_u32(is));
    const int occupancy = static_cast<int>(io::read_u32(is));
    const double momentum = io::read_f64(is);
    ckpt.bank = KnowledgeBank::create(capacity, ckpt.config.train.channels, momentum);
    if (occupancy < 0 || occupancy > capacity) {
        throw IoError("checkpoint bank occupancy out of range");
    }
    ckpt.bank.occupancy = occupancy;
    for (int g = 0; g < occupancy; ++g) {
        for (int k = 0; k < ckpt.bank.channels; ++k) {
            ckpt.bank.entry(g)[k] = io::read_f64(is);
        }
    }

    ckpt.rng_state = io::read_string(is);
    ckpt.step = io::read_u64(is);

    ckpt.opt.step = io::read_u64(is);
    const uint32_t n_opt = io::read_u32(is);
    if (n_opt != 0 && n_opt != ckpt.model.named_params.size()) {
        throw IoError("checkpoint optimizer state mismatch");
    }
    ckpt.opt.m.resize(n_opt);
    ckpt.opt.v.resize(n_opt);
    for (uint32_t i = 0; i < n_opt; ++i) {
        const size_t n = ckpt.model.named_params[i].second.values().size();
        ckpt.opt.m[i] = io::read_f64_array(is, n);
        ckpt.opt.v[i] = io::read_f64_array(is, n);
    }
    return ckpt;
}

}  // namespace hrg
