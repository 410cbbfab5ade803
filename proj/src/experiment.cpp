#include "psep/experiment.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace psep {

using json = nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error("config: expected object at " + where);
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw Error("config: unknown key '" + key + "' in " + where);
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string canonical_form(const ExperimentConfig& cfg) {
    // stable key order via nlohmann's sorted object dump
    json j;
    j["profile"] = cfg.profile;
    j["stft"] = {{"fft_size", cfg.stft.fft_size},
                 {"hop", cfg.stft.hop},
                 {"window", int(cfg.stft.window_kind)},
                 {"gaussian_lambda", cfg.stft.gaussian_lambda},
                 {"sample_rate", cfg.stft.sample_rate},
                 {"center_pad", cfg.stft.center_pad}};
    j["phase"] = {{"raw", cfg.phase.use_raw_phase},
                  {"dt", cfg.phase.use_time_derivative},
                  {"df", cfg.phase.use_freq_derivative},
                  {"shift_t", cfg.phase.correct_time_shift},
                  {"shift_f", cfg.phase.correct_freq_shift}};
    json archs = json::array();
    for (auto a : cfg.architectures) archs.push_back(nn::arch_tag_name(a));
    j["architectures"] = archs;
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"optimizer", cfg.train.optimizer == nn::Optimizer::adam ? "adam" : "sgd"},
                  {"beta1", cfg.train.adam_beta1},
                  {"beta2", cfg.train.adam_beta2},
                  {"eps", cfg.train.adam_eps},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"validation_fraction", cfg.train.validation_fraction},
                  {"patience", cfg.train.patience}};
    j["synth"] = {{"duration_s", cfg.synth.duration_s},
                  {"sample_rate", cfg.synth.sample_rate},
                  {"channels", cfg.synth.channels}};
    j["num_songs"] = cfg.num_songs;
    j["dev_songs"] = cfg.dev_songs;
    j["corpus_root"] = cfg.corpus_root;
    j["seeds"] = cfg.seeds;
    j["context"] = cfg.context;
    j["wiener"] = {{"mode", cfg.wiener.mode == WienerMode::ratio_mask ? "ratio_mask" : "multichannel"},
                   {"em_iterations", cfg.wiener.em_iterations},
                   {"regularization", cfg.wiener.regularization}};
    j["irm_exponent"] = cfg.irm_exponent;
    j["hidden_units"] = cfg.hidden_units;
    j["sdr_segment_seconds"] = cfg.sdr_segment_seconds;
    j["ablation_grid"] = cfg.ablation_grid;
    return j.dump();
}

}  // namespace

void ExperimentConfig::validate() const {
    stft.validate();
    phase.validate();
    train.validate();
    synth.validate();
    wiener.validate();
    if (profile != "desk" && profile != "paper")
        throw Error("config: profile must be 'desk' or 'paper'");
    if (architectures.empty()) throw Error("config: no architectures listed");
    if (seeds.empty()) throw Error("config: no seeds listed");
    if (corpus_root.empty()) {
        if (num_songs == 0 || dev_songs == 0 || dev_songs >= num_songs)
            throw Error("config: need 0 < dev_songs < num_songs for a synthetic corpus");
    }
    if (irm_exponent != 1 && irm_exponent != 2) throw Error("config: irm_exponent must be 1 or 2");
    if (hidden_units == 0) throw Error("config: hidden_units must be positive");
    if (synth.sample_rate != stft.sample_rate)
        throw Error("config: corpus and STFT sample rates must match (no resampling)");
}

ExperimentConfig default_config(const std::string& profile) {
    ExperimentConfig cfg;
    cfg.profile = profile;
    if (profile == "desk") {
        cfg.stft.sample_rate = 8000;
        cfg.stft.fft_size = 512;
        cfg.stft.hop = 128;
        cfg.synth.sample_rate = 8000;
    } else if (profile == "paper") {
        cfg.stft.sample_rate = 44100;
        cfg.stft.fft_size = 4096;
        cfg.stft.hop = 1024;
        cfg.synth.sample_rate = 44100;
    } else {
        throw Error("config: profile must be 'desk' or 'paper'");
    }
    cfg.phase.fft_size = cfg.stft.fft_size;
    cfg.phase.hop = cfg.stft.hop;
    cfg.hash = config_hash(cfg);
    return cfg;
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("config: parse error: ") + e.what());
    }
    require_keys(j, {"profile", "stft", "phase_features", "architectures", "train", "synth",
                     "num_songs", "dev_songs", "corpus_root", "seeds", "output_dir", "context",
                     "wiener", "irm_exponent", "hidden_units", "sdr_segment_seconds",
                     "ablation_grid"},
                 "top level");

    ExperimentConfig cfg = default_config(j.value("profile", "desk"));

    if (j.contains("stft")) {
        const json& s = j["stft"];
        require_keys(s, {"fft_size", "hop", "window", "gaussian_lambda", "sample_rate",
                         "center_pad"},
                     "stft");
        cfg.stft.fft_size = s.value("fft_size", cfg.stft.fft_size);
        cfg.stft.hop = s.value("hop", cfg.stft.hop);
        if (s.contains("window")) {
            const std::string w = s["window"];
            cfg.stft.window_kind = w == "hann" ? WindowKind::hann
                                   : w == "sqrt_hann" ? WindowKind::sqrt_hann
                                   : w == "gaussian"
                                       ? WindowKind::gaussian
                                       : throw Error("config: unknown window '" + w + "'");
        }
        cfg.stft.gaussian_lambda = s.value("gaussian_lambda", cfg.stft.gaussian_lambda);
        cfg.stft.sample_rate = s.value("sample_rate", cfg.stft.sample_rate);
        cfg.stft.center_pad = s.value("center_pad", cfg.stft.center_pad);
        cfg.synth.sample_rate = cfg.stft.sample_rate;
        cfg.phase.fft_size = cfg.stft.fft_size;
        cfg.phase.hop = cfg.stft.hop;
    }
    if (j.contains("phase_features")) {
        const json& p = j["phase_features"];
        require_keys(p, {"raw", "dt", "df", "shift_t", "shift_f"}, "phase_features");
        cfg.phase.use_raw_phase = p.value("raw", cfg.phase.use_raw_phase);
        cfg.phase.use_time_derivative = p.value("dt", cfg.phase.use_time_derivative);
        cfg.phase.use_freq_derivative = p.value("df", cfg.phase.use_freq_derivative);
        cfg.phase.correct_time_shift = p.value("shift_t", cfg.phase.correct_time_shift);
        cfg.phase.correct_freq_shift = p.value("shift_f", cfg.phase.correct_freq_shift);
        if (cfg.phase.use_raw_phase) {
            cfg.phase.use_time_derivative = false;
            cfg.phase.use_freq_derivative = false;
        }
    }
    if (j.contains("architectures")) {
        cfg.architectures.clear();
        for (const auto& a : j["architectures"])
            cfg.architectures.push_back(nn::arch_tag_from_name(a.get<std::string>()));
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        require_keys(t, {"learning_rate", "optimizer", "beta1", "beta2", "eps", "batch_size",
                         "epochs", "validation_fraction", "patience"},
                     "train");
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        if (t.contains("optimizer")) {
            const std::string o = t["optimizer"];
            if (o == "adam") cfg.train.optimizer = nn::Optimizer::adam;
            else if (o == "sgd") cfg.train.optimizer = nn::Optimizer::sgd;
            else throw Error("config: unknown optimizer '" + o + "'");
        }
        cfg.train.adam_beta1 = t.value("beta1", cfg.train.adam_beta1);
        cfg.train.adam_beta2 = t.value("beta2", cfg.train.adam_beta2);
        cfg.train.adam_eps = t.value("eps", cfg.train.adam_eps);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.validation_fraction =
            t.value("validation_fraction", cfg.train.validation_fraction);
        cfg.train.patience = t.value("patience", cfg.train.patience);
    }
    if (j.contains("synth")) {
        const json& s = j["synth"];
        require_keys(s, {"duration_s", "channels"}, "synth");
        cfg.synth.duration_s = s.value("duration_s", cfg.synth.duration_s);
        cfg.synth.channels = s.value("channels", cfg.synth.channels);
    }
    cfg.num_songs = j.value("num_songs", cfg.num_songs);
    cfg.dev_songs = j.value("dev_songs", cfg.dev_songs);
    cfg.corpus_root = j.value("corpus_root", cfg.corpus_root);
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.context = j.value("context", cfg.context);
    if (j.contains("wiener")) {
        const json& w = j["wiener"];
        require_keys(w, {"mode", "em_iterations", "regularization"}, "wiener");
        if (w.contains("mode")) {
            const std::string m = w["mode"];
            if (m == "ratio_mask") cfg.wiener.mode = WienerMode::ratio_mask;
            else if (m == "multichannel") cfg.wiener.mode = WienerMode::multichannel;
            else throw Error("config: unknown wiener mode '" + m + "'");
        }
        cfg.wiener.em_iterations = w.value("em_iterations", cfg.wiener.em_iterations);
        cfg.wiener.regularization = w.value("regularization", cfg.wiener.regularization);
    }
    cfg.irm_exponent = j.value("irm_exponent", cfg.irm_exponent);
    cfg.hidden_units = j.value("hidden_units", cfg.hidden_units);
    cfg.sdr_segment_seconds = j.value("sdr_segment_seconds", cfg.sdr_segment_seconds);
    cfg.ablation_grid = j.value("ablation_grid", cfg.ablation_grid);

    cfg.validate();
    cfg.hash = config_hash(cfg);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json_text(buf.str());
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << std::hex << fnv1a(canonical_form(cfg));
    return out.str();
}

std::vector<Song> generate_corpus(const ExperimentConfig& cfg, std::uint64_t base_seed,
                                  std::vector<Split>* splits) {
    std::vector<Song> songs;
    for (std::size_t i = 0; i < cfg.num_songs; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "song_%03zu", i);
        songs.push_back(generate_synthetic_song(cfg.synth, base_seed + i, name));
        if (splits) splits->push_back(i < cfg.dev_songs ? Split::dev : Split::test);
    }
    return songs;
}

nn::ModelBundle train_bundle(const ExperimentConfig& cfg, const std::vector<Song>& dev_songs,
                             nn::ArchTag tag, const PhaseFeatureConfig& phase_cfg,
                             std::uint64_t seed, bool clean_task) {
    if (dev_songs.empty()) throw Error("train_bundle: no training songs");
    nn::ModelBundle bundle;
    bundle.tag = tag;
    bundle.stft_config = cfg.stft;
    bundle.phase_config = phase_cfg;
    bundle.context = cfg.context;
    bundle.stats = compute_stats(dev_songs, cfg.stft);

    const std::size_t bins = cfg.stft.num_bins();
    const std::size_t channels = dev_songs.front().mixture.channels();
    const bool with_amp = tag == nn::ArchTag::amp_only || tag == nn::ArchTag::joint ||
                          tag == nn::ArchTag::naive_concat;
    const bool with_phase = tag != nn::ArchTag::amp_only;
    const std::size_t feature_count = with_phase ? phase_cfg.feature_count() : 0;

    nn::TrainConfig train_cfg = cfg.train;
    train_cfg.seed = seed;

    for (const auto& instrument : instrument_names()) {
        // mixture input for separation; the stem itself for the clean task
        Matrix amp_all, phase_all, target_all;
        for (const auto& song : dev_songs) {
            const AudioClip& input_clip =
                clean_task ? song.sources.at(instrument) : song.mixture;
            ExampleSet set = make_examples_for_song(song, input_clip, cfg.stft,
                                                    with_phase ? &phase_cfg : nullptr, with_amp,
                                                    cfg.context, instrument);
            auto append = [](Matrix& dst, Matrix& src) {
                if (src.size() == 0) return;
                if (dst.size() == 0) {
                    dst = std::move(src);
                    return;
                }
                if (dst.cols != src.cols) throw Error("train_bundle: column mismatch");
                dst.v.insert(dst.v.end(), src.v.begin(), src.v.end());
                dst.rows += src.rows;
            };
            append(amp_all, set.amp_inputs);
            append(phase_all, set.phase_inputs);
            append(target_all, set.targets);
        }

        nn::Network net;
        switch (tag) {
            case nn::ArchTag::phase_only:
                net = nn::build_phase_net(bins, channels, cfg.context, feature_count,
                                          bundle.stats, instrument, seed, cfg.hidden_units);
                break;
            case nn::ArchTag::amp_only:
                net = nn::build_amp_net(bins, channels, cfg.context, bundle.stats, instrument,
                                        seed, cfg.hidden_units);
                break;
            case nn::ArchTag::joint: {
                // two-stage: the phase branch otherwise soaks up the training
                // signal and leaves the amplitude path undertrained
                nn::Network amp_net = nn::build_amp_net(bins, channels, cfg.context,
                                                        bundle.stats, instrument, seed,
                                                        cfg.hidden_units);
                nn::TrainData amp_data;
                amp_data.amp = &amp_all;
                amp_data.targets = &target_all;
                nn::train(amp_net, amp_data, train_cfg);
                net = nn::build_joint_net(bins, channels, cfg.context, feature_count,
                                          bundle.stats, instrument, seed, cfg.hidden_units);
                nn::seed_joint_from_amp(net, amp_net);
                break;
            }
            case nn::ArchTag::naive_concat:
                net = nn::build_naive_concat_net(bins, channels, cfg.context, feature_count,
                                                 bundle.stats, instrument, seed,
                                                 cfg.hidden_units);
                break;
        }

        nn::TrainData data;
        data.amp = with_amp ? &amp_all : nullptr;
        data.phase = with_phase ? &phase_all : nullptr;
        data.targets = &target_all;
        bundle.curves[instrument] = nn::train(net, data, train_cfg);
        bundle.networks[instrument] = std::move(net);
    }
    return bundle;
}

ScoreReport evaluate_bundle(const ExperimentConfig& cfg, nn::ModelBundle& bundle,
                            const std::vector<Song>& test_songs) {
    if (test_songs.empty()) throw Error("evaluate_bundle: empty song set");
    std::map<std::string, std::map<std::string, double>> per_song;
    SdrOptions opts{cfg.sdr_segment_seconds};
    for (const auto& song : test_songs) {
        SeparationResult result = separate(bundle, song.mixture, cfg.wiener);
        per_song[song.name] = evaluate_song(song, result.estimates, opts);
    }
    ScoreReport report = aggregate(per_song);
    report.architecture = nn::arch_tag_name(bundle.tag);
    report.config_hash = cfg.hash;
    return report;
}

std::vector<std::pair<std::string, PhaseFeatureConfig>> ablation_variants(
    const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, PhaseFeatureConfig>> variants;
    PhaseFeatureConfig base;
    base.fft_size = cfg.stft.fft_size;
    base.hop = cfg.stft.hop;

    auto add = [&](const std::string& name, bool raw, bool dt, bool df, bool st, bool sf) {
        PhaseFeatureConfig p = base;
        p.use_raw_phase = raw;
        p.use_time_derivative = dt;
        p.use_freq_derivative = df;
        p.correct_time_shift = st;
        p.correct_freq_shift = sf;
        variants.emplace_back(name, p);
    };
    add("raw_phase", true, false, false, false, false);
    add("dt", false, true, false, false, false);
    add("dt_shift", false, true, false, true, false);
    add("df", false, false, true, false, false);
    add("df_shift", false, false, true, false, true);
    add("dt_df", false, true, true, false, false);
    add("dt_df_shift", false, true, true, true, true);
    return variants;
}

}  // namespace psep
