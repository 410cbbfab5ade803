// psep: phase-aware source separation experiment driver.
//
// Subcommands: synth, features, train, separate, evaluate, verify-theory.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 criterion failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psep/audio_io.hpp"
#include "psep/dataset.hpp"
#include "psep/evaluation.hpp"
#include "psep/experiment.hpp"
#include "psep/kernels.hpp"
#include "psep/nn.hpp"
#include "psep/phase_features.hpp"
#include "psep/separation.hpp"
#include "psep/stft.hpp"
#include "psep/theory.hpp"

namespace fs = std::filesystem;
using namespace psep;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    std::string profile = "desk";
    bool force = false;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
    ExperimentConfig cfg =
        g.config_path.empty() ? default_config(g.profile) : load_experiment_config(g.config_path);
    if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
    if (g.seed >= 0) cfg.seeds = {std::uint64_t(g.seed)};
    cfg.validate();
    cfg.hash = config_hash(cfg);
    return cfg;
}

void prepare_out_dir(const ExperimentConfig& cfg, bool force) {
    fs::path dir(cfg.output_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw Error("output directory '" + cfg.output_dir +
                    "' exists and is not empty (use --force to reuse it)");
    fs::create_directories(dir);
}

void write_run_info(const ExperimentConfig& cfg, const std::string& command) {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = cfg.hash;
    j["seeds"] = cfg.seeds;
    j["profile"] = cfg.profile;
    j["kernel_backend"] = kernels::active().name;
    std::ofstream out(fs::path(cfg.output_dir) / "run_info.json");
    if (!out) throw Error("cannot write run_info.json in '" + cfg.output_dir + "'");
    out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path, const ExperimentConfig& cfg, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path.string() + "'");
    out << "# config_hash=" << cfg.hash << " seed=" << seed << '\n';
    return out;
}

// Synthetic corpus or a DSD100-layout directory, as configured.
std::vector<Song> load_songs(const ExperimentConfig& cfg, std::uint64_t base_seed,
                             std::vector<Split>& splits) {
    splits.clear();
    if (cfg.corpus_root.empty()) return generate_corpus(cfg, base_seed, &splits);
    std::vector<Song> songs;
    for (const auto& ref : scan_corpus(cfg.corpus_root)) {
        songs.push_back(ref.load());
        splits.push_back(ref.split);
    }
    if (songs.empty()) throw Error("corpus '" + cfg.corpus_root + "' has no complete songs");
    return songs;
}

std::vector<Song> pick_split(const std::vector<Song>& songs, const std::vector<Split>& splits,
                             Split want) {
    std::vector<Song> out;
    for (std::size_t i = 0; i < songs.size(); ++i)
        if (splits[i] == want) out.push_back(songs[i]);
    return out;
}

int cmd_synth(const ExperimentConfig& cfg, bool force) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "synth");
    const std::uint64_t base_seed = cfg.seeds.front();
    std::vector<Split> splits;
    std::vector<Song> songs = generate_corpus(cfg, base_seed, &splits);
    const fs::path root = fs::path(cfg.output_dir) / "corpus";
    for (std::size_t i = 0; i < songs.size(); ++i) write_song(root.string(), songs[i], splits[i]);
    std::cout << "wrote " << songs.size() << " songs to " << root.string() << " (seed "
              << base_seed << ", hash " << cfg.hash << ")\n";
    return 0;
}

int cmd_features(const ExperimentConfig& cfg, bool force, const std::string& song_name,
                 std::size_t bin, std::size_t hist_bins) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "features");
    const std::uint64_t base_seed = cfg.seeds.front();
    std::vector<Split> splits;
    std::vector<Song> songs = load_songs(cfg, base_seed, splits);

    const Song* song = &songs.front();
    if (!song_name.empty()) {
        song = nullptr;
        for (const auto& s : songs)
            if (s.name == song_name) song = &s;
        if (!song) throw Error("song '" + song_name + "' not found in corpus");
    }
    if (song->mixture.length() == 0) throw Error("song '" + song->name + "' is empty");
    if (bin >= cfg.stft.num_bins()) throw Error("bin index out of range");

    Spectrogram spec = stft(song->mixture, cfg.stft);
    PhaseTensor ph = phase(spec);
    PhaseTensor dt = time_diff(ph);
    PhaseTensor dt_c = correct_time_shift(dt, cfg.stft.fft_size, cfg.stft.hop);
    PhaseTensor df = freq_diff(ph);
    PhaseTensor df_c = correct_freq_shift(df);

    auto dump = [&](const PhaseTensor& t, const std::string& name) {
        std::vector<double> values;
        for (std::size_t c = 0; c < t.channels; ++c)
            for (std::size_t m = 1; m < t.frames; ++m) values.push_back(t.at(c, m, bin));
        Histogram h = feature_histogram(values, hist_bins, bin, name);
        auto out = open_csv(fs::path(cfg.output_dir) / (name + ".csv"), cfg, base_seed);
        out << "bin_lo,bin_hi,count\n";
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
    };
    dump(dt, "dt_raw");
    dump(dt_c, "dt_shift_corrected");
    dump(df, "df_raw");
    dump(df_c, "df_shift_corrected");

    PhaseFeatureTensor feats = extract_phase_features(ph, cfg.phase);
    write_pspc_features((fs::path(cfg.output_dir) / "phase_features.pspf").string(), feats,
                        cfg.stft);
    std::cout << "feature histograms for " << song->name << ", bin " << bin << " -> "
              << cfg.output_dir << '\n';
    return 0;
}

void emit_bundle(const ExperimentConfig& cfg, nn::ModelBundle& bundle, const std::string& stem,
                 std::uint64_t seed) {
    const fs::path dir(cfg.output_dir);
    nn::save_bundle(bundle, (dir / (stem + ".psnn")).string());
    for (const auto& [instrument, curve] : bundle.curves) {
        auto out = open_csv(dir / (stem + "_" + instrument + "_loss.csv"), cfg, seed);
        out << "epoch,train_mse,val_mse\n";
        for (std::size_t e = 0; e < curve.train_mse.size(); ++e) {
            out << e << ',' << curve.train_mse[e] << ',';
            if (e < curve.val_mse.size()) out << curve.val_mse[e];
            out << '\n';
        }
    }
}

int cmd_train(const ExperimentConfig& cfg, bool force) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "train");
    std::vector<Split> splits;
    std::vector<Song> songs = load_songs(cfg, cfg.seeds.front(), splits);
    std::vector<Song> dev = pick_split(songs, splits, Split::dev);
    if (dev.empty()) throw Error("no dev songs to train on");

    for (std::uint64_t seed : cfg.seeds) {
        if (cfg.ablation_grid) {
            for (const auto& [name, phase_cfg] : ablation_variants(cfg)) {
                nn::ModelBundle bundle =
                    train_bundle(cfg, dev, nn::ArchTag::phase_only, phase_cfg, seed);
                emit_bundle(cfg, bundle, "ablation_" + name + "_seed" + std::to_string(seed),
                            seed);
                std::cout << "trained ablation variant " << name << " (seed " << seed << ")\n";
            }
        }
        for (nn::ArchTag tag : cfg.architectures) {
            nn::ModelBundle bundle = train_bundle(cfg, dev, tag, cfg.phase, seed);
            emit_bundle(cfg, bundle, nn::arch_tag_name(tag) + "_seed" + std::to_string(seed),
                        seed);
            std::cout << "trained " << nn::arch_tag_name(tag) << " (seed " << seed << ")\n";
        }
    }
    return 0;
}

int cmd_separate(const ExperimentConfig& cfg, bool force, const std::string& bundle_path,
                 const std::string& mixture_path) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "separate");
    nn::ModelBundle bundle = nn::load_bundle(bundle_path);
    AudioClip mixture = read_wav(mixture_path);
    SeparationResult result = separate(bundle, mixture, cfg.wiener);
    write_estimates(cfg.output_dir, result);
    std::cout << "wrote " << result.estimates.size() << " stems to " << cfg.output_dir << '\n';
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, bool force,
                 const std::vector<std::string>& bundle_paths) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "evaluate");
    const std::uint64_t base_seed = cfg.seeds.front();
    std::vector<Split> splits;
    std::vector<Song> songs = load_songs(cfg, base_seed, splits);
    std::vector<Song> test = pick_split(songs, splits, Split::test);
    if (test.empty()) throw Error("no test songs to evaluate on");
    const fs::path dir(cfg.output_dir);

    std::vector<ScoreReport> reports;
    nn::ModelBundle amp_bundle;
    bool have_amp = false;
    for (const auto& path : bundle_paths) {
        nn::ModelBundle bundle = nn::load_bundle(path);
        ScoreReport report = evaluate_bundle(cfg, bundle, test);
        report.seed = base_seed;
        const std::string stem = fs::path(path).stem().string();
        write_score_csv((dir / (stem + "_scores.csv")).string(), report);
        write_score_json((dir / (stem + "_scores.json")).string(), report);
        reports.push_back(report);
        if (bundle.tag == nn::ArchTag::amp_only && !have_amp) {
            amp_bundle = std::move(bundle);
            have_amp = true;
        }
    }
    if (reports.size() >= 2)
        write_comparison_csv((dir / "comparison.csv").string(), compare(reports[0], reports[1]));

    // Upper-bound table: oracle amplitude (IRM) and oracle phase against the
    // plain amplitude network with the mixture phase.
    if (!have_amp) {
        std::vector<Song> dev = pick_split(songs, splits, Split::dev);
        if (dev.empty()) throw Error("no dev songs to train the reference network on");
        amp_bundle = train_bundle(cfg, dev, nn::ArchTag::amp_only, cfg.phase, base_seed);
    }
    SdrOptions opts{cfg.sdr_segment_seconds};
    std::map<std::string, std::map<std::string, double>> dnn_scores, irm_scores, oracle_scores;
    for (const auto& song : test) {
        Spectrogram mix_spec = stft(song.mixture, cfg.stft);
        PhaseTensor mix_phase = phase(mix_spec);
        std::map<std::string, Spectrogram> source_specs;
        for (const auto& [instrument, clip] : song.sources)
            source_specs[instrument] = stft(clip, cfg.stft);
        auto irm = irm_amplitude(source_specs, mix_spec, cfg.irm_exponent);
        auto dnn = estimate_amplitudes(amp_bundle, song.mixture);

        std::map<std::string, AudioClip> dnn_est, irm_est, oracle_est;
        for (const auto& instrument : instrument_names()) {
            dnn_est[instrument] = synthesize(dnn.at(instrument), mix_phase, cfg.stft);
            irm_est[instrument] = synthesize(irm.at(instrument), mix_phase, cfg.stft);
            oracle_est[instrument] = oracle_phase_synthesize(
                dnn.at(instrument), song.sources.at(instrument), cfg.stft);
        }
        dnn_scores[song.name] = evaluate_song(song, dnn_est, opts);
        irm_scores[song.name] = evaluate_song(song, irm_est, opts);
        oracle_scores[song.name] = evaluate_song(song, oracle_est, opts);
    }
    ScoreReport dnn_rep = aggregate(dnn_scores);
    ScoreReport irm_rep = aggregate(irm_scores);
    ScoreReport oracle_rep = aggregate(oracle_scores);
    auto out = open_csv(dir / "upper_bounds.csv", cfg, base_seed);
    out << "instrument,dnn_mixture_phase_db,irm_mixture_phase_db,dnn_oracle_phase_db\n";
    for (const auto& instrument : instrument_names())
        out << instrument << ',' << dnn_rep.median_per_instrument.at(instrument) << ','
            << irm_rep.median_per_instrument.at(instrument) << ','
            << oracle_rep.median_per_instrument.at(instrument) << '\n';
    std::cout << "evaluation tables -> " << cfg.output_dir << '\n';
    return 0;
}

int cmd_verify_theory(const ExperimentConfig& cfg, bool force, double lambda, bool zero_signal) {
    prepare_out_dir(cfg, force);
    write_run_info(cfg, "verify-theory");

    // Linear chirp sweeping 200 -> 1200 Hz over half a second.
    const double f0 = 200.0, f1 = 1200.0, span = 0.5;
    const double rate = (f1 - f0) / span;
    SignalFn chirp = [=](double t) {
        const double phase_arg = 2.0 * M_PI * (f0 * t + 0.5 * rate * t * t);
        return cplx(std::cos(phase_arg), std::sin(phase_arg));
    };
    SignalFn signal = zero_signal ? SignalFn([](double) { return cplx(0.0, 0.0); }) : chirp;

    TfGrid grid = TfGrid::uniform(0.15, 0.35, 9, 2.0 * M_PI * 300.0, 2.0 * M_PI * 900.0, 9,
                                  lambda);
    RelationReport report = relation_residual(signal, grid);
    write_relation_csv((fs::path(cfg.output_dir) / "relation_residuals.csv").string(), report);

    TfGrid fine = grid;
    fine.fd_time_step /= 2.0;
    fine.fd_omega_step /= 2.0;
    RelationReport refined = relation_residual(signal, fine);
    write_relation_csv((fs::path(cfg.output_dir) / "relation_residuals_refined.csv").string(),
                       refined);

    std::cout << "median residuals: a=" << report.median_residual_a
              << " b=" << report.median_residual_b << " (refined a=" << refined.median_residual_a
              << " b=" << refined.median_residual_b << ", " << report.masked_points
              << " points)\n";
    const bool pass = report.median_residual_a < 0.05 && report.median_residual_b < 0.05 &&
                      refined.median_residual_a <= report.median_residual_a &&
                      refined.median_residual_b <= report.median_residual_b;
    if (!pass) {
        std::cerr << "verify-theory: residual criterion failed\n";
        return 3;
    }
    std::cout << "verify-theory: PASS\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phase-aware music source separation toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config JSON");
    app.add_option("--out", g.out_dir, "output directory (overrides config)");
    app.add_option("--seed", g.seed, "base seed (overrides config seed list)");
    app.add_option("--profile", g.profile, "desk or paper (when no --config)")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_flag("--force", g.force, "reuse a non-empty output directory");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    auto* features = app.add_subcommand("features", "phase-feature histograms and dumps");
    std::string song_name;
    std::size_t bin = 32, hist_bins = 64;
    features->add_option("--song", song_name, "song name (default: first)");
    features->add_option("--bin", bin, "frequency bin for the histograms");
    features->add_option("--hist-bins", hist_bins, "histogram bin count");
    auto* train = app.add_subcommand("train", "train network bundles");
    auto* separate = app.add_subcommand("separate", "separate a mixture with a bundle");
    std::string bundle_path, mixture_path;
    separate->add_option("--bundle", bundle_path, "model bundle path")->required();
    separate->add_option("--mixture", mixture_path, "mixture WAV path")->required();
    auto* evaluate = app.add_subcommand("evaluate", "score bundles on the test split");
    std::vector<std::string> bundle_paths;
    evaluate->add_option("--bundle", bundle_paths, "bundle path(s); first is the baseline");
    auto* verify = app.add_subcommand("verify-theory",
                                      "check the phase/log-amplitude derivative relations");
    double lambda = 0.02;
    bool zero_signal = false;
    verify->add_option("--lambda", lambda, "gaussian window width in seconds");
    verify->add_flag("--zero-signal", zero_signal, "run on the zero signal (error path)");

    // global flags may appear after the subcommand name
    for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        ExperimentConfig cfg = resolve_config(g);
        if (app.got_subcommand(synth)) return cmd_synth(cfg, g.force);
        if (app.got_subcommand(features))
            return cmd_features(cfg, g.force, song_name, bin, hist_bins);
        if (app.got_subcommand(train)) return cmd_train(cfg, g.force);
        if (app.got_subcommand(separate))
            return cmd_separate(cfg, g.force, bundle_path, mixture_path);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(cfg, g.force, bundle_paths);
        if (app.got_subcommand(verify))
            return cmd_verify_theory(cfg, g.force, lambda, zero_signal);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
