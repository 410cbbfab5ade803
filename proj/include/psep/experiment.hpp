#pragma once

#include <string>
#include <vector>

#include "psep/dataset.hpp"
#include "psep/evaluation.hpp"
#include "psep/nn.hpp"
#include "psep/separation.hpp"
#include "psep/stft.hpp"

namespace psep {

struct ExperimentConfig {
    std::string profile = "desk";  // desk: 8 kHz, N=512, n0=128; paper: 44.1 kHz, N=4096, n0=1024
    StftConfig stft;
    PhaseFeatureConfig phase;
    std::vector<nn::ArchTag> architectures = {nn::ArchTag::joint};
    nn::TrainConfig train;
    SynthSpec synth;
    std::size_t num_songs = 10;
    std::size_t dev_songs = 6;
    std::string corpus_root;  // empty: synthetic corpus
    std::vector<std::uint64_t> seeds = {0};
    std::string output_dir = "out";
    std::size_t context = 5;
    WienerConfig wiener;
    int irm_exponent = 1;
    std::size_t hidden_units = 500;
    double sdr_segment_seconds = 0.0;
    bool ablation_grid = false;

    std::string hash;  // FNV-1a of the canonical form, filled on load

    void validate() const;
};

ExperimentConfig default_config(const std::string& profile);
// Rejects unknown keys at every level.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string config_hash(const ExperimentConfig& cfg);

// Deterministic synthetic corpus: song i uses seed base_seed + i; the first
// dev_songs songs form the dev split.
std::vector<Song> generate_corpus(const ExperimentConfig& cfg, std::uint64_t base_seed,
                                  std::vector<Split>* splits = nullptr);

// Train one bundle (one network per instrument) on the dev songs.
// `clean_task` feeds each network the instrument's own signal instead of
// the mixture (amplitude-reconstruction probe).
nn::ModelBundle train_bundle(const ExperimentConfig& cfg, const std::vector<Song>& dev_songs,
                             nn::ArchTag tag, const PhaseFeatureConfig& phase_cfg,
                             std::uint64_t seed, bool clean_task = false);

// Separate and score every test song with the bundle.
ScoreReport evaluate_bundle(const ExperimentConfig& cfg, nn::ModelBundle& bundle,
                            const std::vector<Song>& test_songs);

// Named phase-feature variants for the pre-processing ablation grid.
std::vector<std::pair<std::string, PhaseFeatureConfig>> ablation_variants(
    const ExperimentConfig& cfg);

}  // namespace psep
