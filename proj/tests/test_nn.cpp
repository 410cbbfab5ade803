#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <doctest.h>

#include "psep/nn.hpp"

using namespace psep;
using namespace psep::nn;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(r, c);
    for (auto& v : m.v) v = dist(rng);
    return m;
}

DatasetStats tiny_stats(std::size_t channels, std::size_t bins) {
    DatasetStats stats;
    stats.channels = channels;
    stats.bins = bins;
    stats.mean_amp.assign(channels * bins, 0.3);
    stats.std_amp.assign(channels * bins, 0.7);
    for (const auto& instrument : instrument_names())
        stats.instrument_avg_amp[instrument].assign(channels * bins, 0.1);
    return stats;
}

double net_loss(Network& net, const Matrix* amp, const Matrix* phase, const Matrix& target) {
    Matrix pred = forward(net, amp, phase);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.v[i] - target.v[i];
        s += d * d;
    }
    return s;
}

void run_loss_backward(Network& net, const Matrix* amp, const Matrix* phase,
                       const Matrix& target, bool need_input_grads, InputGrads* grads) {
    Matrix pred = forward(net, amp, phase);
    Matrix dy(pred.rows, pred.cols);
    for (std::size_t i = 0; i < pred.size(); ++i) dy.v[i] = 2.0 * (pred.v[i] - target.v[i]);
    zero_gradients(net);
    InputGrads g = backward(net, dy, need_input_grads);
    if (grads) *grads = std::move(g);
}

// Max relative error of analytic vs centered finite-difference gradients
// over every parameter of every layer, plus the input gradients.
double max_gradient_error(Network& net, Matrix amp, Matrix phase, const Matrix& target) {
    const Matrix* ap = net.input_kind == InputKind::phase_only ? nullptr : &amp;
    const Matrix* pp = net.input_kind == InputKind::amp_only ? nullptr : &phase;
    const double h = 1e-5;

    InputGrads input_grads;
    run_loss_backward(net, ap, pp, target, true, &input_grads);

    // keep analytic copies before probing
    std::vector<std::vector<double>> gw, gb;
    for (Layer* l : net.all_layers()) {
        gw.push_back(l->gw);
        gb.push_back(l->gb);
    }

    double worst = 0.0;
    auto probe = [&](double& param, double analytic) {
        const double orig = param;
        param = orig + h;
        const double up = net_loss(net, ap, pp, target);
        param = orig - h;
        const double down = net_loss(net, ap, pp, target);
        param = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic - numeric) /
                           std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
        worst = std::max(worst, err);
    };

    auto layers = net.all_layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t j = 0; j < layers[i]->w.size(); ++j) probe(layers[i]->w[j], gw[i][j]);
        for (std::size_t j = 0; j < layers[i]->b.size(); ++j) probe(layers[i]->b[j], gb[i][j]);
    }
    if (input_grads.amp)
        for (std::size_t j = 0; j < amp.size(); ++j) probe(amp.v[j], input_grads.amp->v[j]);
    if (input_grads.phase)
        for (std::size_t j = 0; j < phase.size(); ++j) probe(phase.v[j], input_grads.phase->v[j]);
    return worst;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("gradients match finite differences for every layer kind") {
    // chain covering dense, relu, bias and scale
    Network net;
    net.input_kind = InputKind::amp_only;
    net.amp_input_dim = 4;
    net.output_dim = 3;
    net.trunk.push_back(Layer::bias(4));
    net.trunk.push_back(Layer::scale(4));
    net.trunk.push_back(Layer::dense(4, 6));
    net.trunk.push_back(Layer::relu(6));
    net.trunk.push_back(Layer::dense(6, 3));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-0.8, 0.8);
    for (Layer* l : net.all_layers()) {
        for (auto& w : l->w) w = dist(rng);
        for (auto& b : l->b) b = dist(rng);
    }
    Matrix x = random_matrix(5, 4, 6);
    Matrix target = random_matrix(5, 3, 7);
    CHECK(max_gradient_error(net, x, Matrix(5, 1), target) < 1e-4);
}

TEST_CASE("gradients flow through the two-branch concat architecture") {
    Network net = build_joint_net(/*bins=*/3, /*channels=*/1, /*context=*/1,
                                  /*feature_count=*/2, tiny_stats(1, 3), "bass", 11,
                                  /*hidden=*/5);
    const std::size_t window = 3;
    Matrix amp = random_matrix(4, 1 * window * 3, 8, 0.0, 1.0);
    Matrix phase = random_matrix(4, 1 * window * 3 * 2, 9);
    Matrix target = random_matrix(4, 3, 10, 0.0, 1.0);
    CHECK(max_gradient_error(net, amp, phase, target) < 1e-4);
}

TEST_CASE("gradients flow through the single-chain concat architecture") {
    Network net = build_naive_concat_net(2, 1, 1, 2, tiny_stats(1, 2), "drums", 12, 4);
    Matrix amp = random_matrix(3, 6, 13, 0.0, 1.0);
    Matrix phase = random_matrix(3, 12, 14);
    Matrix target = random_matrix(3, 2, 15, 0.0, 1.0);
    CHECK(max_gradient_error(net, amp, phase, target) < 1e-4);
}

TEST_CASE("parameter count follows the closed form") {
    const std::size_t K = 4, I = 2, C = 2, F = 2, H = 7;
    const std::size_t window = 2 * C + 1;
    const std::size_t dphi = I * window * K * F;
    const std::size_t out = I * K;
    Network net = build_phase_net(K, I, C, F, tiny_stats(I, K), "vocals", 3, H);
    // dense(dphi,H) + dense(H,H) + dense(H,out) + output bias
    CHECK(net.parameter_count() ==
          (dphi * H + H) + (H * H + H) + (H * out + out) + out);

    Network amp_net = build_amp_net(K, I, C, tiny_stats(I, K), "vocals", 3, H);
    const std::size_t damp = I * window * K;
    // adds the normalization bias + scale over the input
    CHECK(amp_net.parameter_count() ==
          damp + damp + (damp * H + H) + (H * H + H) + (H * out + out) + out);
}

TEST_CASE("dense forward matches a hand-computed example") {
    Layer l = Layer::dense(2, 2);
    l.w = {1.0, 2.0, 3.0, 4.0};  // row-major (in x out)
    l.b = {0.5, -0.5};
    Matrix x(1, 2);
    x.v = {1.0, -1.0};
    Matrix y = layer_forward(l, x);
    CHECK(y.at(0, 0) == doctest::Approx(1.0 * 1.0 - 1.0 * 3.0 + 0.5));
    CHECK(y.at(0, 1) == doctest::Approx(1.0 * 2.0 - 1.0 * 4.0 - 0.5));
}

TEST_CASE("amp normalization standardizes the training mean") {
    DatasetStats stats = tiny_stats(1, 2);
    stats.mean_amp = {0.4, 0.6};
    stats.std_amp = {2.0, 0.5};
    Network net = build_amp_net(2, 1, 0, stats, "bass", 1, 3);
    // first two layers are the normalization; probing them directly
    Matrix x(1, 2);
    x.v = {0.4, 0.6};
    Matrix y = layer_forward(net.trunk[0], x);
    y = layer_forward(net.trunk[1], y);
    CHECK(y.at(0, 0) == doctest::Approx(0.0));
    CHECK(y.at(0, 1) == doctest::Approx(0.0));
    x.v = {2.4, 1.1};
    y = layer_forward(net.trunk[0], x);
    y = layer_forward(net.trunk[1], y);
    CHECK(y.at(0, 0) == doctest::Approx(1.0));  // (2.4 - 0.4) / 2.0
    CHECK(y.at(0, 1) == doctest::Approx(1.0));  // (1.1 - 0.6) / 0.5
}

TEST_CASE("network output is non-negative by construction") {
    Network net = build_phase_net(3, 1, 1, 2, tiny_stats(1, 3), "other", 21, 6);
    Matrix phase = random_matrix(8, 18, 22, -3.0, 3.0);
    Matrix y = forward(net, nullptr, &phase);
    for (double v : y.v) CHECK(v >= 0.0);
}

TEST_CASE("training fits a small linear map") {
    const std::size_t n = 64, din = 3, dout = 2;
    Matrix x = random_matrix(n, din, 30);
    Matrix w_true(din, dout);
    w_true.v = {0.5, -0.2, 0.8, 0.3, -0.6, 0.1};
    Matrix target(n, dout);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dout; ++c) {
            double s = 0.1;  // bias term
            for (std::size_t k = 0; k < din; ++k) s += x.at(r, k) * w_true.at(k, c);
            target.at(r, c) = s;
        }

    Network net;
    net.input_kind = InputKind::amp_only;
    net.amp_input_dim = din;
    net.output_dim = dout;
    net.trunk.push_back(Layer::dense(din, dout));

    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.epochs = 400;
    cfg.batch_size = 16;
    cfg.validation_fraction = 0.0;
    cfg.seed = 1;
    TrainData data;
    data.amp = &x;
    data.targets = &target;
    TrainResult result = train(net, data, cfg);
    REQUIRE(!result.train_mse.empty());
    CHECK(result.train_mse.back() < 1e-6);
    CHECK(result.val_mse.empty());
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    Network net = build_phase_net(2, 1, 0, 1, tiny_stats(1, 2), "bass", 40, 4);
    std::vector<std::vector<double>> before;
    for (Layer* l : net.all_layers()) before.push_back(l->w);
    Matrix x = random_matrix(10, 2, 41);
    Matrix target = random_matrix(10, 2, 42, 0.0, 1.0);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.validation_fraction = 0.0;
    TrainData data;
    data.phase = &x;
    data.targets = &target;
    train(net, data, cfg);
    std::size_t i = 0;
    for (Layer* l : net.all_layers()) CHECK(l->w == before[i++]);
}

TEST_CASE("identical seeds give identical initializations and loss curves") {
    Network a = build_joint_net(3, 2, 1, 2, tiny_stats(2, 3), "drums", 77, 6);
    Network b = build_joint_net(3, 2, 1, 2, tiny_stats(2, 3), "drums", 77, 6);
    auto la = a.all_layers(), lb = b.all_layers();
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i]->w == lb[i]->w);

    Matrix amp = random_matrix(20, 2 * 3 * 3, 50, 0.0, 1.0);
    Matrix phase = random_matrix(20, 2 * 3 * 3 * 2, 51);
    Matrix target = random_matrix(20, 6, 52, 0.0, 1.0);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 9;
    TrainData data;
    data.amp = &amp;
    data.phase = &phase;
    data.targets = &target;
    TrainResult ra = train(a, data, cfg);
    TrainResult rb = train(b, data, cfg);
    CHECK(ra.train_mse == rb.train_mse);
    CHECK(ra.val_mse == rb.val_mse);

    Network c = build_joint_net(3, 2, 1, 2, tiny_stats(2, 3), "drums", 78, 6);
    CHECK(c.all_layers()[2]->w != la[2]->w);  // different seed, different init
}

TEST_CASE("validation-based early stopping can cut training short") {
    Network net = build_phase_net(2, 1, 0, 1, tiny_stats(1, 2), "other", 60, 4);
    Matrix x = random_matrix(40, 2, 61);
    Matrix target = random_matrix(40, 2, 62, 0.0, 1.0);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.validation_fraction = 0.25;
    cfg.patience = 2;
    TrainData data;
    data.phase = &x;
    data.targets = &target;
    TrainResult result = train(net, data, cfg);
    CHECK(result.train_mse.size() <= 200);
    CHECK(result.val_mse.size() == result.train_mse.size());
}

TEST_CASE("model bundles round trip bitwise") {
    ModelBundle bundle;
    bundle.tag = ArchTag::phase_only;
    bundle.context = 1;
    bundle.stft_config.fft_size = 64;
    bundle.stft_config.hop = 16;
    bundle.stft_config.sample_rate = 8000;
    bundle.phase_config.fft_size = 64;
    bundle.phase_config.hop = 16;
    bundle.stats = tiny_stats(1, 33);
    for (const auto& instrument : instrument_names()) {
        bundle.networks[instrument] =
            build_phase_net(33, 1, 1, 2, bundle.stats, instrument, 90, 5);
        bundle.curves[instrument].train_mse = {0.5, 0.25, 0.1};
        bundle.curves[instrument].val_mse = {0.6, 0.3, 0.2};
    }
    const auto path = fs::temp_directory_path() / "psep_test_bundle.psnn";
    save_bundle(bundle, path.string());
    ModelBundle back = load_bundle(path.string());
    CHECK(back.tag == bundle.tag);
    CHECK(back.context == bundle.context);
    CHECK(back.stft_config.fft_size == 64);
    CHECK(back.phase_config.hop == 16);
    CHECK(back.stats.mean_amp == bundle.stats.mean_amp);
    for (const auto& instrument : instrument_names()) {
        auto la = bundle.networks[instrument].all_layers();
        auto lb = back.networks[instrument].all_layers();
        REQUIRE(la.size() == lb.size());
        for (std::size_t i = 0; i < la.size(); ++i) {
            CHECK(la[i]->w == lb[i]->w);
            CHECK(la[i]->b == lb[i]->b);
        }
        CHECK(back.curves[instrument].train_mse == bundle.curves[instrument].train_mse);
    }

    // corruption and version errors are reported distinctly
    {
        std::ofstream bad(path, std::ios::binary);
        bad << "NOPE garbage";
    }
    CHECK_THROWS_WITH_AS(load_bundle(path.string()), doctest::Contains("bad magic"), Error);
    {
        std::ofstream bad(path, std::ios::binary);
        bad.write("PSNN", 4);
        const std::uint32_t wrong = 999;
        bad.write(reinterpret_cast<const char*>(&wrong), 4);
        const std::uint64_t len = 0;
        bad.write(reinterpret_cast<const char*>(&len), 8);
    }
    CHECK_THROWS_WITH_AS(load_bundle(path.string()), doctest::Contains("version"), Error);
    fs::remove(path);
}

TEST_CASE("naive concat weight ratio is defined at initialization") {
    Network net = build_naive_concat_net(4, 2, 2, 2, tiny_stats(2, 4), "vocals", 5, 8);
    const double ratio = naive_concat_weight_ratio(net);
    CHECK(std::isfinite(ratio));
    CHECK(ratio > 0.5);
    CHECK(ratio < 2.0);  // uniform init: both halves have similar magnitudes
    Network phase_net = build_phase_net(4, 1, 1, 1, tiny_stats(1, 4), "bass", 5, 8);
    CHECK_THROWS_AS(naive_concat_weight_ratio(phase_net), Error);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.validation_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.adam_beta1 = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("loss curve csv schema is stable") {
    TrainResult r;
    r.train_mse = {1.0, 0.5};
    r.val_mse = {1.1, 0.6};
    const auto path = fs::temp_directory_path() / "psep_test_curve.csv";
    write_loss_curve_csv(path.string(), r);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_mse,val_mse");
    std::getline(in, line);
    CHECK(line == "0,1,1.1");
    fs::remove(path);
}

}  // TEST_SUITE
