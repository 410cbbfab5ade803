#include "psep/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "psep/kernels.hpp"

namespace psep::nn {

using json = nlohmann::json;

Layer Layer::dense(std::size_t in, std::size_t out) {
    Layer l{LayerKind::dense, in, out};
    l.w.assign(in * out, 0.0);
    l.b.assign(out, 0.0);
    l.gw.assign(in * out, 0.0);
    l.gb.assign(out, 0.0);
    return l;
}

Layer Layer::relu(std::size_t dim) { return Layer{LayerKind::relu, dim, dim}; }

Layer Layer::bias(std::size_t dim) {
    Layer l{LayerKind::bias, dim, dim};
    l.b.assign(dim, 0.0);
    l.gb.assign(dim, 0.0);
    return l;
}

Layer Layer::scale(std::size_t dim) {
    Layer l{LayerKind::scale, dim, dim};
    l.w.assign(dim, 1.0);
    l.gw.assign(dim, 0.0);
    return l;
}

Matrix layer_forward(Layer& layer, const Matrix& x) {
    if (x.cols != layer.in) throw Error("layer_forward: input dimension mismatch");
    const auto& k = kernels::active();
    switch (layer.kind) {
        case LayerKind::dense: {
            layer.cached_input = x;
            Matrix y(x.rows, layer.out);
            for (std::size_t r = 0; r < x.rows; ++r)
                std::memcpy(y.row(r), layer.b.data(), layer.out * sizeof(double));
            k.gemm_acc(x.v.data(), layer.w.data(), y.v.data(), x.rows, layer.in, layer.out);
            return y;
        }
        case LayerKind::relu: {
            layer.cached_input = x;
            Matrix y(x.rows, x.cols);
            k.relu(x.v.data(), y.v.data(), x.size());
            return y;
        }
        case LayerKind::bias: {
            Matrix y = x;
            for (std::size_t r = 0; r < y.rows; ++r) k.add(layer.b.data(), y.row(r), y.cols);
            return y;
        }
        case LayerKind::scale: {
            layer.cached_input = x;
            Matrix y(x.rows, x.cols);
            for (std::size_t r = 0; r < y.rows; ++r)
                for (std::size_t c = 0; c < y.cols; ++c) y.at(r, c) = x.at(r, c) * layer.w[c];
            return y;
        }
    }
    throw Error("layer_forward: unknown layer kind");
}

Matrix layer_backward(Layer& layer, const Matrix& dy, bool need_input_grad) {
    if (dy.cols != layer.out) throw Error("layer_backward: gradient dimension mismatch");
    const auto& k = kernels::active();
    switch (layer.kind) {
        case LayerKind::dense: {
            const Matrix& x = layer.cached_input;
            if (x.rows != dy.rows) throw Error("layer_backward: backward before forward");
            k.gemm_at_acc(x.v.data(), dy.v.data(), layer.gw.data(), x.rows, layer.in, layer.out);
            for (std::size_t r = 0; r < dy.rows; ++r) k.add(dy.row(r), layer.gb.data(), layer.out);
            Matrix dx;
            if (need_input_grad) {
                dx = Matrix(dy.rows, layer.in);
                k.gemm_bt(dy.v.data(), layer.w.data(), dx.v.data(), dy.rows, layer.in, layer.out);
            }
            return dx;
        }
        case LayerKind::relu: {
            const Matrix& x = layer.cached_input;
            if (x.rows != dy.rows) throw Error("layer_backward: backward before forward");
            Matrix dx(dy.rows, dy.cols);
            k.relu_grad(x.v.data(), dy.v.data(), dx.v.data(), dy.size());
            return dx;
        }
        case LayerKind::bias: {
            for (std::size_t r = 0; r < dy.rows; ++r) k.add(dy.row(r), layer.gb.data(), dy.cols);
            return dy;
        }
        case LayerKind::scale: {
            const Matrix& x = layer.cached_input;
            if (x.rows != dy.rows) throw Error("layer_backward: backward before forward");
            Matrix dx(dy.rows, dy.cols);
            for (std::size_t r = 0; r < dy.rows; ++r)
                for (std::size_t c = 0; c < dy.cols; ++c) {
                    layer.gw[c] += x.at(r, c) * dy.at(r, c);
                    dx.at(r, c) = dy.at(r, c) * layer.w[c];
                }
            return dx;
        }
    }
    throw Error("layer_backward: unknown layer kind");
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto* chain : {&amp_branch, &phase_branch, &trunk})
        for (const auto& l : *chain) n += l.w.size() + l.b.size();
    return n;
}

std::vector<Layer*> Network::all_layers() {
    std::vector<Layer*> out;
    for (auto* chain : {&amp_branch, &phase_branch, &trunk})
        for (auto& l : *chain) out.push_back(&l);
    return out;
}

namespace {

Matrix chain_forward(std::vector<Layer>& chain, Matrix x) {
    for (auto& l : chain) x = layer_forward(l, x);
    return x;
}

Matrix chain_backward(std::vector<Layer>& chain, Matrix dy, bool need_input_grad) {
    for (std::size_t i = chain.size(); i-- > 0;)
        dy = layer_backward(chain[i], dy, i > 0 || need_input_grad);
    return dy;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw Error("concat: row mismatch");
    Matrix out(a.rows, a.cols + b.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        std::memcpy(out.row(r), a.row(r), a.cols * sizeof(double));
        std::memcpy(out.row(r) + a.cols, b.row(r), b.cols * sizeof(double));
    }
    return out;
}

void init_dense(Layer& l, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(l.in + l.out));
    for (double& w : l.w) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        w = limit * (2.0 * u - 1.0);
    }
}

// bias/scale tiling over the context window: layout is channel-major,
// context frame, bin
std::vector<double> tile_context(const std::vector<double>& per_bin, std::size_t channels,
                                 std::size_t window, std::size_t bins) {
    std::vector<double> out(channels * window * bins);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t w = 0; w < window; ++w)
            for (std::size_t k = 0; k < bins; ++k)
                out[(c * window + w) * bins + k] = per_bin[c * bins + k];
    return out;
}

void append_feature_chain(std::vector<Layer>& chain, std::size_t in_dim, std::size_t hidden,
                          std::mt19937_64& rng) {
    chain.push_back(Layer::dense(in_dim, hidden));
    init_dense(chain.back(), rng);
    chain.push_back(Layer::relu(hidden));
    chain.push_back(Layer::dense(hidden, hidden));
    init_dense(chain.back(), rng);
    chain.push_back(Layer::relu(hidden));
}

void append_amp_normalization(std::vector<Layer>& chain, const DatasetStats& stats,
                              std::size_t channels, std::size_t window, std::size_t bins) {
    const std::size_t dim = channels * window * bins;
    Layer bias = Layer::bias(dim);
    std::vector<double> neg_mean(stats.mean_amp.size());
    for (std::size_t i = 0; i < neg_mean.size(); ++i) neg_mean[i] = -stats.mean_amp[i];
    bias.b = tile_context(neg_mean, channels, window, bins);
    chain.push_back(std::move(bias));

    Layer scale = Layer::scale(dim);
    std::vector<double> inv_std(stats.std_amp.size());
    for (std::size_t i = 0; i < inv_std.size(); ++i) inv_std[i] = 1.0 / stats.std_amp[i];
    scale.w = tile_context(inv_std, channels, window, bins);
    chain.push_back(std::move(scale));
}

void append_output_head(std::vector<Layer>& chain, std::size_t hidden, std::size_t channels,
                        std::size_t bins, const DatasetStats& stats,
                        const std::string& instrument, std::mt19937_64& rng) {
    const std::size_t out_dim = channels * bins;
    chain.push_back(Layer::dense(hidden, out_dim));
    init_dense(chain.back(), rng);
    Layer out_bias = Layer::bias(out_dim);
    out_bias.b = stats.instrument_avg_amp.at(instrument);
    chain.push_back(std::move(out_bias));
    chain.push_back(Layer::relu(out_dim));
}

void check_dims(std::size_t dim) {
    if (dim == 0 || dim > (std::size_t(1) << 24))
        throw Error("network builder: implausible input dimension");
}

}  // namespace

Matrix forward(Network& net, const Matrix* amp, const Matrix* phase) {
    switch (net.input_kind) {
        case InputKind::amp_only:
            if (!amp) throw Error("forward: amplitude input required");
            return chain_forward(net.trunk, *amp);
        case InputKind::phase_only:
            if (!phase) throw Error("forward: phase input required");
            return chain_forward(net.trunk, *phase);
        case InputKind::concat:
            if (!amp || !phase) throw Error("forward: both inputs required");
            return chain_forward(net.trunk, hconcat(*amp, *phase));
        case InputKind::branches: {
            if (!amp || !phase) throw Error("forward: both inputs required");
            Matrix a = chain_forward(net.amp_branch, *amp);
            Matrix p = chain_forward(net.phase_branch, *phase);
            return chain_forward(net.trunk, hconcat(a, p));
        }
    }
    throw Error("forward: unknown input kind");
}

InputGrads backward(Network& net, const Matrix& d_output, bool need_input_grads) {
    InputGrads grads;
    switch (net.input_kind) {
        case InputKind::amp_only: {
            Matrix dx = chain_backward(net.trunk, d_output, need_input_grads);
            if (need_input_grads) grads.amp = std::move(dx);
            return grads;
        }
        case InputKind::phase_only: {
            Matrix dx = chain_backward(net.trunk, d_output, need_input_grads);
            if (need_input_grads) grads.phase = std::move(dx);
            return grads;
        }
        case InputKind::concat: {
            Matrix dx = chain_backward(net.trunk, d_output, need_input_grads);
            if (need_input_grads) {
                Matrix da(dx.rows, net.amp_input_dim), dp(dx.rows, net.phase_input_dim);
                for (std::size_t r = 0; r < dx.rows; ++r) {
                    std::memcpy(da.row(r), dx.row(r), da.cols * sizeof(double));
                    std::memcpy(dp.row(r), dx.row(r) + da.cols, dp.cols * sizeof(double));
                }
                grads.amp = std::move(da);
                grads.phase = std::move(dp);
            }
            return grads;
        }
        case InputKind::branches: {
            Matrix dx = chain_backward(net.trunk, d_output, true);
            const std::size_t a_dim = net.amp_branch.back().out;
            const std::size_t p_dim = net.phase_branch.back().out;
            if (dx.cols != a_dim + p_dim) throw Error("backward: concat width mismatch");
            // branch_concat backward: exact slice of the incoming gradient
            Matrix da(dx.rows, a_dim), dp(dx.rows, p_dim);
            for (std::size_t r = 0; r < dx.rows; ++r) {
                std::memcpy(da.row(r), dx.row(r), a_dim * sizeof(double));
                std::memcpy(dp.row(r), dx.row(r) + a_dim, p_dim * sizeof(double));
            }
            Matrix dia = chain_backward(net.amp_branch, std::move(da), need_input_grads);
            Matrix dip = chain_backward(net.phase_branch, std::move(dp), need_input_grads);
            if (need_input_grads) {
                grads.amp = std::move(dia);
                grads.phase = std::move(dip);
            }
            return grads;
        }
    }
    throw Error("backward: unknown input kind");
}

void zero_gradients(Network& net) {
    for (Layer* l : net.all_layers()) {
        std::fill(l->gw.begin(), l->gw.end(), 0.0);
        std::fill(l->gb.begin(), l->gb.end(), 0.0);
    }
}

Network build_phase_net(std::size_t bins, std::size_t channels, std::size_t context,
                        std::size_t feature_count, const DatasetStats& stats,
                        const std::string& instrument, std::uint64_t seed, std::size_t hidden) {
    const std::size_t window = 2 * context + 1;
    const std::size_t d_phase = channels * window * bins * feature_count;
    check_dims(d_phase);
    std::mt19937_64 rng(seed);
    Network net;
    net.input_kind = InputKind::phase_only;
    net.phase_input_dim = d_phase;
    net.output_dim = channels * bins;
    append_feature_chain(net.trunk, d_phase, hidden, rng);
    append_output_head(net.trunk, hidden, channels, bins, stats, instrument, rng);
    return net;
}

Network build_amp_net(std::size_t bins, std::size_t channels, std::size_t context,
                      const DatasetStats& stats, const std::string& instrument,
                      std::uint64_t seed, std::size_t hidden) {
    const std::size_t window = 2 * context + 1;
    const std::size_t d_amp = channels * window * bins;
    check_dims(d_amp);
    std::mt19937_64 rng(seed);
    Network net;
    net.input_kind = InputKind::amp_only;
    net.amp_input_dim = d_amp;
    net.output_dim = channels * bins;
    append_amp_normalization(net.trunk, stats, channels, window, bins);
    append_feature_chain(net.trunk, d_amp, hidden, rng);
    append_output_head(net.trunk, hidden, channels, bins, stats, instrument, rng);
    return net;
}

Network build_joint_net(std::size_t bins, std::size_t channels, std::size_t context,
                        std::size_t feature_count, const DatasetStats& stats,
                        const std::string& instrument, std::uint64_t seed, std::size_t hidden) {
    const std::size_t window = 2 * context + 1;
    const std::size_t d_amp = channels * window * bins;
    const std::size_t d_phase = channels * window * bins * feature_count;
    check_dims(d_amp);
    check_dims(d_phase);
    std::mt19937_64 rng(seed);
    Network net;
    net.input_kind = InputKind::branches;
    net.amp_input_dim = d_amp;
    net.phase_input_dim = d_phase;
    net.output_dim = channels * bins;
    append_amp_normalization(net.amp_branch, stats, channels, window, bins);
    append_feature_chain(net.amp_branch, d_amp, hidden, rng);
    append_feature_chain(net.phase_branch, d_phase, hidden, rng);
    append_output_head(net.trunk, 2 * hidden, channels, bins, stats, instrument, rng);
    // zero the phase half of the head so the net starts as the amplitude
    // path; the optimizer grows the phase contribution only where it helps
    Layer& head = net.trunk.front();
    for (std::size_t i = hidden; i < 2 * hidden; ++i)
        for (std::size_t o = 0; o < net.output_dim; ++o) head.w[i * net.output_dim + o] = 0.0;
    return net;
}

Network build_naive_concat_net(std::size_t bins, std::size_t channels, std::size_t context,
                               std::size_t feature_count, const DatasetStats& stats,
                               const std::string& instrument, std::uint64_t seed,
                               std::size_t hidden) {
    const std::size_t window = 2 * context + 1;
    const std::size_t d_amp = channels * window * bins;
    const std::size_t d_phase = channels * window * bins * feature_count;
    check_dims(d_amp + d_phase);
    std::mt19937_64 rng(seed);
    Network net;
    net.input_kind = InputKind::concat;
    net.amp_input_dim = d_amp;
    net.phase_input_dim = d_phase;
    net.output_dim = channels * bins;
    append_feature_chain(net.trunk, d_amp + d_phase, hidden, rng);
    append_output_head(net.trunk, hidden, channels, bins, stats, instrument, rng);
    return net;
}

void seed_joint_from_amp(Network& joint, const Network& amp_net) {
    if (joint.input_kind != InputKind::branches)
        throw Error("seed_joint_from_amp: not a branch network");
    if (amp_net.input_kind != InputKind::amp_only)
        throw Error("seed_joint_from_amp: source is not amplitude-only");
    // amp trunk = [normalization..., feature chain..., dense, bias, relu head]
    const std::size_t head_start = amp_net.trunk.size() - 3;
    if (joint.amp_branch.size() != head_start)
        throw Error("seed_joint_from_amp: branch layout mismatch");
    for (std::size_t i = 0; i < head_start; ++i) {
        const Layer& src = amp_net.trunk[i];
        Layer& dst = joint.amp_branch[i];
        if (src.kind != dst.kind || src.in != dst.in || src.out != dst.out)
            throw Error("seed_joint_from_amp: branch layout mismatch");
        dst.w = src.w;
        dst.b = src.b;
    }
    const Layer& src_head = amp_net.trunk[head_start];
    Layer& dst_head = joint.trunk.front();
    const std::size_t hidden = src_head.in;
    const std::size_t out_dim = src_head.out;
    if (dst_head.in != 2 * hidden || dst_head.out != out_dim)
        throw Error("seed_joint_from_amp: head layout mismatch");
    for (std::size_t i = 0; i < hidden; ++i)
        for (std::size_t o = 0; o < out_dim; ++o)
            dst_head.w[i * out_dim + o] = src_head.w[i * out_dim + o];
    for (std::size_t i = hidden; i < 2 * hidden; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) dst_head.w[i * out_dim + o] = 0.0;
    dst_head.b = src_head.b;
    joint.trunk[1].b = amp_net.trunk[head_start + 1].b;  // output bias
}

double naive_concat_weight_ratio(const Network& net) {
    if (net.input_kind != InputKind::concat) throw Error("weight ratio: not a concat network");
    const Layer* first = nullptr;
    for (const auto& l : net.trunk)
        if (l.kind == LayerKind::dense) {
            first = &l;
            break;
        }
    if (!first) throw Error("weight ratio: no dense layer");
    double amp_sum = 0.0, phase_sum = 0.0;
    for (std::size_t i = 0; i < net.amp_input_dim; ++i)
        for (std::size_t o = 0; o < first->out; ++o) amp_sum += std::abs(first->w[i * first->out + o]);
    for (std::size_t i = net.amp_input_dim; i < first->in; ++i)
        for (std::size_t o = 0; o < first->out; ++o)
            phase_sum += std::abs(first->w[i * first->out + o]);
    const double amp_mean = amp_sum / double(net.amp_input_dim * first->out);
    const double phase_mean = phase_sum / double(net.phase_input_dim * first->out);
    return phase_mean / amp_mean;
}

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw Error("TrainConfig: negative learning rate");
    if (batch_size < 1) throw Error("TrainConfig: batch size must be >= 1");
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw Error("TrainConfig: validation fraction in [0, 1)");
    if (optimizer == Optimizer::adam &&
        (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1 || adam_eps <= 0))
        throw Error("TrainConfig: bad adam hyperparameters");
}

namespace {

struct AdamState {
    std::vector<double> mw, vw, mb, vb;
};

void gather_rows(const Matrix& src, const std::vector<std::size_t>& idx, std::size_t lo,
                 std::size_t hi, Matrix& out) {
    out.rows = hi - lo;
    out.cols = src.cols;
    out.v.resize(out.rows * out.cols);
    for (std::size_t r = lo; r < hi; ++r)
        std::memcpy(out.row(r - lo), src.row(idx[r]), src.cols * sizeof(double));
}

void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, const TrainConfig& cfg, double bias1, double bias2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

double layer_norm(const Layer& l) {
    double s = 0.0;
    for (double w : l.w) s += w * w;
    for (double b : l.b) s += b * b;
    return std::sqrt(s);
}

}  // namespace

TrainResult train(Network& net, const TrainData& data, const TrainConfig& cfg) {
    cfg.validate();
    if (!data.targets) throw Error("train: targets missing");
    const std::size_t n = data.targets->rows;
    if (n == 0) throw Error("train: empty example set");

    const auto n_val = std::size_t(cfg.validation_fraction * double(n));
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw Error("train: no training examples after validation split");

    std::vector<std::size_t> train_idx(n_train), val_idx(n_val);
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::iota(val_idx.begin(), val_idx.end(), n_train);

    std::mt19937_64 rng(cfg.seed);
    auto layers = net.all_layers();
    std::vector<AdamState> adam(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        adam[i].mw.assign(layers[i]->w.size(), 0.0);
        adam[i].vw.assign(layers[i]->w.size(), 0.0);
        adam[i].mb.assign(layers[i]->b.size(), 0.0);
        adam[i].vb.assign(layers[i]->b.size(), 0.0);
    }

    const auto& kern = kernels::active();
    Matrix batch_amp, batch_phase, batch_target;
    std::size_t step = 0;

    auto run_batch = [&](const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                         bool learn) -> double {
        if (data.amp) gather_rows(*data.amp, idx, lo, hi, batch_amp);
        if (data.phase) gather_rows(*data.phase, idx, lo, hi, batch_phase);
        gather_rows(*data.targets, idx, lo, hi, batch_target);

        Matrix pred = forward(net, data.amp ? &batch_amp : nullptr,
                              data.phase ? &batch_phase : nullptr);
        const double sse = kern.sumsq_diff(pred.v.data(), batch_target.v.data(), pred.size());
        if (learn) {
            const double scale = 2.0 / double(pred.size());
            Matrix dy(pred.rows, pred.cols);
            for (std::size_t i = 0; i < pred.size(); ++i)
                dy.v[i] = scale * (pred.v[i] - batch_target.v[i]);
            zero_gradients(net);
            backward(net, dy, false);
            ++step;
            const double bias1 = 1.0 - std::pow(cfg.adam_beta1, double(step));
            const double bias2 = 1.0 - std::pow(cfg.adam_beta2, double(step));
            for (std::size_t i = 0; i < layers.size(); ++i) {
                Layer& l = *layers[i];
                if (cfg.optimizer == Optimizer::adam) {
                    if (!l.w.empty()) adam_update(l.w, l.gw, adam[i].mw, adam[i].vw, cfg, bias1, bias2);
                    if (!l.b.empty()) adam_update(l.b, l.gb, adam[i].mb, adam[i].vb, cfg, bias1, bias2);
                } else {
                    for (std::size_t j = 0; j < l.w.size(); ++j) l.w[j] -= cfg.learning_rate * l.gw[j];
                    for (std::size_t j = 0; j < l.b.size(); ++j) l.b[j] -= cfg.learning_rate * l.gb[j];
                }
            }
        }
        return sse;
    };

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    // snapshot of the best-validation parameters, restored on exit
    std::vector<std::vector<double>> best_w, best_b;
    auto snapshot = [&] {
        best_w.clear();
        best_b.clear();
        for (const Layer* l : layers) {
            best_w.push_back(l->w);
            best_b.push_back(l->b);
        }
    };
    auto eval_val = [&] {
        double val_sse = 0.0;
        std::size_t val_count = 0;
        for (std::size_t lo = 0; lo < n_val; lo += cfg.batch_size) {
            const std::size_t hi = std::min(lo + cfg.batch_size, n_val);
            val_sse += run_batch(val_idx, lo, hi, false);
            val_count += (hi - lo) * net.output_dim;
        }
        return val_sse / double(val_count);
    };
    if (n_val > 0) {
        // the initial weights count as a candidate, so fine-tuning a
        // pre-trained network can never end worse than it started
        best_val = eval_val();
        snapshot();
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double train_sse = 0.0;
        std::size_t train_count = 0;
        for (std::size_t lo = 0; lo < n_train; lo += cfg.batch_size) {
            const std::size_t hi = std::min(lo + cfg.batch_size, n_train);
            train_sse += run_batch(train_idx, lo, hi, true);
            train_count += (hi - lo) * net.output_dim;
        }
        const double train_mse = train_sse / double(train_count);
        if (!std::isfinite(train_mse)) {
            std::string diag = "train: NaN loss at epoch " + std::to_string(epoch);
            for (std::size_t i = 0; i < layers.size(); ++i)
                diag += "; layer " + std::to_string(i) + " norm " + std::to_string(layer_norm(*layers[i]));
            throw Error(diag);
        }
        result.train_mse.push_back(train_mse);

        if (n_val > 0) {
            const double val_mse = eval_val();
            result.val_mse.push_back(val_mse);
            if (val_mse < best_val) {
                best_val = val_mse;
                since_best = 0;
                snapshot();
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    if (!best_w.empty())
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i]->w = best_w[i];
            layers[i]->b = best_b[i];
        }
    return result;
}

std::string arch_tag_name(ArchTag tag) {
    switch (tag) {
        case ArchTag::phase_only: return "phase_only";
        case ArchTag::amp_only: return "amp_only";
        case ArchTag::joint: return "joint";
        case ArchTag::naive_concat: return "naive_concat";
    }
    throw Error("arch_tag_name: unknown tag");
}

ArchTag arch_tag_from_name(const std::string& name) {
    if (name == "phase_only") return ArchTag::phase_only;
    if (name == "amp_only") return ArchTag::amp_only;
    if (name == "joint") return ArchTag::joint;
    if (name == "naive_concat") return ArchTag::naive_concat;
    throw Error("arch_tag_from_name: unknown tag '" + name + "'");
}

namespace {

constexpr std::uint32_t kBundleVersion = 1;

json layer_meta(const Layer& l) {
    json j;
    switch (l.kind) {
        case LayerKind::dense: j["kind"] = "dense"; break;
        case LayerKind::relu: j["kind"] = "relu"; break;
        case LayerKind::bias: j["kind"] = "bias"; break;
        case LayerKind::scale: j["kind"] = "scale"; break;
    }
    j["in"] = l.in;
    j["out"] = l.out;
    return j;
}

Layer layer_from_meta(const json& j) {
    const std::string kind = j.at("kind");
    const std::size_t in = j.at("in"), out = j.at("out");
    if (kind == "dense") return Layer::dense(in, out);
    if (kind == "relu") return Layer::relu(in);
    if (kind == "bias") return Layer::bias(in);
    if (kind == "scale") return Layer::scale(in);
    throw Error("load_bundle: unknown layer kind '" + kind + "'");
}

json network_meta(const Network& net) {
    json j;
    switch (net.input_kind) {
        case InputKind::amp_only: j["input"] = "amp"; break;
        case InputKind::phase_only: j["input"] = "phase"; break;
        case InputKind::concat: j["input"] = "concat"; break;
        case InputKind::branches: j["input"] = "branches"; break;
    }
    j["amp_input_dim"] = net.amp_input_dim;
    j["phase_input_dim"] = net.phase_input_dim;
    j["output_dim"] = net.output_dim;
    j["amp_branch"] = json::array();
    j["phase_branch"] = json::array();
    j["trunk"] = json::array();
    for (const auto& l : net.amp_branch) j["amp_branch"].push_back(layer_meta(l));
    for (const auto& l : net.phase_branch) j["phase_branch"].push_back(layer_meta(l));
    for (const auto& l : net.trunk) j["trunk"].push_back(layer_meta(l));
    return j;
}

Network network_from_meta(const json& j) {
    Network net;
    const std::string input = j.at("input");
    if (input == "amp") net.input_kind = InputKind::amp_only;
    else if (input == "phase") net.input_kind = InputKind::phase_only;
    else if (input == "concat") net.input_kind = InputKind::concat;
    else if (input == "branches") net.input_kind = InputKind::branches;
    else throw Error("load_bundle: unknown input kind");
    net.amp_input_dim = j.at("amp_input_dim");
    net.phase_input_dim = j.at("phase_input_dim");
    net.output_dim = j.at("output_dim");
    for (const auto& lm : j.at("amp_branch")) net.amp_branch.push_back(layer_from_meta(lm));
    for (const auto& lm : j.at("phase_branch")) net.phase_branch.push_back(layer_from_meta(lm));
    for (const auto& lm : j.at("trunk")) net.trunk.push_back(layer_from_meta(lm));
    return net;
}

json stft_config_json(const StftConfig& cfg) {
    json j;
    j["fft_size"] = cfg.fft_size;
    j["hop"] = cfg.hop;
    switch (cfg.window_kind) {
        case WindowKind::hann: j["window"] = "hann"; break;
        case WindowKind::sqrt_hann: j["window"] = "sqrt_hann"; break;
        case WindowKind::gaussian: j["window"] = "gaussian"; break;
    }
    j["gaussian_lambda"] = cfg.gaussian_lambda;
    j["sample_rate"] = cfg.sample_rate;
    j["center_pad"] = cfg.center_pad;
    return j;
}

StftConfig stft_config_from_json(const json& j) {
    StftConfig cfg;
    cfg.fft_size = j.at("fft_size");
    cfg.hop = j.at("hop");
    const std::string w = j.at("window");
    cfg.window_kind = w == "hann" ? WindowKind::hann
                      : w == "sqrt_hann" ? WindowKind::sqrt_hann
                                         : WindowKind::gaussian;
    cfg.gaussian_lambda = j.at("gaussian_lambda");
    cfg.sample_rate = j.at("sample_rate");
    cfg.center_pad = j.at("center_pad");
    return cfg;
}

json phase_config_json(const PhaseFeatureConfig& cfg) {
    json j;
    j["raw"] = cfg.use_raw_phase;
    j["dt"] = cfg.use_time_derivative;
    j["df"] = cfg.use_freq_derivative;
    j["shift_t"] = cfg.correct_time_shift;
    j["shift_f"] = cfg.correct_freq_shift;
    j["fft_size"] = cfg.fft_size;
    j["hop"] = cfg.hop;
    return j;
}

PhaseFeatureConfig phase_config_from_json(const json& j) {
    PhaseFeatureConfig cfg;
    cfg.use_raw_phase = j.at("raw");
    cfg.use_time_derivative = j.at("dt");
    cfg.use_freq_derivative = j.at("df");
    cfg.correct_time_shift = j.at("shift_t");
    cfg.correct_freq_shift = j.at("shift_f");
    cfg.fft_size = j.at("fft_size");
    cfg.hop = j.at("hop");
    return cfg;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& path) {
    json meta;
    meta["tag"] = arch_tag_name(bundle.tag);
    meta["context"] = bundle.context;
    meta["stft"] = stft_config_json(bundle.stft_config);
    meta["phase"] = phase_config_json(bundle.phase_config);
    meta["stats"]["channels"] = bundle.stats.channels;
    meta["stats"]["bins"] = bundle.stats.bins;
    meta["stats"]["mean_amp"] = bundle.stats.mean_amp;
    meta["stats"]["std_amp"] = bundle.stats.std_amp;
    for (const auto& [instrument, avg] : bundle.stats.instrument_avg_amp)
        meta["stats"]["instrument_avg_amp"][instrument] = avg;
    for (const auto& [instrument, net] : bundle.networks) {
        meta["instruments"].push_back(instrument);
        meta["networks"][instrument] = network_meta(net);
    }
    for (const auto& [instrument, curve] : bundle.curves) {
        meta["curves"][instrument]["train"] = curve.train_mse;
        meta["curves"][instrument]["val"] = curve.val_mse;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_bundle: cannot open '" + path + "'");
    const std::string blob = meta.dump();
    out.write("PSNN", 4);
    const std::uint32_t version = kBundleVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const auto blob_len = std::uint64_t(blob.size());
    out.write(reinterpret_cast<const char*>(&blob_len), 8);
    out.write(blob.data(), std::streamsize(blob.size()));
    for (const auto& [_, net] : bundle.networks) {
        Network& mut = const_cast<Network&>(net);
        for (const Layer* l : mut.all_layers()) {
            out.write(reinterpret_cast<const char*>(l->w.data()),
                      std::streamsize(l->w.size() * 8));
            out.write(reinterpret_cast<const char*>(l->b.data()),
                      std::streamsize(l->b.size() * 8));
        }
    }
    if (!out) throw Error("save_bundle: write failed");
}

ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_bundle: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PSNN", 4) != 0)
        throw Error("load_bundle: corrupt file (bad magic)");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kBundleVersion)
        throw Error("load_bundle: version mismatch (file " + std::to_string(version) +
                    ", expected " + std::to_string(kBundleVersion) + ")");
    std::uint64_t blob_len = 0;
    in.read(reinterpret_cast<char*>(&blob_len), 8);
    std::string blob(blob_len, '\0');
    in.read(blob.data(), std::streamsize(blob_len));
    if (!in) throw Error("load_bundle: corrupt file (truncated header)");

    json meta;
    try {
        meta = json::parse(blob);
    } catch (const json::exception&) {
        throw Error("load_bundle: corrupt file (bad metadata)");
    }

    ModelBundle bundle;
    bundle.tag = arch_tag_from_name(meta.at("tag"));
    bundle.context = meta.at("context");
    bundle.stft_config = stft_config_from_json(meta.at("stft"));
    bundle.phase_config = phase_config_from_json(meta.at("phase"));
    bundle.stats.channels = meta.at("stats").at("channels");
    bundle.stats.bins = meta.at("stats").at("bins");
    bundle.stats.mean_amp = meta.at("stats").at("mean_amp").get<std::vector<double>>();
    bundle.stats.std_amp = meta.at("stats").at("std_amp").get<std::vector<double>>();
    for (const auto& [instrument, avg] : meta.at("stats").at("instrument_avg_amp").items())
        bundle.stats.instrument_avg_amp[instrument] = avg.get<std::vector<double>>();
    for (const auto& instrument : meta.at("instruments"))
        bundle.networks[instrument.get<std::string>()] =
            network_from_meta(meta.at("networks").at(instrument.get<std::string>()));
    if (meta.contains("curves"))
        for (const auto& [instrument, c] : meta.at("curves").items()) {
            TrainResult r;
            r.train_mse = c.at("train").get<std::vector<double>>();
            r.val_mse = c.at("val").get<std::vector<double>>();
            bundle.curves[instrument] = r;
        }

    for (auto& [_, net] : bundle.networks) {
        for (Layer* l : net.all_layers()) {
            in.read(reinterpret_cast<char*>(l->w.data()), std::streamsize(l->w.size() * 8));
            in.read(reinterpret_cast<char*>(l->b.data()), std::streamsize(l->b.size() * 8));
        }
    }
    if (!in) throw Error("load_bundle: corrupt file (truncated parameters)");
    return bundle;
}

void write_loss_curve_csv(const std::string& path, const TrainResult& result) {
    std::ofstream out(path);
    if (!out) throw Error("write_loss_curve_csv: cannot open '" + path + "'");
    out << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < result.train_mse.size(); ++e) {
        out << e << ',' << result.train_mse[e] << ',';
        if (e < result.val_mse.size()) out << result.val_mse[e];
        out << '\n';
    }
}

}  // namespace psep::nn
