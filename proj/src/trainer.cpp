#include "adaptree/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "adaptree/error.hpp"

namespace adaptree {

void MlpArchitecture::validate() const {
    if (widths.size() < 3) throw ConfigError("architecture needs at least one hidden layer");
    for (int w : widths)
        if (w < 1) throw ConfigError("layer widths must be positive");
}

std::size_t MlpArchitecture::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 1; l < widths.size(); ++l)
        n += static_cast<std::size_t>(widths[l]) * (widths[l - 1] + 1);
    return n;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (init_rule != "uniform_fan_in") throw ConfigError("unknown init rule '" + init_rule + "'");
}

Mlp::Mlp(MlpArchitecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t off = 0;
    for (int l = 0; l < arch_.layers(); ++l) {
        offsets_.push_back(off);
        off += static_cast<std::size_t>(arch_.widths[l + 1]) * (arch_.widths[l] + 1);
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
}

std::size_t Mlp::bias_offset(int l) const {
    return offsets_[l] + static_cast<std::size_t>(arch_.widths[l + 1]) * arch_.widths[l];
}

Eigen::Map<const Mlp::RowMat> Mlp::weight(int l) const {
    return {params_.data() + offsets_[l], arch_.widths[l + 1], arch_.widths[l]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const {
    return {params_.data() + bias_offset(l), arch_.widths[l + 1]};
}

namespace {

using Mat = Eigen::MatrixXd;

// activations are (width x n), one column per sample
struct Pass {
    std::vector<Mat> z;  // pre-activations per layer
    std::vector<Mat> a;  // a[0] input, a[l] = relu(z[l-1]) for hidden layers
};

Eigen::Map<const Mat> input_view(const PointCloud& x) {
    return {x.coords.data(), x.dim, static_cast<Eigen::Index>(x.size())};
}

void forward(const Mlp& net, const PointCloud& x, Pass& p) {
    const int L = net.arch().layers();
    p.z.resize(L);
    p.a.resize(L);
    p.a[0] = input_view(x);
    for (int l = 0; l < L; ++l) {
        p.z[l].noalias() = net.weight(l) * p.a[l];
        p.z[l].colwise() += net.bias(l);
        if (l + 1 < L) p.a[l + 1] = p.z[l].cwiseMax(0.0);
    }
}

void check_data(const Mlp& net, const Dataset& data) {
    if (data.size() == 0) throw ValidationError("empty dataset");
    if (data.x.size() != data.size()) throw ValidationError("dataset x/y length mismatch");
    if (data.dim() != net.arch().widths.front()) throw ValidationError("dataset dimension does not match the network input");
    if (net.arch().widths.back() != 1) throw ValidationError("regression needs a scalar output");
}

double residual_mse(const Eigen::Ref<const Eigen::RowVectorXd>& pred, const std::vector<double>& y) {
    double s = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - y[i];
        s += r * r;
    }
    return s / static_cast<double>(y.size());
}

}  // namespace

Eigen::VectorXd Mlp::predict(const PointCloud& x) const {
    if (x.dim != arch_.widths.front()) throw ValidationError("input dimension mismatch");
    Pass p;
    forward(*this, x, p);
    return p.z.back().row(0).transpose();
}

double Mlp::predict(std::span<const double> x) const {
    PointCloud pc(static_cast<int>(x.size()));
    pc.push_back(x);
    return predict(pc)[0];
}

Mlp init_mlp(const MlpArchitecture& arch, std::uint64_t seed) {
    Mlp net(arch);
    std::mt19937_64 rng(seed);
    auto& p = net.params();
    for (int l = 0; l < arch.layers(); ++l) {
        const double r = 1.0 / std::sqrt(static_cast<double>(arch.widths[l]));
        std::uniform_real_distribution<double> U(-r, r);
        const std::size_t n = static_cast<std::size_t>(arch.widths[l + 1]) * (arch.widths[l] + 1);
        for (std::size_t i = 0; i < n; ++i) p[static_cast<Eigen::Index>(net.weight_offset(l) + i)] = U(rng);
    }
    return net;
}

AdamState AdamState::zeros(std::size_t n) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    s.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    return s;
}

void adam_step(AdamState& st, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr) {
    if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size())
        throw ValidationError("adam: shape mismatch");
    for (Eigen::Index i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            std::ostringstream os;
            os << "non-finite gradient at parameter " << i << " (value " << grads[i] << ", step " << st.step + 1
               << ", param " << params[i] << ")";
            throw NumericalError(os.str());
        }
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    st.m = st.beta1 * st.m + (1.0 - st.beta1) * grads;
    st.v = st.beta2 * st.v + (1.0 - st.beta2) * grads.cwiseProduct(grads);
    params.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

double loss_and_gradient(const Mlp& net, const Dataset& data, Eigen::VectorXd* grad) {
    check_data(net, data);
    Pass p;
    forward(net, data.x, p);
    const double loss = residual_mse(p.z.back().row(0), data.y);
    if (!grad) return loss;

    const int L = net.arch().layers();
    const auto n = static_cast<Eigen::Index>(data.size());
    grad->setZero(net.params().size());
    Mat delta(1, n);
    for (Eigen::Index i = 0; i < n; ++i) delta(0, i) = 2.0 * (p.z.back()(0, i) - data.y[i]) / static_cast<double>(n);
    for (int l = L - 1; l >= 0; --l) {
        const int out = net.arch().widths[l + 1], in = net.arch().widths[l];
        Eigen::Map<Mlp::RowMat> gW(grad->data() + net.weight_offset(l), out, in);
        Eigen::Map<Eigen::VectorXd> gb(grad->data() + net.bias_offset(l), out);
        gW.noalias() = delta * p.a[l].transpose();
        gb = delta.rowwise().sum();
        if (l > 0) {
            Mat prev = net.weight(l).transpose() * delta;
            delta = prev.cwiseProduct((p.z[l - 1].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

double mse(const Mlp& net, const Dataset& data) { return loss_and_gradient(net, data, nullptr); }

double min_abs_preactivation(const Mlp& net, const PointCloud& x) {
    Pass p;
    forward(net, x, p);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l + 1 < p.z.size(); ++l) m = std::min(m, p.z[l].cwiseAbs().minCoeff());
    return m;
}

GradCheck gradient_check(const Mlp& net, const Dataset& data, std::size_t samples, double step, std::uint64_t seed,
                         double floor) {
    Eigen::VectorXd g;
    loss_and_gradient(net, data, &g);
    const auto np = static_cast<std::size_t>(g.size());
    std::vector<std::size_t> idx(np);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(samples, np));
    GradCheck out;
    Mlp probe = net;
    for (std::size_t i : idx) {
        const auto k = static_cast<Eigen::Index>(i);
        const double p0 = net.params()[k];
        probe.params()[k] = p0 + step;
        const double up = mse(probe, data);
        probe.params()[k] = p0 - step;
        const double dn = mse(probe, data);
        probe.params()[k] = p0;
        const double fd = (up - dn) / (2 * step);
        const double rel = std::abs(g[k] - fd) / std::max({std::abs(g[k]), std::abs(fd), floor});
        out.max_rel_error = std::max(out.max_rel_error, rel);
        ++out.checked;
    }
    return out;
}

double mse(const ReluNetwork& net, const Dataset& data) {
    if (data.size() == 0) throw ValidationError("empty dataset");
    if (data.dim() != net.input_dim || net.output_dim != 1) throw ValidationError("dataset does not match the network");
    const auto pred = relu_forward_batch(net, data.x.coords);
    double s = 0;
    for (std::size_t i = 0; i < data.size(); ++i) s += (pred[i] - data.y[i]) * (pred[i] - data.y[i]);
    return s / static_cast<double>(data.size());
}

TrainResult train(Mlp net, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    check_data(net, data);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    res.history.reserve(static_cast<std::size_t>(cfg.epochs) + 1);
    AdamState st = AdamState::zeros(static_cast<std::size_t>(net.params().size()));
    Eigen::VectorXd g;
    const std::size_t n = data.size();
    const bool full = cfg.batch_size == 0 || cfg.batch_size >= n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eed));
    Dataset batch;
    batch.x = PointCloud(data.dim());

    res.best_loss = std::numeric_limits<double>::infinity();
    for (int e = 0;; ++e) {
        const double loss = loss_and_gradient(net, data, (full && e < cfg.epochs) ? &g : nullptr);
        if (!std::isfinite(loss)) throw NumericalError("non-finite training loss at epoch " + std::to_string(e));
        res.history.push_back(loss);
        if (loss < res.best_loss) {
            res.best_loss = loss;
            res.best_epoch = e;
            res.net = net;
        }
        if (e == cfg.epochs) break;
        if (full) {
            adam_step(st, net.params(), g, cfg.learning_rate);
            continue;
        }
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::size_t end = std::min(n, b + cfg.batch_size);
            batch.x.coords.clear();
            batch.y.clear();
            for (std::size_t i = b; i < end; ++i) {
                batch.x.push_back(data.x[order[i]]);
                batch.y.push_back(data.y[order[i]]);
            }
            loss_and_gradient(net, batch, &g);
            adam_step(st, net.params(), g, cfg.learning_rate);
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

ReluNetwork to_relu_network(const Mlp& net) {
    ReluNetwork r;
    const auto& w = net.arch().widths;
    r.input_dim = w.front();
    r.output_dim = w.back();
    for (int l = 0; l < net.arch().layers(); ++l) {
        const auto& p = net.params();
        std::span<const double> W(p.data() + net.weight_offset(l), static_cast<std::size_t>(w[l + 1]) * w[l]);
        std::span<const double> b(p.data() + net.bias_offset(l), static_cast<std::size_t>(w[l + 1]));
        r.layers.push_back(Layer::from_dense(w[l + 1], w[l], W, b));
    }
    r.validate();
    return r;
}

nlohmann::json to_json(const TrainConfig& cfg, const MlpArchitecture& arch) {
    return {{"widths", arch.widths},
            {"activation", "relu"},
            {"parameters", arch.parameter_count()},
            {"optimizer", "adam"},
            {"learning_rate", cfg.learning_rate},
            {"beta1", 0.9},
            {"beta2", 0.999},
            {"adam_eps", 1e-8},
            {"epochs", cfg.epochs},
            {"batch", cfg.batch_size == 0 ? nlohmann::json("full") : nlohmann::json(cfg.batch_size)},
            {"init", cfg.init_rule},
            {"seed", cfg.seed}};
}

}  // namespace adaptree
