#include "adaptree/relu_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "adaptree/error.hpp"
#include "adaptree/parallel.hpp"

namespace adaptree {

Layer Layer::from_triplets(int rows, int cols, std::vector<Triplet> t, std::vector<double> bias) {
    if (rows < 0 || cols < 0) throw ValidationError("negative layer shape");
    std::sort(t.begin(), t.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    Layer L;
    L.rows = rows;
    L.cols = cols;
    L.row_ptr.assign(rows + 1, 0);
    for (std::size_t i = 0; i < t.size();) {
        const auto& e = t[i];
        if (e.row < 0 || e.row >= rows || e.col < 0 || e.col >= cols)
            throw ValidationError("layer entry out of range");
        double v = e.value;
        std::size_t k = i + 1;
        for (; k < t.size() && t[k].row == e.row && t[k].col == e.col; ++k) v += t[k].value;
        if (v != 0) {
            L.col.push_back(e.col);
            L.val.push_back(v);
            ++L.row_ptr[e.row + 1];
        }
        i = k;
    }
    for (int r = 0; r < rows; ++r) L.row_ptr[r + 1] += L.row_ptr[r];
    if (bias.empty()) bias.assign(rows, 0.0);
    if (static_cast<int>(bias.size()) != rows) throw ValidationError("bias length does not match layer rows");
    L.bias = std::move(bias);
    return L;
}

Layer Layer::from_dense(int rows, int cols, std::span<const double> w, std::span<const double> b) {
    if (w.size() != static_cast<std::size_t>(rows) * cols) throw ValidationError("weight count does not match shape");
    std::vector<Triplet> t;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (double v = w[static_cast<std::size_t>(r) * cols + c]; v != 0) t.push_back({r, c, v});
    return from_triplets(rows, cols, std::move(t), std::vector<double>(b.begin(), b.end()));
}

void Layer::apply(const double* in, double* out) const {
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int i = row_ptr[r]; i < row_ptr[r + 1]; ++i) s += val[i] * in[col[i]];
        if (bias[r] != 0) s += bias[r];
        out[r] = s;
    }
}

std::vector<Triplet> Layer::triplets() const {
    std::vector<Triplet> t;
    t.reserve(val.size());
    for (int r = 0; r < rows; ++r)
        for (int i = row_ptr[r]; i < row_ptr[r + 1]; ++i) t.push_back({r, col[i], val[i]});
    return t;
}

std::vector<double> Layer::dense() const {
    std::vector<double> w(static_cast<std::size_t>(rows) * cols, 0.0);
    for (const auto& e : triplets()) w[static_cast<std::size_t>(e.row) * cols + e.col] = e.value;
    return w;
}

void ReluNetwork::validate() const {
    if (layers.empty()) throw ValidationError("network has no layers");
    int prev = input_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].cols != prev)
            throw ValidationError("layer " + std::to_string(l) + " expects " + std::to_string(layers[l].cols) +
                                  " inputs, previous layer gives " + std::to_string(prev));
        prev = layers[l].rows;
    }
    if (prev != output_dim) throw ValidationError("last layer width does not match output_dim");
}

NetworkStats network_stats(const ReluNetwork& net) {
    NetworkStats s;
    s.L = net.depth();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& L = net.layers[l];
        if (static_cast<int>(l) < s.L) s.w = std::max(s.w, L.rows);
        s.K += L.nnz();
        for (double v : L.val) s.kappa = std::max(s.kappa, std::abs(v));
        for (double b : L.bias) {
            if (b != 0) ++s.K;
            s.kappa = std::max(s.kappa, std::abs(b));
        }
    }
    s.M = net.clamp_M ? *net.clamp_M : std::numeric_limits<double>::infinity();
    return s;
}

namespace {

std::size_t widest(const ReluNetwork& net) {
    std::size_t w = net.input_dim;
    for (const auto& L : net.layers) w = std::max<std::size_t>(w, L.rows);
    return w;
}

void forward_into(const ReluNetwork& net, const double* x, double* y, std::vector<double>& a, std::vector<double>& b) {
    const double* in = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& L = net.layers[l];
        const bool last = l + 1 == net.layers.size();
        double* out = last ? y : (l % 2 == 0 ? a.data() : b.data());
        L.apply(in, out);
        if (!last)
            for (int r = 0; r < L.rows; ++r) out[r] = out[r] > 0 ? out[r] : 0.0;
        in = out;
    }
}

}  // namespace

std::vector<double> relu_forward(const ReluNetwork& net, std::span<const double> x) {
    if (static_cast<int>(x.size()) != net.input_dim)
        throw ValidationError("input has " + std::to_string(x.size()) + " entries, network expects " +
                              std::to_string(net.input_dim));
    const auto w = widest(net);
    std::vector<double> a(w), b(w), y(net.output_dim);
    forward_into(net, x.data(), y.data(), a, b);
    return y;
}

double relu_forward_scalar(const ReluNetwork& net, std::span<const double> x) {
    if (net.output_dim != 1) throw ValidationError("network output is not scalar");
    return relu_forward(net, x)[0];
}

std::vector<double> relu_forward_batch(const ReluNetwork& net, std::span<const double> points, int workers) {
    const std::size_t d = net.input_dim;
    if (points.size() % d != 0) throw ValidationError("point buffer is not a multiple of the input dimension");
    const std::size_t n = points.size() / d;
    std::vector<double> out(n * net.output_dim);
    const auto w = widest(net);
    parallel_for(n, workers, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> a(w), b(w);
        for (std::size_t i = lo; i < hi; ++i) forward_into(net, &points[i * d], &out[i * net.output_dim], a, b);
    });
    return out;
}

namespace {

std::vector<char> mask_or_signed(const std::vector<char>& m, int n) {
    if (m.empty()) return std::vector<char>(n, 0);
    if (static_cast<int>(m.size()) != n) throw ValidationError("sign mask length does not match outputs");
    return m;
}

// channel offsets of the carried outputs: one channel when nonneg, a (+,-) pair otherwise
std::vector<int> channel_offsets(const std::vector<char>& nonneg, int& total) {
    std::vector<int> off(nonneg.size());
    total = 0;
    for (std::size_t i = 0; i < nonneg.size(); ++i) {
        off[i] = total;
        total += nonneg[i] ? 1 : 2;
    }
    return off;
}

// last affine layer turned into a hidden layer holding its outputs as carried channels
Layer expand_last(const Layer& last, const std::vector<char>& nonneg, const std::vector<int>& off, int total) {
    std::vector<Triplet> t;
    std::vector<double> bias(total, 0.0);
    for (int r = 0; r < last.rows; ++r) {
        for (int i = last.row_ptr[r]; i < last.row_ptr[r + 1]; ++i) {
            t.push_back({off[r], last.col[i], last.val[i]});
            if (!nonneg[r]) t.push_back({off[r] + 1, last.col[i], -last.val[i]});
        }
        bias[off[r]] = last.bias[r];
        if (!nonneg[r]) bias[off[r] + 1] = -last.bias[r];
    }
    return Layer::from_triplets(total, last.cols, std::move(t), std::move(bias));
}

Layer carry_identity(const std::vector<char>&, int total) {
    std::vector<Triplet> t;
    for (int c = 0; c < total; ++c) t.push_back({c, c, 1.0});
    return Layer::from_triplets(total, total, std::move(t));
}

// reads carried channels back: y_r = h_r or h_r+ - h_r-
Layer uncarry(const std::vector<char>& nonneg, const std::vector<int>& off, int total) {
    std::vector<Triplet> t;
    for (std::size_t r = 0; r < nonneg.size(); ++r) {
        t.push_back({static_cast<int>(r), off[r], 1.0});
        if (!nonneg[r]) t.push_back({static_cast<int>(r), off[r] + 1, -1.0});
    }
    return Layer::from_triplets(static_cast<int>(nonneg.size()), total, std::move(t));
}

}  // namespace

ReluNetwork pad_depth(const ReluNetwork& net, int target_depth, const std::vector<char>& nonneg_in) {
    net.validate();
    const int L = net.depth();
    if (target_depth == L) return net;
    if (target_depth < L) throw ValidationError("cannot pad a network to a smaller depth");
    const auto nonneg = mask_or_signed(nonneg_in, net.output_dim);
    int total = 0;
    const auto off = channel_offsets(nonneg, total);
    ReluNetwork out = net;
    out.layers.pop_back();
    out.layers.push_back(expand_last(net.layers.back(), nonneg, off, total));
    for (int k = 1; k < target_depth - L; ++k) out.layers.push_back(carry_identity(nonneg, total));
    out.layers.push_back(uncarry(nonneg, off, total));
    return out;
}

ReluNetwork stack_parallel(const std::vector<ReluNetwork>& nets, const std::vector<std::vector<char>>& nonneg) {
    if (nets.empty()) throw ValidationError("stack_parallel needs at least one network");
    if (!nonneg.empty() && nonneg.size() != nets.size()) throw ValidationError("one sign mask per network");
    int depth = 0;
    for (const auto& n : nets) {
        n.validate();
        if (n.input_dim != nets[0].input_dim) throw ValidationError("stacked networks need equal input dimension");
        depth = std::max(depth, n.depth());
    }
    std::vector<ReluNetwork> padded;
    for (std::size_t i = 0; i < nets.size(); ++i)
        padded.push_back(pad_depth(nets[i], depth, nonneg.empty() ? std::vector<char>{} : nonneg[i]));
    if (padded.size() == 1) return padded[0];

    ReluNetwork out;
    out.input_dim = nets[0].input_dim;
    out.output_dim = 0;
    for (const auto& n : padded) out.output_dim += n.output_dim;
    for (int l = 0; l <= depth; ++l) {
        std::vector<Triplet> t;
        std::vector<double> bias;
        int row0 = 0, col0 = 0;
        for (const auto& n : padded) {
            const auto& L = n.layers[l];
            for (const auto& e : L.triplets()) t.push_back({row0 + e.row, (l == 0 ? 0 : col0) + e.col, e.value});
            bias.insert(bias.end(), L.bias.begin(), L.bias.end());
            row0 += L.rows;
            col0 += L.cols;
        }
        out.layers.push_back(Layer::from_triplets(row0, l == 0 ? out.input_dim : col0, std::move(t), std::move(bias)));
    }
    out.validate();
    return out;
}

ReluNetwork compose(const ReluNetwork& a, const ReluNetwork& b, const std::vector<char>& nonneg_in) {
    a.validate();
    b.validate();
    if (a.output_dim != b.input_dim) throw ValidationError("compose: output and input dimensions differ");
    const auto nonneg = mask_or_signed(nonneg_in, a.output_dim);
    int total = 0;
    const auto off = channel_offsets(nonneg, total);
    ReluNetwork out;
    out.input_dim = a.input_dim;
    out.output_dim = b.output_dim;
    out.layers.assign(a.layers.begin(), a.layers.end() - 1);
    out.layers.push_back(expand_last(a.layers.back(), nonneg, off, total));
    // b's first layer reads each carried value as h or h+ - h-; the pair sits in adjacent columns
    const auto& B0 = b.layers.front();
    std::vector<Triplet> t;
    for (const auto& e : B0.triplets()) {
        t.push_back({e.row, off[e.col], e.value});
        if (!nonneg[e.col]) t.push_back({e.row, off[e.col] + 1, -e.value});
    }
    out.layers.push_back(Layer::from_triplets(B0.rows, total, std::move(t), B0.bias));
    out.layers.insert(out.layers.end(), b.layers.begin() + 1, b.layers.end());
    out.clamp_M = b.clamp_M;
    out.validate();
    return out;
}

ReluNetwork post_affine(const ReluNetwork& net, int out_rows, const std::vector<Triplet>& A, std::vector<double> c) {
    net.validate();
    const auto& last = net.layers.back();
    std::map<std::pair<int, int>, double> acc;
    std::vector<double> bias = c.empty() ? std::vector<double>(out_rows, 0.0) : std::move(c);
    if (static_cast<int>(bias.size()) != out_rows) throw ValidationError("post_affine: bias length");
    for (const auto& e : A) {
        if (e.row < 0 || e.row >= out_rows || e.col < 0 || e.col >= last.rows)
            throw ValidationError("post_affine: entry out of range");
        for (int i = last.row_ptr[e.col]; i < last.row_ptr[e.col + 1]; ++i)
            acc[{e.row, last.col[i]}] += e.value * last.val[i];
        bias[e.row] += e.value * last.bias[e.col];
    }
    std::vector<Triplet> t;
    for (const auto& [k, v] : acc) t.push_back({k.first, k.second, v});
    ReluNetwork out = net;
    out.layers.back() = Layer::from_triplets(out_rows, last.cols, std::move(t), std::move(bias));
    out.output_dim = out_rows;
    out.clamp_M.reset();
    return out;
}

ReluNetwork append_clamp(const ReluNetwork& net, double M) {
    net.validate();
    if (!(M > 0)) throw ConfigError("clamp bound must be positive");
    const auto& last = net.layers.back();
    const int n = net.output_dim;
    // ReLU(y+M), ReLU(y-M); output ReLU(y+M) - ReLU(y-M) - M
    std::vector<Triplet> t, o;
    std::vector<double> bias(2 * n), ob(n, -M);
    for (int r = 0; r < n; ++r) {
        for (int i = last.row_ptr[r]; i < last.row_ptr[r + 1]; ++i) {
            t.push_back({2 * r, last.col[i], last.val[i]});
            t.push_back({2 * r + 1, last.col[i], last.val[i]});
        }
        bias[2 * r] = last.bias[r] + M;
        bias[2 * r + 1] = last.bias[r] - M;
        o.push_back({r, 2 * r, 1.0});
        o.push_back({r, 2 * r + 1, -1.0});
    }
    ReluNetwork out = net;
    out.layers.back() = Layer::from_triplets(2 * n, last.cols, std::move(t), std::move(bias));
    out.layers.push_back(Layer::from_triplets(n, 2 * n, std::move(o), std::move(ob)));
    out.clamp_M = M;
    return out;
}

double covering_bound(const NetworkStats& s, double delta) {
    if (!(delta > 0)) throw ConfigError("cover radius must be positive");
    const double L = s.L, w = s.w;
    if (s.K == 0) return 0;
    // K log(2 L^2 (w+2) kappa^L w^(L+1) / delta), in log space
    return static_cast<double>(s.K) * (std::log(2.0) + 2 * std::log(L) + std::log(w + 2) + L * std::log(s.kappa) +
                                       (L + 1) * std::log(w) - std::log(delta));
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_num(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw ValidationError("bad number '" + s + "'");
        }
        if (pos != s.size()) throw ValidationError("bad number '" + s + "'");
        return v;
    }
    throw ValidationError("expected a number");
}

// dense row-major unless the matrix is large and sparse
bool write_dense(const Layer& L) {
    const std::size_t n = static_cast<std::size_t>(L.rows) * L.cols;
    return n <= 4096 || L.nnz() * 4 >= n;
}

}  // namespace

nlohmann::json to_json(const ReluNetwork& net) {
    net.validate();
    const auto s = network_stats(net);
    nlohmann::json meta = {{"input_dim", net.input_dim}, {"output_dim", net.output_dim}, {"L", s.L},
                           {"w", s.w},                   {"K", s.K},                     {"kappa", num(s.kappa)}};
    meta["M"] = net.clamp_M ? nlohmann::json(num(*net.clamp_M)) : nlohmann::json(nullptr);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& L : net.layers) {
        nlohmann::json j = {{"rows", L.rows}, {"cols", L.cols}};
        if (write_dense(L)) {
            auto w = nlohmann::json::array();
            for (double v : L.dense()) w.push_back(num(v));
            j["weights"] = std::move(w);
        } else {
            auto e = nlohmann::json::array();
            for (const auto& t : L.triplets()) e.push_back({t.row, t.col, num(t.value)});
            j["entries"] = std::move(e);
        }
        auto b = nlohmann::json::array();
        for (double v : L.bias) b.push_back(num(v));
        j["bias"] = std::move(b);
        layers.push_back(std::move(j));
    }
    return {{"meta", meta}, {"layers", layers}};
}

ReluNetwork network_from_json(const nlohmann::json& j) {
    try {
        ReluNetwork net;
        const auto& meta = j.at("meta");
        net.input_dim = meta.at("input_dim").get<int>();
        net.output_dim = meta.at("output_dim").get<int>();
        if (meta.contains("M") && !meta["M"].is_null()) net.clamp_M = parse_num(meta["M"]);
        for (const auto& lj : j.at("layers")) {
            const int rows = lj.at("rows").get<int>(), cols = lj.at("cols").get<int>();
            std::vector<double> bias;
            for (const auto& v : lj.at("bias")) bias.push_back(parse_num(v));
            if (lj.contains("weights")) {
                std::vector<double> w;
                for (const auto& v : lj["weights"]) w.push_back(parse_num(v));
                net.layers.push_back(Layer::from_dense(rows, cols, w, bias));
            } else {
                std::vector<Triplet> t;
                for (const auto& e : lj.at("entries")) t.push_back({e.at(0).get<int>(), e.at(1).get<int>(), parse_num(e.at(2))});
                net.layers.push_back(Layer::from_triplets(rows, cols, std::move(t), std::move(bias)));
            }
        }
        net.validate();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed network json: ") + e.what());
    }
}

void save_network(const ReluNetwork& net, const std::string& path) {
    std::ofstream o(path);
    if (!o) throw ConfigError("cannot write " + path);
    o << to_json(net).dump() << "\n";
}

ReluNetwork load_network(const std::string& path) {
    std::ifstream i(path);
    if (!i) throw ConfigError("cannot read " + path);
    nlohmann::json j;
    try {
        i >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return network_from_json(j);
}

}  // namespace adaptree
