#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace adaptree {

struct Triplet {
    int row = 0, col = 0;
    double value = 0;
};

// affine map y = W x + b, W stored row-compressed with columns ascending.
// Each output is summed in column order and the bias is added last.
struct Layer {
    int rows = 0, cols = 0;
    std::vector<int> row_ptr{0};
    std::vector<int> col;
    std::vector<double> val;
    std::vector<double> bias;

    // duplicates are summed, zeros dropped
    static Layer from_triplets(int rows, int cols, std::vector<Triplet> t, std::vector<double> bias = {});
    static Layer from_dense(int rows, int cols, std::span<const double> w, std::span<const double> b);

    std::size_t nnz() const { return val.size(); }
    void apply(const double* in, double* out) const;
    std::vector<Triplet> triplets() const;
    std::vector<double> dense() const;  // row-major
};

struct ReluNetwork {
    int input_dim = 1;
    int output_dim = 1;
    std::vector<Layer> layers;  // ReLU between consecutive layers, none after the last
    std::optional<double> clamp_M;

    int depth() const { return static_cast<int>(layers.size()) - 1; }
    void validate() const;
};

struct NetworkStats {
    int L = 0;          // hidden layers
    int w = 0;          // widest hidden layer
    std::size_t K = 0;  // nonzero weights and biases
    double kappa = 0;   // largest parameter magnitude
    double M = 0;       // output bound, +inf when unclamped
};

NetworkStats network_stats(const ReluNetwork& net);

std::vector<double> relu_forward(const ReluNetwork& net, std::span<const double> x);
double relu_forward_scalar(const ReluNetwork& net, std::span<const double> x);
// row-major points (n x input_dim) -> row-major outputs (n x output_dim); identical to per-point calls
std::vector<double> relu_forward_batch(const ReluNetwork& net, std::span<const double> points, int workers = 1);

// exact identity carrying of outputs through extra hidden layers;
// nonneg marks outputs known to be >= 0 (one channel instead of a +/- pair)
ReluNetwork pad_depth(const ReluNetwork& net, int target_depth, const std::vector<char>& nonneg = {});
ReluNetwork stack_parallel(const std::vector<ReluNetwork>& nets, const std::vector<std::vector<char>>& nonneg = {});
// b(a(x)); a's outputs pass through one exact ReLU layer
ReluNetwork compose(const ReluNetwork& a, const ReluNetwork& b, const std::vector<char>& nonneg = {});
// outputs replaced by A y + c, folded into the last layer
ReluNetwork post_affine(const ReluNetwork& net, int out_rows, const std::vector<Triplet>& A, std::vector<double> c = {});
// one extra hidden layer clipping every output to [-M, M]
ReluNetwork append_clamp(const ReluNetwork& net, double M);

// log of the delta-covering number bound for the class with these statistics
double covering_bound(const NetworkStats& s, double delta);

nlohmann::json to_json(const ReluNetwork& net);
ReluNetwork network_from_json(const nlohmann::json& j);
void save_network(const ReluNetwork& net, const std::string& path);
ReluNetwork load_network(const std::string& path);

}  // namespace adaptree
