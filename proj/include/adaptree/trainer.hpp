#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "adaptree/measure.hpp"
#include "adaptree/relu_net.hpp"

namespace adaptree {

struct MlpArchitecture {
    std::vector<int> widths{1, 64, 128, 64, 1};

    void validate() const;
    int layers() const { return static_cast<int>(widths.size()) - 1; }
    std::size_t parameter_count() const;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 20000;
    std::size_t batch_size = 0;  // 0: full batch
    std::uint64_t seed = 0;      // init and minibatch order
    std::string init_rule = "uniform_fan_in";

    void validate() const;
};

struct Dataset {
    PointCloud x;
    std::vector<double> y;

    std::size_t size() const { return y.size(); }
    int dim() const { return x.dim; }
};

// parameters are flat: W_1 (row-major, out x in), b_1, W_2, b_2, ...
class Mlp {
public:
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Mlp() = default;
    explicit Mlp(MlpArchitecture arch);

    const MlpArchitecture& arch() const { return arch_; }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::Map<const RowMat> weight(int l) const;
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;
    std::size_t weight_offset(int l) const { return offsets_[l]; }
    std::size_t bias_offset(int l) const;

    // batch forward on row-major points
    Eigen::VectorXd predict(const PointCloud& x) const;
    double predict(std::span<const double> x) const;

private:
    MlpArchitecture arch_;
    Eigen::VectorXd params_;
    std::vector<std::size_t> offsets_;
};

Mlp init_mlp(const MlpArchitecture& arch, std::uint64_t seed);

struct AdamState {
    Eigen::VectorXd m, v;
    long step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState zeros(std::size_t n);
};

void adam_step(AdamState& st, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr);

// mean squared residual; grad (when non-null) receives d loss / d params
double loss_and_gradient(const Mlp& net, const Dataset& data, Eigen::VectorXd* grad);

double mse(const Mlp& net, const Dataset& data);
double mse(const ReluNetwork& net, const Dataset& data);

// smallest |pre-activation| over hidden units and samples; gradient checks need it away from 0
double min_abs_preactivation(const Mlp& net, const PointCloud& x);

struct GradCheck {
    double max_rel_error = 0;
    std::size_t checked = 0;
};

// central differences on `samples` random parameters; relative error uses max(|g|, |fd|, floor)
GradCheck gradient_check(const Mlp& net, const Dataset& data, std::size_t samples, double step, std::uint64_t seed,
                         double floor = 1e-6);

struct TrainResult {
    Mlp net;                      // best-train-loss snapshot
    std::vector<double> history;  // loss before each update, plus the final loss
    int best_epoch = 0;
    double best_loss = 0;
    double seconds = 0;
};

TrainResult train(Mlp net, const Dataset& data, const TrainConfig& cfg);

ReluNetwork to_relu_network(const Mlp& net);

nlohmann::json to_json(const TrainConfig& cfg, const MlpArchitecture& arch);

}  // namespace adaptree
