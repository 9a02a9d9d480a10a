#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "af3d/assignment.hpp"
#include "af3d/tensor.hpp"

namespace af3d {

enum class NormMode { Instance, Fixed };

struct NetworkConfig {
    int base_channels = 16;
    int blocks_per_stage = 2;
    int growth = 8;
    int head_channels = 32;
    /// Predictions per grid point: 1 anchor-free, 3 anchor-based.
    int k_per_point = 1;
    NormMode norm = NormMode::Instance;
    /// Initial bias of the score channels in the last head layer.
    double head_bias_init = 0.0;

    void validate() const;
    int head_outputs() const { return 5 * k_per_point; }
};

/// Closed-form trainable parameter count for a configuration.
std::size_t expected_parameter_count(const NetworkConfig& cfg);

/// Desk-scale 3D U-net with densely connected stages and one independent head per stride (4, 8, 16).
template <typename T>
class Network {
public:
    Network(const NetworkConfig& cfg, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }

    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }
    Param<T>& param(const std::string& name);
    std::size_t parameter_count() const;

    /// Input is (batch, 1, z, y, x) with every spatial dim a multiple of 16. Returns the raw
    /// head outputs for strides 4, 8 and 16, each (batch, 5K, dims / stride).
    std::array<Tensor5<T>, 3> forward(const Tensor5<T>& input);

    /// Accumulates parameter gradients for the last forward pass.
    void backward(const std::array<Tensor5<T>, 3>& head_grads);

    void zero_grad();

    /// Copy with parameters converted to another scalar type.
    template <typename U>
    Network<U> cast() const {
        Network<U> out(cfg_, 0);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.params()[i].value.assign(params_[i].value.begin(), params_[i].value.end());
        }
        return out;
    }

private:
    enum class Kind { Conv3, Conv1, Down, Up, Copy };

    struct Op {
        Kind kind = Kind::Conv3;
        std::string name;
        int in_buf = 0;
        int in_channels = 0;
        int out_buf = 0;
        int out_offset = 0;
        int out_channels = 0;
        int weight = -1;
        int bias = -1;
        int gamma = -1;
        int beta = -1;
        bool relu = false;
        int cache = -1;
    };

    struct Buffer {
        int channels = 0;
        int level = 0;  // spatial size = input / 2^level
        std::vector<T> value;
        std::vector<T> grad;
    };

    int add_buffer(int channels, int level);
    int add_param(const std::string& name, std::vector<int> shape, double init_std, double init_value,
                  std::uint64_t seed);
    void add_unit(Kind kind, const std::string& name, int in_buf, int in_channels, int out_buf, int out_offset,
                  int out_channels, bool norm, bool relu, std::uint64_t seed, double init_std = -1.0);
    void allocate(int batch, Dims3 input_dims);
    Dims3 dims_at(int level) const;
    void run_forward(const Op& op, int b);
    void run_backward(const Op& op, int b);

    NetworkConfig cfg_;
    std::vector<Param<T>> params_;
    std::vector<Op> ops_;
    std::vector<Buffer> buffers_;
    std::vector<std::vector<T>> norm_xhat_;
    std::vector<std::vector<T>> norm_inv_std_;
    std::array<int, 3> head_buffers_{};
    int input_buffer_ = 0;
    int batch_ = 0;
    Dims3 input_dims_{0, 0, 0};
    bool has_forward_ = false;
    std::vector<T> scratch_;
    std::vector<T> grad_scratch_;
};

extern template class Network<float>;
extern template class Network<double>;

/// SGD with momentum and L2 weight decay: v <- m v + (g + wd p); p <- p - lr v.
struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

template <typename T>
class SgdOptimizer {
public:
    explicit SgdOptimizer(SgdConfig cfg = {}) : cfg_(cfg) {}

    const SgdConfig& config() const { return cfg_; }
    SgdConfig& config() { return cfg_; }

    /// Rejects non-finite gradients (naming the parameter) before touching any value.
    void step(std::vector<Param<T>>& params);

    /// Momentum buffers, one per parameter; empty until the first step.
    std::vector<std::vector<T>>& velocity() { return velocity_; }
    const std::vector<std::vector<T>>& velocity() const { return velocity_; }

private:
    SgdConfig cfg_;
    std::vector<std::vector<T>> velocity_;
};

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
template <typename T>
double clip_grad_norm(std::vector<Param<T>>& params, double max_norm);

}  // namespace af3d
