#include "af3d/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "af3d/rng.hpp"
#include "af3d/tensor_ops.hpp"

namespace af3d {

void NetworkConfig::validate() const {
    require(base_channels >= 2, ErrorCode::Validation, "base_channels must be >= 2");
    require(blocks_per_stage >= 0, ErrorCode::Validation, "blocks_per_stage must be >= 0");
    require(growth >= 1, ErrorCode::Validation, "growth must be >= 1");
    require(head_channels >= 1, ErrorCode::Validation, "head_channels must be >= 1");
    require(k_per_point == 1 || k_per_point == 3, ErrorCode::Validation, "k_per_point must be 1 or 3");
    require(std::isfinite(head_bias_init), ErrorCode::Validation, "head_bias_init must be finite");
}

std::size_t expected_parameter_count(const NetworkConfig& cfg) {
    const std::size_t b = cfg.base_channels;
    const std::size_t g = cfg.growth;
    const std::size_t n = cfg.blocks_per_stage;
    const std::size_t h = cfg.head_channels;
    const std::size_t out = 5 * cfg.k_per_point;
    const std::size_t stem = std::max<std::size_t>(1, b / 2);
    const std::size_t c0 = b + n * g;
    const std::size_t c1 = c0 + n * g;
    const std::size_t c2 = c1 + n * g;

    auto dense = [&](std::size_t c_in) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            total += g * (c_in + i * g) * 27 + 2 * g;
        }
        return total;
    };
    std::size_t total = 0;
    total += stem * 8 + 2 * stem;
    total += b * stem * 8 + 2 * b;
    total += dense(b);
    total += c0 * c0 * 8 + 2 * c0;
    total += dense(c0);
    total += c1 * c1 * 8 + 2 * c1;
    total += dense(c1);
    total += h * c2 * 27 + 2 * h;
    total += h * h * 8 + 2 * h + h * (h + c1) * 27 + 2 * h;
    total += h * h * 8 + 2 * h + h * (h + c0) * 27 + 2 * h;
    total += 3 * (h * h + h + out * h + out);
    return total;
}

template <typename T>
int Network<T>::add_buffer(int channels, int level) {
    Buffer buf;
    buf.channels = channels;
    buf.level = level;
    buffers_.push_back(std::move(buf));
    return static_cast<int>(buffers_.size()) - 1;
}

template <typename T>
int Network<T>::add_param(const std::string& name, std::vector<int> shape, double init_std, double init_value,
                          std::uint64_t seed) {
    Param<T> p;
    p.name = name;
    std::size_t count = 1;
    for (const int d : shape) {
        count *= static_cast<std::size_t>(d);
    }
    p.shape = std::move(shape);
    p.value.assign(count, static_cast<T>(init_value));
    p.grad.assign(count, T(0));
    if (init_std > 0.0) {
        Rng rng(seed, {static_cast<std::uint64_t>(params_.size())});
        for (auto& v : p.value) {
            v = static_cast<T>(init_std * rng.normal());
        }
    }
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

template <typename T>
void Network<T>::add_unit(Kind kind, const std::string& name, int in_buf, int in_channels, int out_buf,
                          int out_offset, int out_channels, bool norm, bool relu, std::uint64_t seed,
                          double init_std) {
    Op op;
    op.kind = kind;
    op.name = name;
    op.in_buf = in_buf;
    op.in_channels = in_channels;
    op.out_buf = out_buf;
    op.out_offset = out_offset;
    op.out_channels = out_channels;
    op.relu = relu;
    if (kind != Kind::Copy) {
        std::vector<int> shape;
        double fan_in = in_channels;
        switch (kind) {
            case Kind::Conv3: shape = {out_channels, in_channels, 3, 3, 3}; fan_in *= 27; break;
            case Kind::Conv1: shape = {out_channels, in_channels, 1, 1, 1}; break;
            case Kind::Down: shape = {out_channels, in_channels, 2, 2, 2}; fan_in *= 8; break;
            case Kind::Up: shape = {in_channels, out_channels, 2, 2, 2}; break;
            case Kind::Copy: break;
        }
        const double std_dev = init_std > 0.0 ? init_std : std::sqrt(2.0 / fan_in);
        op.weight = add_param(name + ".weight", shape, std_dev, 0.0, seed);
        if (norm) {
            // A bias in front of a normalisation is redundant, so normalised units carry gamma/beta instead.
            op.gamma = add_param(name + ".gamma", {out_channels}, 0.0, 1.0, seed);
            op.beta = add_param(name + ".beta", {out_channels}, 0.0, 0.0, seed);
            op.cache = static_cast<int>(norm_xhat_.size());
            norm_xhat_.emplace_back();
            norm_inv_std_.emplace_back();
        } else {
            op.bias = add_param(name + ".bias", {out_channels}, 0.0, 0.0, seed);
        }
    }
    ops_.push_back(std::move(op));
}

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int b = cfg.base_channels;
    const int g = cfg.growth;
    const int n = cfg.blocks_per_stage;
    const int h = cfg.head_channels;
    const int stem = std::max(1, b / 2);
    const int c0 = b + n * g;
    const int c1 = c0 + n * g;
    const int c2 = c1 + n * g;

    input_buffer_ = add_buffer(1, 0);
    const int s2 = add_buffer(stem, 1);
    const int d0 = add_buffer(c0, 2);
    const int d1 = add_buffer(c1, 3);
    const int d2 = add_buffer(c2, 4);
    const int f2 = add_buffer(h, 4);
    const int cat1 = add_buffer(h + c1, 3);
    const int f1 = add_buffer(h, 3);
    const int cat0 = add_buffer(h + c0, 2);
    const int f0 = add_buffer(h, 2);

    add_unit(Kind::Down, "stem1", input_buffer_, 1, s2, 0, stem, true, true, seed);
    add_unit(Kind::Down, "stem2", s2, stem, d0, 0, b, true, true, seed);
    auto dense = [&](const std::string& prefix, int buf, int c_in) {
        for (int i = 0; i < n; ++i) {
            add_unit(Kind::Conv3, prefix + "." + std::to_string(i), buf, c_in + i * g, buf, c_in + i * g, g, true,
                     true, seed);
        }
    };
    dense("dense0", d0, b);
    add_unit(Kind::Down, "down1", d0, c0, d1, 0, c0, true, true, seed);
    dense("dense1", d1, c0);
    add_unit(Kind::Down, "down2", d1, c1, d2, 0, c1, true, true, seed);
    dense("dense2", d2, c1);
    add_unit(Kind::Conv3, "fuse2", d2, c2, f2, 0, h, true, true, seed);
    add_unit(Kind::Up, "up1", f2, h, cat1, 0, h, true, true, seed);
    add_unit(Kind::Copy, "skip1", d1, c1, cat1, h, c1, false, false, seed);
    add_unit(Kind::Conv3, "fuse1", cat1, h + c1, f1, 0, h, true, true, seed);
    add_unit(Kind::Up, "up0", f1, h, cat0, 0, h, true, true, seed);
    add_unit(Kind::Copy, "skip0", d0, c0, cat0, h, c0, false, false, seed);
    add_unit(Kind::Conv3, "fuse0", cat0, h + c0, f0, 0, h, true, true, seed);

    const std::array<int, 3> fused = {f0, f1, f2};
    for (int l = 2; l >= 0; --l) {
        const std::string prefix = "head" + std::to_string(l);
        const int hidden = add_buffer(h, l + 2);
        head_buffers_[l] = add_buffer(cfg.head_outputs(), l + 2);
        add_unit(Kind::Conv1, prefix + ".hidden", fused[l], h, hidden, 0, h, false, true, seed);
        add_unit(Kind::Conv1, prefix + ".out", hidden, h, head_buffers_[l], 0, cfg.head_outputs(), false, false, seed,
                 0.01);
        auto& bias = params_[ops_.back().bias].value;
        for (int a = 0; a < cfg.k_per_point; ++a) {
            bias[a * 5] = static_cast<T>(cfg.head_bias_init);
        }
    }
}

template <typename T>
Param<T>& Network<T>::param(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) {
        total += p.value.size();
    }
    return total;
}

template <typename T>
Dims3 Network<T>::dims_at(int level) const {
    return {input_dims_.z >> level, input_dims_.y >> level, input_dims_.x >> level};
}

template <typename T>
void Network<T>::allocate(int batch, Dims3 input_dims) {
    if (batch == batch_ && input_dims == input_dims_) {
        return;
    }
    batch_ = batch;
    input_dims_ = input_dims;
    for (auto& buf : buffers_) {
        const auto size = static_cast<std::size_t>(batch) * buf.channels * dims_at(buf.level).count();
        buf.value.assign(size, T(0));
        buf.grad.assign(size, T(0));
    }
    for (const auto& op : ops_) {
        if (op.cache >= 0) {
            const auto s = dims_at(buffers_[op.out_buf].level).count();
            norm_xhat_[op.cache].assign(static_cast<std::size_t>(batch) * op.out_channels * s, T(0));
            norm_inv_std_[op.cache].assign(static_cast<std::size_t>(batch) * op.out_channels, T(0));
        }
    }
}

template <typename T>
void Network<T>::run_forward(const Op& op, int b) {
    const auto& in_buf = buffers_[op.in_buf];
    auto& out_buf = buffers_[op.out_buf];
    const Dims3 din = dims_at(in_buf.level);
    const Dims3 dout = dims_at(out_buf.level);
    const std::size_t sin = din.count();
    const std::size_t sout = dout.count();
    const T* in = in_buf.value.data() + static_cast<std::size_t>(b) * in_buf.channels * sin;
    T* out = out_buf.value.data() + (static_cast<std::size_t>(b) * out_buf.channels + op.out_offset) * sout;
    const T* w = op.weight >= 0 ? params_[op.weight].value.data() : nullptr;
    const T* bias = op.bias >= 0 ? params_[op.bias].value.data() : nullptr;

    switch (op.kind) {
        case Kind::Conv3: ops::conv_forward(in, op.in_channels, din, w, bias, op.out_channels, 3, out, scratch_); break;
        case Kind::Conv1: ops::conv_forward(in, op.in_channels, din, w, bias, op.out_channels, 1, out, scratch_); break;
        case Kind::Down: ops::down_forward(in, op.in_channels, din, w, bias, op.out_channels, out, scratch_); break;
        case Kind::Up: ops::up_forward(in, op.in_channels, din, w, bias, op.out_channels, out, scratch_); break;
        case Kind::Copy: std::copy(in, in + static_cast<std::size_t>(op.in_channels) * sin, out); break;
    }
    if (op.gamma >= 0) {
        ops::norm_forward(out, op.out_channels, sout, params_[op.gamma].value.data(), params_[op.beta].value.data(),
                          cfg_.norm == NormMode::Instance,
                          norm_xhat_[op.cache].data() + static_cast<std::size_t>(b) * op.out_channels * sout,
                          norm_inv_std_[op.cache].data() + static_cast<std::size_t>(b) * op.out_channels);
    }
    if (op.relu) {
        ops::relu_forward(out, static_cast<std::size_t>(op.out_channels) * sout);
    }
}

template <typename T>
void Network<T>::run_backward(const Op& op, int b) {
    auto& in_buf = buffers_[op.in_buf];
    auto& out_buf = buffers_[op.out_buf];
    const Dims3 din = dims_at(in_buf.level);
    const Dims3 dout = dims_at(out_buf.level);
    const std::size_t sin = din.count();
    const std::size_t sout = dout.count();
    const std::size_t n_out = static_cast<std::size_t>(op.out_channels) * sout;
    const std::size_t out_at = (static_cast<std::size_t>(b) * out_buf.channels + op.out_offset) * sout;
    const T* in = in_buf.value.data() + static_cast<std::size_t>(b) * in_buf.channels * sin;
    T* gin = op.in_buf == input_buffer_ ? nullptr
                                        : in_buf.grad.data() + static_cast<std::size_t>(b) * in_buf.channels * sin;
    T* gout = out_buf.grad.data() + out_at;

    if (op.kind == Kind::Copy) {
        for (std::size_t i = 0; i < n_out; ++i) {
            gin[i] += gout[i];
        }
        return;
    }
    if (op.relu) {
        ops::relu_backward(out_buf.value.data() + out_at, gout, n_out);
    }
    const T* g_pre = gout;
    if (op.gamma >= 0) {
        grad_scratch_.resize(n_out);
        ops::norm_backward(gout, op.out_channels, sout, params_[op.gamma].value.data(),
                           norm_xhat_[op.cache].data() + static_cast<std::size_t>(b) * op.out_channels * sout,
                           norm_inv_std_[op.cache].data() + static_cast<std::size_t>(b) * op.out_channels,
                           cfg_.norm == NormMode::Instance, grad_scratch_.data(), params_[op.gamma].grad.data(),
                           params_[op.beta].grad.data());
        g_pre = grad_scratch_.data();
    }
    const T* w = params_[op.weight].value.data();
    T* gw = params_[op.weight].grad.data();
    T* gbias = op.bias >= 0 ? params_[op.bias].grad.data() : nullptr;
    switch (op.kind) {
        case Kind::Conv3:
            ops::conv_backward(in, op.in_channels, din, w, op.out_channels, 3, g_pre, gin, gw, gbias, scratch_);
            break;
        case Kind::Conv1:
            ops::conv_backward(in, op.in_channels, din, w, op.out_channels, 1, g_pre, gin, gw, gbias, scratch_);
            break;
        case Kind::Down:
            ops::down_backward(in, op.in_channels, din, w, op.out_channels, g_pre, gin, gw, gbias, scratch_);
            break;
        case Kind::Up:
            ops::up_backward(in, op.in_channels, din, w, op.out_channels, g_pre, gin, gw, gbias, scratch_);
            break;
        case Kind::Copy: break;
    }
}

template <typename T>
std::array<Tensor5<T>, 3> Network<T>::forward(const Tensor5<T>& input) {
    const Dims3 d = input.spatial();
    require(input.channels() == 1 && input.batch() >= 1, ErrorCode::SizeMismatch,
            "network input must be (batch, 1, z, y, x)");
    for (int a = 0; a < 3; ++a) {
        require(d[a] >= 16 && d[a] % 16 == 0, ErrorCode::SizeMismatch,
                "network input spatial dims must be positive multiples of 16");
    }
    allocate(input.batch(), d);
    std::copy(input.data.begin(), input.data.end(), buffers_[input_buffer_].value.begin());
    for (int b = 0; b < batch_; ++b) {
        for (const auto& op : ops_) {
            run_forward(op, b);
        }
    }
    has_forward_ = true;

    std::array<Tensor5<T>, 3> heads;
    for (int l = 0; l < 3; ++l) {
        const auto& buf = buffers_[head_buffers_[l]];
        heads[l] = Tensor5<T>(batch_, buf.channels, dims_at(buf.level));
        std::copy(buf.value.begin(), buf.value.end(), heads[l].data.begin());
    }
    return heads;
}

template <typename T>
void Network<T>::backward(const std::array<Tensor5<T>, 3>& head_grads) {
    require(has_forward_, ErrorCode::State, "backward called without a preceding forward pass");
    for (auto& buf : buffers_) {
        std::fill(buf.grad.begin(), buf.grad.end(), T(0));
    }
    for (int l = 0; l < 3; ++l) {
        auto& buf = buffers_[head_buffers_[l]];
        require(head_grads[l].data.size() == buf.grad.size(), ErrorCode::SizeMismatch,
                "head gradient shape does not match the last forward pass");
        std::copy(head_grads[l].data.begin(), head_grads[l].data.end(), buf.grad.begin());
    }
    for (int b = 0; b < batch_; ++b) {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            run_backward(*it, b);
        }
    }
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto& p : params_) {
        std::fill(p.grad.begin(), p.grad.end(), T(0));
    }
}

template <typename T>
void SgdOptimizer<T>::step(std::vector<Param<T>>& params) {
    for (const auto& p : params) {
        for (const auto g : p.grad) {
            require(std::isfinite(static_cast<double>(g)), ErrorCode::Numeric, "non-finite gradient in parameter " + p.name);
        }
    }
    if (velocity_.size() != params.size()) {
        velocity_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i].assign(params[i].value.size(), T(0));
        }
    }
    const T lr = static_cast<T>(cfg_.lr);
    const T momentum = static_cast<T>(cfg_.momentum);
    const T decay = static_cast<T>(cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& v = velocity_[i];
        require(v.size() == p.value.size(), ErrorCode::SizeMismatch, "optimizer state does not match " + p.name);
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            v[j] = momentum * v[j] + (p.grad[j] + decay * p.value[j]);
            p.value[j] -= lr * v[j];
        }
    }
}

template <typename T>
double clip_grad_norm(std::vector<Param<T>>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (const auto g : p.grad) {
            sq += static_cast<double>(g) * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& p : params) {
            for (auto& g : p.grad) {
                g *= scale;
            }
        }
    }
    return norm;
}

template class Network<float>;
template class Network<double>;
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template double clip_grad_norm<float>(std::vector<Param<float>>&, double);
template double clip_grad_norm<double>(std::vector<Param<double>>&, double);

}  // namespace af3d
