#pragma once

// Residual backbone with a 3x3 stem and no max-pool, a linear classifier head
// and one W2 * ReLU(BN(W1 * f)) head per symbolic attribute, all reading the
// same pooled feature vector f.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nsdesk/diffcore/ops.hpp"

namespace nsdesk::net {

struct BackboneConfig {
    std::size_t input_size = 32;
    std::size_t in_channels = 3;
    std::vector<std::size_t> widths = {16, 32, 64};
    std::size_t blocks_per_stage = 2;

    std::size_t feature_dim() const { return widths.empty() ? 0 : widths.back(); }
    void validate() const;
};

struct HeadConfig {
    std::size_t num_classes = 0;
    std::vector<std::string> attr_names;
    std::vector<std::size_t> attr_dims;
    std::size_t hidden = 0;  // 0 selects feature_dim / 2

    std::size_t hidden_dim(std::size_t feature_dim) const { return hidden == 0 ? feature_dim / 2 : hidden; }
    void validate(std::size_t feature_dim) const;
};

struct ModelConfig {
    BackboneConfig backbone;
    HeadConfig heads;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

enum class Mode { train, eval };

enum class ParamKind { conv, linear_weight, linear_bias, bn_gamma, bn_beta };

struct ParamInfo {
    std::string name;
    Shape shape;
    ParamKind kind;
};

template <typename T>
struct ModelOutputs {
    Var<T> logits;                   // [N, C]
    std::vector<Var<T>> attr_logits;  // [N, d_j] per attribute
    Var<T> features;                 // [N, D]
};

// Batch statistics observed by every batchnorm layer during a train-mode
// forward, in layer order. Feed to Model::update_running_stats.
template <typename T>
using ForwardStats = std::vector<ops::BatchNormStats<T>>;

template <typename T>
class Model {
public:
    Model(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    std::size_t feature_dim() const { return config_.backbone.feature_dim(); }
    std::size_t num_attributes() const { return config_.heads.attr_dims.size(); }

    const std::vector<ParamInfo>& param_info() const { return info_; }
    std::vector<Tensor<T>>& params() { return params_; }
    const std::vector<Tensor<T>>& params() const { return params_; }
    std::size_t parameter_count() const;

    // Running statistics, two tensors (mean, unbiased variance) per layer.
    std::vector<std::string> buffer_names() const;
    std::vector<Tensor<T>>& buffers() { return buffers_; }
    const std::vector<Tensor<T>>& buffers() const { return buffers_; }
    std::size_t num_batchnorm() const { return bn_names_.size(); }

    // Places every parameter on the graph as a leaf.
    std::vector<Var<T>> bind(Graph<T>& g, bool requires_grad) const;

    // One backbone pass shared by all heads. `stats` receives per-layer batch
    // statistics in train mode and may be null.
    ModelOutputs<T> forward(Graph<T>& g, const std::vector<Var<T>>& params, Var<T> images, Mode mode,
                            ForwardStats<T>* stats = nullptr) const;
    Var<T> features(Graph<T>& g, const std::vector<Var<T>>& params, Var<T> images, Mode mode,
                    ForwardStats<T>* stats = nullptr) const;

    // running = (1 - momentum) * running + momentum * batch, with the
    // unbiased batch variance.
    void update_running_stats(const ForwardStats<T>& stats, double momentum = kBatchNormMomentum);

    // Multiply-accumulates of one eval-mode forward for a single image.
    std::uint64_t macs_per_sample() const;

    // Structural fingerprint of parameters and buffers (FNV-1a over raw bytes).
    std::uint64_t state_hash() const;

private:
    struct BnRef {
        std::size_t gamma = 0, beta = 0, index = 0;
    };
    struct Block {
        std::size_t conv1 = 0, conv2 = 0, proj = 0;
        BnRef bn1, bn2, bn_proj;
        std::size_t stride = 1;
        bool has_proj = false;
    };
    struct AttrHead {
        std::size_t w1 = 0, w2 = 0;
        BnRef bn;
    };

    std::size_t add_param(std::string name, Shape shape, ParamKind kind);
    BnRef add_bn(const std::string& prefix, std::size_t channels);
    Var<T> apply_bn(Graph<T>& g, const std::vector<Var<T>>& p, const BnRef& bn, Var<T> x, Mode mode,
                    ForwardStats<T>* stats) const;
    void check_input(const Var<T>& images, Mode mode, std::size_t bound) const;

    ModelConfig config_;
    std::vector<ParamInfo> info_;
    std::vector<Tensor<T>> params_;
    std::vector<std::string> bn_names_;
    std::vector<Tensor<T>> buffers_;
    std::size_t stem_conv_ = 0;
    BnRef stem_bn_;
    std::vector<Block> blocks_;
    std::size_t cls_w_ = 0, cls_b_ = 0;
    std::vector<AttrHead> heads_;
};

// Eval-mode argmax decisions of every head, computed in chunks.
struct Predictions {
    std::vector<std::size_t> cls;                 // [N]
    std::vector<std::vector<std::size_t>> attrs;  // [attribute][N]
};

template <typename T>
Predictions predict(const Model<T>& model, const Tensor<T>& images, std::size_t chunk = 128);

// Index of the largest entry of each row of a [N, K] tensor; ties go to the
// lowest index.
template <typename T>
std::vector<std::size_t> row_argmax(const Tensor<T>& t);

// Closed-form parameter count of a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

// Default configuration for a schema of attribute cardinalities.
ModelConfig default_model_config(std::size_t num_classes, std::vector<std::string> attr_names,
                                 std::vector<std::size_t> attr_dims);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace nsdesk::net
