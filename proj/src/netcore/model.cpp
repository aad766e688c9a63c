#include "nsdesk/netcore/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nsdesk/common/rng.hpp"

namespace nsdesk::net {

void BackboneConfig::validate() const {
    if (widths.empty()) throw ConfigError("backbone: at least one stage width is required");
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("backbone: stage widths must be positive");
    }
    if (blocks_per_stage == 0) throw ConfigError("backbone: blocks_per_stage must be positive");
    if (in_channels == 0) throw ConfigError("backbone: in_channels must be positive");
    const std::size_t shrink = std::size_t{1} << (widths.size() - 1);
    if (input_size < 2 * shrink) {
        throw ConfigError("backbone: input size " + std::to_string(input_size) + " too small for " +
                          std::to_string(widths.size()) + " stages");
    }
}

void HeadConfig::validate(std::size_t feature_dim) const {
    if (num_classes < 2) throw ConfigError("heads: need at least 2 classes");
    if (attr_names.size() != attr_dims.size()) {
        throw ConfigError("heads: " + std::to_string(attr_names.size()) + " attribute names vs " +
                          std::to_string(attr_dims.size()) + " cardinalities");
    }
    for (std::size_t d : attr_dims) {
        if (d < 2) throw ConfigError("heads: attribute cardinality must be at least 2");
    }
    if (hidden_dim(feature_dim) == 0) throw ConfigError("heads: hidden dimension is zero");
}

ModelConfig default_model_config(std::size_t num_classes, std::vector<std::string> attr_names,
                                 std::vector<std::size_t> attr_dims) {
    ModelConfig c;
    c.heads.num_classes = num_classes;
    c.heads.attr_names = std::move(attr_names);
    c.heads.attr_dims = std::move(attr_dims);
    return c;
}

std::size_t expected_parameter_count(const ModelConfig& config) {
    const BackboneConfig& b = config.backbone;
    const auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k; };
    const auto bn = [](std::size_t ch) { return 2 * ch; };
    std::size_t n = conv(b.in_channels, b.widths[0], 3) + bn(b.widths[0]);
    std::size_t in = b.widths[0];
    for (std::size_t s = 0; s < b.widths.size(); ++s) {
        const std::size_t out = b.widths[s];
        for (std::size_t k = 0; k < b.blocks_per_stage; ++k) {
            n += conv(in, out, 3) + bn(out) + conv(out, out, 3) + bn(out);
            const bool downsample = k == 0 && s > 0;
            if (downsample || in != out) n += conv(in, out, 1) + bn(out);
            in = out;
        }
    }
    const std::size_t D = b.feature_dim();
    const std::size_t H = config.heads.hidden_dim(D);
    n += config.heads.num_classes * D + config.heads.num_classes;
    for (std::size_t d : config.heads.attr_dims) {
        n += H * D + bn(H) + d * H;
    }
    return n;
}

template <typename T>
std::size_t Model<T>::add_param(std::string name, Shape shape, ParamKind kind) {
    info_.push_back({std::move(name), shape, kind});
    params_.emplace_back(std::move(shape));
    return params_.size() - 1;
}

template <typename T>
typename Model<T>::BnRef Model<T>::add_bn(const std::string& prefix, std::size_t channels) {
    BnRef r;
    r.gamma = add_param(prefix + ".gamma", {channels}, ParamKind::bn_gamma);
    r.beta = add_param(prefix + ".beta", {channels}, ParamKind::bn_beta);
    r.index = bn_names_.size();
    bn_names_.push_back(prefix);
    buffers_.emplace_back(Shape{channels}, T(0));
    buffers_.emplace_back(Shape{channels}, T(1));
    return r;
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    const BackboneConfig& b = config_.backbone;
    b.validate();
    config_.heads.validate(b.feature_dim());

    stem_conv_ = add_param("stem.conv", {b.widths[0], b.in_channels, 3, 3}, ParamKind::conv);
    stem_bn_ = add_bn("stem.bn", b.widths[0]);
    std::size_t in = b.widths[0];
    for (std::size_t s = 0; s < b.widths.size(); ++s) {
        const std::size_t out = b.widths[s];
        for (std::size_t k = 0; k < b.blocks_per_stage; ++k) {
            const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k);
            Block blk;
            blk.stride = (k == 0 && s > 0) ? 2 : 1;
            blk.conv1 = add_param(p + ".conv1", {out, in, 3, 3}, ParamKind::conv);
            blk.bn1 = add_bn(p + ".bn1", out);
            blk.conv2 = add_param(p + ".conv2", {out, out, 3, 3}, ParamKind::conv);
            blk.bn2 = add_bn(p + ".bn2", out);
            blk.has_proj = blk.stride != 1 || in != out;
            if (blk.has_proj) {
                blk.proj = add_param(p + ".proj", {out, in, 1, 1}, ParamKind::conv);
                blk.bn_proj = add_bn(p + ".proj_bn", out);
            }
            blocks_.push_back(blk);
            in = out;
        }
    }
    const std::size_t D = b.feature_dim();
    const std::size_t H = config_.heads.hidden_dim(D);
    cls_w_ = add_param("head.class.w", {config_.heads.num_classes, D}, ParamKind::linear_weight);
    cls_b_ = add_param("head.class.b", {config_.heads.num_classes}, ParamKind::linear_bias);
    for (std::size_t j = 0; j < config_.heads.attr_dims.size(); ++j) {
        const std::string p = "head." + config_.heads.attr_names[j];
        AttrHead h;
        h.w1 = add_param(p + ".w1", {H, D}, ParamKind::linear_weight);
        h.bn = add_bn(p + ".bn", H);
        h.w2 = add_param(p + ".w2", {config_.heads.attr_dims[j], H}, ParamKind::linear_weight);
        heads_.push_back(h);
    }

    // Fan-in scaled uniform for weights and classifier bias; unit scale and
    // zero shift for batchnorm. Each tensor draws from its own stream.
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor<T>& t = params_[i];
        const ParamInfo& pi = info_[i];
        if (pi.kind == ParamKind::bn_gamma) {
            t.fill(T(1));
            continue;
        }
        if (pi.kind == ParamKind::bn_beta) {
            t.fill(T(0));
            continue;
        }
        const std::size_t fan_in = pi.kind == ParamKind::linear_bias ? D : numel(pi.shape) / pi.shape[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(mix_seed({init_seed, i}));
        for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

template <typename T>
std::vector<std::string> Model<T>::buffer_names() const {
    std::vector<std::string> out;
    for (const auto& n : bn_names_) {
        out.push_back(n + ".running_mean");
        out.push_back(n + ".running_var");
    }
    return out;
}

template <typename T>
std::vector<Var<T>> Model<T>::bind(Graph<T>& g, bool requires_grad) const {
    std::vector<Var<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(g.input(p, requires_grad));
    return out;
}

template <typename T>
Var<T> Model<T>::apply_bn(Graph<T>& g, const std::vector<Var<T>>& p, const BnRef& bn, Var<T> x, Mode mode,
                          ForwardStats<T>* stats) const {
    (void)g;
    if (mode == Mode::eval) {
        return ops::batch_norm_eval(x, p[bn.gamma], p[bn.beta], buffers_[2 * bn.index], buffers_[2 * bn.index + 1],
                                    static_cast<T>(kBatchNormEps));
    }
    ops::BatchNormStats<T> st;
    Var<T> y = ops::batch_norm_train(x, p[bn.gamma], p[bn.beta], static_cast<T>(kBatchNormEps), &st);
    if (stats != nullptr) {
        if (stats->size() <= bn.index) stats->resize(bn_names_.size());
        (*stats)[bn.index] = std::move(st);
    }
    return y;
}

template <typename T>
void Model<T>::check_input(const Var<T>& images, Mode mode, std::size_t bound) const {
    const BackboneConfig& b = config_.backbone;
    const Shape& s = images.shape();
    const Shape want{s.empty() ? 0 : s[0], b.in_channels, b.input_size, b.input_size};
    if (s.size() != 4 || s != want) {
        throw ShapeError("forward: expected images [N," + std::to_string(b.in_channels) + "," +
                         std::to_string(b.input_size) + "," + std::to_string(b.input_size) + "], got " +
                         shape_str(s));
    }
    if (mode == Mode::train && s[0] < 2) {
        throw ShapeError("forward: train mode needs a batch of at least 2, got " + std::to_string(s[0]));
    }
    if (bound != params_.size()) {
        throw ShapeError("forward: " + std::to_string(bound) + " bound parameters, model has " +
                         std::to_string(params_.size()));
    }
}

template <typename T>
Var<T> Model<T>::features(Graph<T>& g, const std::vector<Var<T>>& p, Var<T> x, Mode mode,
                          ForwardStats<T>* stats) const {
    check_input(x, mode, p.size());
    if (stats != nullptr) stats->assign(bn_names_.size(), {});
    Var<T> h = ops::relu(apply_bn(g, p, stem_bn_, ops::conv2d(x, p[stem_conv_], {1, 1}), mode, stats));
    for (const Block& blk : blocks_) {
        Var<T> r = ops::conv2d(h, p[blk.conv1], {blk.stride, 1});
        r = ops::relu(apply_bn(g, p, blk.bn1, r, mode, stats));
        r = apply_bn(g, p, blk.bn2, ops::conv2d(r, p[blk.conv2], {1, 1}), mode, stats);
        Var<T> shortcut = h;
        if (blk.has_proj) {
            shortcut = apply_bn(g, p, blk.bn_proj, ops::conv2d(h, p[blk.proj], {blk.stride, 0}), mode, stats);
        }
        h = ops::relu(ops::add(r, shortcut));
    }
    return ops::global_avg_pool(h);
}

template <typename T>
ModelOutputs<T> Model<T>::forward(Graph<T>& g, const std::vector<Var<T>>& p, Var<T> x, Mode mode,
                                  ForwardStats<T>* stats) const {
    ModelOutputs<T> out;
    out.features = features(g, p, x, mode, stats);
    out.logits = ops::add_channel(ops::matmul_bt(out.features, p[cls_w_]), p[cls_b_]);
    for (const AttrHead& h : heads_) {
        Var<T> z = ops::matmul_bt(out.features, p[h.w1]);
        z = ops::relu(apply_bn(g, p, h.bn, z, mode, stats));
        out.attr_logits.push_back(ops::matmul_bt(z, p[h.w2]));
    }
    return out;
}

template <typename T>
void Model<T>::update_running_stats(const ForwardStats<T>& stats, double momentum) {
    if (stats.size() != bn_names_.size()) {
        throw ShapeError("update_running_stats: " + std::to_string(stats.size()) + " layers of statistics, model has " +
                         std::to_string(bn_names_.size()));
    }
    const T m = static_cast<T>(momentum);
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& st = stats[i];
        if (st.count < 2) continue;  // layer not exercised by this forward
        Tensor<T>& rm = buffers_[2 * i];
        Tensor<T>& rv = buffers_[2 * i + 1];
        const T unbias = static_cast<T>(st.count) / static_cast<T>(st.count - 1);
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (T(1) - m) * rm[c] + m * st.mean[c];
            rv[c] = (T(1) - m) * rv[c] + m * st.var[c] * unbias;
        }
    }
}

template <typename T>
std::uint64_t Model<T>::macs_per_sample() const {
    const BackboneConfig& b = config_.backbone;
    std::uint64_t macs = 0;
    std::size_t side = b.input_size;
    std::size_t in = b.widths[0];
    macs += static_cast<std::uint64_t>(side * side) * b.widths[0] * b.in_channels * 9;
    std::size_t bi = 0;
    for (std::size_t s = 0; s < b.widths.size(); ++s) {
        const std::size_t out = b.widths[s];
        for (std::size_t k = 0; k < b.blocks_per_stage; ++k, ++bi) {
            const Block& blk = blocks_[bi];
            const std::size_t o_side = (side + 2 - 3) / blk.stride + 1;
            const std::uint64_t px = o_side * o_side;
            macs += px * out * in * 9 + px * out * out * 9;
            if (blk.has_proj) macs += px * out * in;
            side = o_side;
            in = out;
        }
    }
    const std::size_t D = b.feature_dim();
    const std::size_t H = config_.heads.hidden_dim(D);
    macs += static_cast<std::uint64_t>(config_.heads.num_classes) * D;
    for (std::size_t d : config_.heads.attr_dims) macs += static_cast<std::uint64_t>(H) * D + d * H;
    return macs;
}

template <typename T>
std::uint64_t Model<T>::state_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto feed = [&](const Tensor<T>& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
        for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params_) feed(p);
    for (const auto& b : buffers_) feed(b);
    return h;
}

template class Model<float>;
template class Model<double>;

template <typename T>
std::vector<std::size_t> row_argmax(const Tensor<T>& t) {
    if (t.rank() != 2) throw ShapeError("row_argmax: expected [N,K], got " + shape_str(t.shape()));
    const std::size_t n = t.dim(0), k = t.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = t.ptr() + r * k;
        out[r] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    }
    return out;
}

template <typename T>
Predictions predict(const Model<T>& model, const Tensor<T>& images, std::size_t chunk) {
    if (images.rank() != 4) throw ShapeError("predict: expected [N,C,H,W], got " + shape_str(images.shape()));
    if (chunk == 0) chunk = 1;
    const std::size_t n = images.dim(0);
    const std::size_t per = images.size() / std::max<std::size_t>(n, 1);
    Predictions p;
    p.attrs.resize(model.num_attributes());
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t b = std::min(chunk, n - start);
        auto part = Tensor<T>::uninitialized(Shape{b, images.dim(1), images.dim(2), images.dim(3)});
        std::copy_n(images.ptr() + start * per, b * per, part.ptr());
        Graph<T> g;
        const auto out = model.forward(g, model.bind(g, false), g.constant(std::move(part)), Mode::eval);
        const auto cls = row_argmax(out.logits.value());
        p.cls.insert(p.cls.end(), cls.begin(), cls.end());
        for (std::size_t j = 0; j < p.attrs.size(); ++j) {
            const auto a = row_argmax(out.attr_logits[j].value());
            p.attrs[j].insert(p.attrs[j].end(), a.begin(), a.end());
        }
    }
    return p;
}

template std::vector<std::size_t> row_argmax(const Tensor<float>&);
template std::vector<std::size_t> row_argmax(const Tensor<double>&);
template Predictions predict(const Model<float>&, const Tensor<float>&, std::size_t);
template Predictions predict(const Model<double>&, const Tensor<double>&, std::size_t);

}  // namespace nsdesk::net
