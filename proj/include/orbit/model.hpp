#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "orbit/autodiff.hpp"
#include "orbit/common.hpp"
#include "orbit/image.hpp"
#include "orbit/jsonio.hpp"
#include "orbit/nn_ops.hpp"
#include "orbit/rng.hpp"
#include "orbit/tensor.hpp"
#include "orbit/weights.hpp"

namespace orbit {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// URes34P: a 34-layer residual encoder feeding a UNet-style decoder that
// upsamples with ICNR-initialized pixel shuffle. base_width scales every
// stage so tests can run a structurally identical miniature.
struct ModelConfig {
    bool pretrained = false;
    int base_width = 64;
    std::array<int, 4> decoder_widths = {256, 128, 64, 32};
    std::array<double, 3> input_mean = {0.485, 0.456, 0.406};
    std::array<double, 3> input_std = {0.229, 0.224, 0.225};
    std::uint64_t init_seed = 0;

    // Fixed by the architecture: five downsamplings -> spatial alignment 32,
    // sigmoid output head.
    static constexpr int alignment = 32;

    void validate() const {
        if (base_width < 1) throw ConfigError("model: base_width must be >= 1");
        for (int w : decoder_widths)
            if (w < 1) throw ConfigError("model: decoder widths must be >= 1");
        for (double s : input_std)
            if (s <= 0) throw ConfigError("model: input std must be > 0");
    }

    // Hash over everything that shapes or reinterprets the parameters.
    // pretrained/init_seed only choose starting values, so they are excluded
    // and archives stay loadable regardless of how the model was seeded.
    std::uint64_t hash() const {
        Json j{{"arch", "ures34p"},
               {"base_width", base_width},
               {"decoder_widths", decoder_widths},
               {"input_mean", input_mean},
               {"input_std", input_std},
               {"alignment", alignment},
               {"final_activation", "sigmoid"}};
        const std::string s = j.dump();
        return fnv1a64(s.data(), s.size());
    }

    Json to_json() const {
        return Json{{"pretrained", pretrained},
                    {"base_width", base_width},
                    {"decoder_widths", decoder_widths},
                    {"input_mean", input_mean},
                    {"input_std", input_std},
                    {"init_seed", init_seed},
                    {"alignment", alignment},
                    {"final_activation", "sigmoid"}};
    }

    static ModelConfig from_json(const Json& j) {
        ModelConfig c;
        check_keys(j,
                   {"pretrained", "base_width", "decoder_widths", "input_mean", "input_std", "init_seed", "alignment",
                    "final_activation"},
                   "model");
        c.pretrained = get_or<bool>(j, "pretrained", c.pretrained);
        c.base_width = get_or<int>(j, "base_width", c.base_width);
        c.decoder_widths = get_or<std::array<int, 4>>(j, "decoder_widths", c.decoder_widths);
        c.input_mean = get_or<std::array<double, 3>>(j, "input_mean", c.input_mean);
        c.input_std = get_or<std::array<double, 3>>(j, "input_std", c.input_std);
        c.init_seed = get_or<std::uint64_t>(j, "init_seed", c.init_seed);
        if (j.contains("alignment") && j.at("alignment").get<int>() != ModelConfig::alignment)
            throw ConfigError("model: alignment is fixed at 32");
        if (j.contains("final_activation") && j.at("final_activation").get<std::string>() != "sigmoid")
            throw ConfigError("model: final_activation is fixed at sigmoid");
        c.validate();
        return c;
    }
};

// (stride, channels) of the five encoder activation stages relative to the
// input. The deepest feeds the decoder; the earlier four are skips.
inline std::vector<std::pair<int, int>> encoder_stage_map(int base_width) {
    return {{2, base_width}, {4, base_width}, {8, 2 * base_width}, {16, 4 * base_width}, {32, 8 * base_width}};
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

// Kaiming normal, fan-out mode (ReLU gain).
template <typename T>
void kaiming_normal_init(Tensor<T>& w, SplitMix64& rng) {
    const auto& s = w.shape();
    const std::int64_t fan_out = s[0] * (s.size() == 4 ? s[2] * s[3] : 1);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_out));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal() * std_dev);
}

// ICNR: base-initialize one kernel per post-shuffle channel, then copy it to
// all r^2 sub-pixel positions, so conv + pixel_shuffle starts out exactly
// equal to nearest-neighbor upsampling of the base conv.
template <typename T>
void icnr_init(Tensor<T>& weight, int r, const std::function<void(Tensor<T>&)>& base_init) {
    const auto& s = weight.shape();
    if (s.size() != 4) throw ShapeError("icnr_init: expected [Cout,Cin,kh,kw] weights");
    const std::int64_t r2 = static_cast<std::int64_t>(r) * r;
    if (s[0] % r2 != 0) throw ShapeError("icnr_init: output channels not divisible by r^2");
    if (r == 1) {
        base_init(weight);
        return;
    }
    Tensor<T> base({s[0] / r2, s[1], s[2], s[3]});
    base_init(base);
    const std::int64_t kernel = s[1] * s[2] * s[3];
    for (std::int64_t c = 0; c < s[0] / r2; ++c)
        for (std::int64_t o = 0; o < r2; ++o)
            std::copy_n(base.data() + c * kernel, kernel, weight.data() + (c * r2 + o) * kernel);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
class Ures34p {
public:
    struct NamedParam {
        std::string name;
        Var<T> var;
        bool encoder = false;
    };
    struct NamedBuffer {
        std::string name;
        std::shared_ptr<BatchNormStats<T>> stats;
        bool mean = false;  // running_mean vs running_var
        bool encoder = false;
        Tensor<T>& tensor() const { return mean ? stats->running_mean : stats->running_var; }
    };

    explicit Ures34p(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        SplitMix64 rng(cfg_.init_seed);
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // --- parameter registry -------------------------------------------------

    const std::vector<NamedParam>& params() const { return params_; }
    const std::vector<NamedBuffer>& buffers() const { return buffers_; }

    Var<T> param(const std::string& name) const {
        for (const NamedParam& p : params_)
            if (p.name == name) return p.var;
        throw Error("no such parameter: " + name);
    }

    std::vector<Var<T>> trainable_params() const {
        std::vector<Var<T>> out;
        for (const NamedParam& p : params_)
            if (!(frozen_ && p.encoder)) out.push_back(p.var);
        return out;
    }

    std::vector<NamedParam> trainable_named_params() const {
        std::vector<NamedParam> out;
        for (const NamedParam& p : params_)
            if (!(frozen_ && p.encoder)) out.push_back(p);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const NamedParam& p : params_) n += p.var->value.numel();
        return n;
    }
    std::int64_t encoder_param_count() const {
        std::int64_t n = 0;
        for (const NamedParam& p : params_)
            if (p.encoder) n += p.var->value.numel();
        return n;
    }
    std::int64_t trainable_param_count() const {
        std::int64_t n = 0;
        for (const Var<T>& v : trainable_params()) n += v->value.numel();
        return n;
    }

    // --- freezing -------------------------------------------------------------

    // Frozen encoders drop out of the trainable set entirely: no gradient
    // flows into their parameters and their normalization layers keep using
    // (and stop updating) running statistics.
    void freeze_encoder(bool frozen) {
        frozen_ = frozen;
        for (NamedParam& p : params_)
            if (p.encoder) p.var->requires_grad = !frozen;
    }
    bool encoder_frozen() const { return frozen_; }

    // --- forward ---------------------------------------------------------------

    // Graph-building forward on a [N,3,H,W] batch in [0,1]; H and W must be
    // multiples of 32. zero_skips is a diagnostic hook that silences the
    // skip connections.
    Var<T> forward_graph(const Var<T>& input, bool training, bool zero_skips = false) {
        const auto& s = input->value.shape();
        if (s.size() != 4 || s[1] != 3) throw ShapeError("forward: expected Nx3xHxW");
        if (s[2] % ModelConfig::alignment != 0 || s[3] % ModelConfig::alignment != 0)
            throw ShapeError("forward_graph: H and W must be multiples of 32");

        std::vector<T> scale(3), shift(3);
        for (int c = 0; c < 3; ++c) {
            scale[c] = static_cast<T>(1.0 / cfg_.input_std[c]);
            shift[c] = static_cast<T>(-cfg_.input_mean[c] / cfg_.input_std[c]);
        }
        Var<T> x = channel_affine(input, scale, shift);

        const bool enc_training = training && !frozen_;
        Var<T> s2 = relu(bn(enc_.bn1, conv(enc_.conv1, x), enc_training));
        Var<T> pooled = max_pool2d(s2, 3, 2, 1);
        Var<T> s4 = run_stage(enc_.layer1, pooled, enc_training);
        Var<T> s8 = run_stage(enc_.layer2, s4, enc_training);
        Var<T> s16 = run_stage(enc_.layer3, s8, enc_training);
        Var<T> s32 = run_stage(enc_.layer4, s16, enc_training);

        if (zero_skips) {
            s2 = scale_var(s2);
            s4 = scale_var(s4);
            s8 = scale_var(s8);
            s16 = scale_var(s16);
        }

        Var<T> d = s32;
        d = run_up_block(dec_.up[0], d, s16, training);
        d = run_up_block(dec_.up[1], d, s8, training);
        d = run_up_block(dec_.up[2], d, s4, training);
        d = run_up_block(dec_.up[3], d, s2, training);

        d = pixel_shuffle(conv(dec_.final_pre, d), 2);
        d = conv(dec_.out_conv, d);
        return sigmoid(d);
    }

    // Whole-image inference/training-free forward. Sizes below 32 are
    // rejected; other sizes are reflect-padded up to the alignment multiple
    // and the output cropped back.
    ImageTensor forward(const ImageTensor& img, bool training = false) {
        if (img.height < ModelConfig::alignment || img.width < ModelConfig::alignment)
            throw SizeError("forward: input must be at least 32x32");
        const int pad_h = (ModelConfig::alignment - img.height % ModelConfig::alignment) % ModelConfig::alignment;
        const int pad_w = (ModelConfig::alignment - img.width % ModelConfig::alignment) % ModelConfig::alignment;

        ImageTensor padded = img;
        if (pad_h || pad_w) {
            padded = ImageTensor(img.height + pad_h, img.width + pad_w);
            for (int y = 0; y < padded.height; ++y)
                for (int x = 0; x < padded.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        padded.at(y, x, c) = img.at(reflect_index(y, img.height), reflect_index(x, img.width), c);
        }

        NoGradGuard no_grad;
        Var<T> in = make_var(image_to_nchw<T>(padded));
        Var<T> out = forward_graph(in, training);
        ImageTensor result = nchw_to_image(out->value);
        if (pad_h || pad_w) {
            ImageTensor cropped(img.height, img.width);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    for (int c = 0; c < 3; ++c) cropped.at(y, x, c) = result.at(y, x, c);
            return cropped;
        }
        return result;
    }

    // Replaces running statistics with the exact average of batch statistics
    // over the given batches (cumulative momentum 1/k). Closes the gap
    // between short training runs and eval-mode inference; frozen encoder
    // statistics stay untouched via the usual freeze rule.
    void recalibrate_normalization(const std::vector<Tensor<T>>& batches) {
        if (batches.empty()) return;
        NoGradGuard no_grad;
        const T saved = bn_momentum_;
        for (std::size_t k = 0; k < batches.size(); ++k) {
            bn_momentum_ = T(1) / static_cast<T>(k + 1);
            forward_graph(make_var(batches[k]), /*training=*/true);
        }
        bn_momentum_ = saved;
    }

    // --- persistence -------------------------------------------------------------

    WeightArchive to_archive(std::int64_t step = 0, double val_loss = 0.0) const {
        WeightArchive a;
        a.metadata.config_hash = hex64(cfg_.hash());
        a.metadata.step = step;
        a.metadata.val_loss = val_loss;
        std::size_t total = 0;
        for (const NamedParam& p : params_) total += static_cast<std::size_t>(p.var->value.numel());
        for (const NamedBuffer& b : buffers_) total += static_cast<std::size_t>(b.tensor().numel());
        a.blob.reserve(total);
        for (const NamedParam& p : params_) a.append(p.name, p.var->value);
        for (const NamedBuffer& b : buffers_) a.append(b.name, b.tensor());
        return a;
    }

    void load_from_archive(const WeightArchive& a) {
        if (a.metadata.config_hash != hex64(cfg_.hash()))
            throw ConfigMismatchError("archive was produced by a differently configured model");
        auto load_tensor = [&](const std::string& name, Tensor<T>& dst) {
            const ArchiveEntry* e = a.find(name);
            if (!e) throw ConfigMismatchError("archive is missing parameter: " + name);
            if (e->shape != dst.shape()) throw ConfigMismatchError("archive shape mismatch for " + name);
            dst = a.tensor<T>(*e);
        };
        for (NamedParam& p : params_) load_tensor(p.name, p.var->value);
        for (NamedBuffer& b : buffers_) load_tensor(b.name, b.tensor());
    }

    // Ingests a converted torchvision-style encoder archive (resnet34.json /
    // resnet34.bin naming inside the archive is bare, without the
    // "encoder." prefix). Entries the encoder does not use are ignored.
    void load_pretrained_encoder(const WeightArchive& a) {
        auto load_tensor = [&](const std::string& name, Tensor<T>& dst) {
            const std::string bare = name.substr(std::string("encoder.").size());
            const ArchiveEntry* e = a.find(bare);
            if (!e) throw ConfigMismatchError("pretrained encoder archive is missing: " + bare);
            if (e->shape != dst.shape())
                throw ConfigMismatchError("pretrained encoder shape mismatch for " + bare);
            dst = a.tensor<T>(*e);
        };
        for (NamedParam& p : params_)
            if (p.encoder) load_tensor(p.name, p.var->value);
        for (NamedBuffer& b : buffers_)
            if (b.encoder) load_tensor(b.name, b.tensor());
    }

private:
    struct ConvLayer {
        Var<T> weight;
        Var<T> bias;  // null when the conv feeds a norm layer
        int stride = 1;
        int pad = 0;
    };
    struct BnLayer {
        Var<T> gamma, beta;
        std::shared_ptr<BatchNormStats<T>> stats;
    };
    struct BasicBlock {
        ConvLayer conv1;
        BnLayer bn1;
        ConvLayer conv2;
        BnLayer bn2;
        bool has_downsample = false;
        ConvLayer down_conv;
        BnLayer down_bn;
    };
    struct Encoder {
        ConvLayer conv1;
        BnLayer bn1;
        std::vector<BasicBlock> layer1, layer2, layer3, layer4;
    };
    struct UpBlock {
        ConvLayer pre;  // 1x1 to 4*out channels, ICNR
        ConvLayer conv1;
        BnLayer bn1;
        ConvLayer conv2;
        BnLayer bn2;
    };
    struct Decoder {
        std::array<UpBlock, 4> up;
        ConvLayer final_pre;  // 1x1 to 4*w, ICNR, then shuffle to stride 1
        ConvLayer out_conv;   // 3x3 to RGB
    };

    // --- construction -----------------------------------------------------------

    Var<T> new_param(const std::string& name, Tensor<T> t, bool encoder) {
        Var<T> v = make_var(std::move(t), true);
        params_.push_back({name, v, encoder});
        return v;
    }

    ConvLayer make_conv(const std::string& name, std::int64_t cout, std::int64_t cin, int k, int stride, int pad,
                        bool bias, bool encoder, SplitMix64& rng, int icnr_scale = 0) {
        Tensor<T> w({cout, cin, k, k});
        if (icnr_scale > 0) {
            icnr_init<T>(w, icnr_scale, [&rng](Tensor<T>& base) { kaiming_normal_init(base, rng); });
        } else {
            kaiming_normal_init(w, rng);
        }
        ConvLayer layer;
        layer.weight = new_param(name + ".weight", std::move(w), encoder);
        if (bias) layer.bias = new_param(name + ".bias", Tensor<T>({cout}), encoder);
        layer.stride = stride;
        layer.pad = pad;
        return layer;
    }

    BnLayer make_bn(const std::string& name, std::int64_t channels, bool encoder) {
        BnLayer layer;
        layer.gamma = new_param(name + ".weight", Tensor<T>::full({channels}, T(1)), encoder);
        layer.beta = new_param(name + ".bias", Tensor<T>({channels}), encoder);
        layer.stats = std::make_shared<BatchNormStats<T>>(channels);
        buffers_.push_back({name + ".running_mean", layer.stats, true, encoder});
        buffers_.push_back({name + ".running_var", layer.stats, false, encoder});
        return layer;
    }

    BasicBlock make_block(const std::string& name, std::int64_t cin, std::int64_t cout, int stride, SplitMix64& rng) {
        BasicBlock b;
        b.conv1 = make_conv(name + ".conv1", cout, cin, 3, stride, 1, false, true, rng);
        b.bn1 = make_bn(name + ".bn1", cout, true);
        b.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1, false, true, rng);
        b.bn2 = make_bn(name + ".bn2", cout, true);
        if (stride != 1 || cin != cout) {
            b.has_downsample = true;
            b.down_conv = make_conv(name + ".downsample.0", cout, cin, 1, stride, 0, false, true, rng);
            b.down_bn = make_bn(name + ".downsample.1", cout, true);
        }
        return b;
    }

    std::vector<BasicBlock> make_stage(const std::string& name, int blocks, std::int64_t cin, std::int64_t cout,
                                       int stride, SplitMix64& rng) {
        std::vector<BasicBlock> stage;
        stage.reserve(static_cast<std::size_t>(blocks));
        for (int i = 0; i < blocks; ++i)
            stage.push_back(make_block(name + "." + std::to_string(i), i == 0 ? cin : cout, cout, i == 0 ? stride : 1, rng));
        return stage;
    }

    UpBlock make_up_block(const std::string& name, std::int64_t cin, std::int64_t skip, std::int64_t cout,
                          SplitMix64& rng) {
        UpBlock u;
        u.pre = make_conv(name + ".pre", 4 * cout, cin, 1, 1, 0, true, false, rng, /*icnr_scale=*/2);
        u.conv1 = make_conv(name + ".conv1", cout, cout + skip, 3, 1, 1, false, false, rng);
        u.bn1 = make_bn(name + ".bn1", cout, false);
        u.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1, false, false, rng);
        u.bn2 = make_bn(name + ".bn2", cout, false);
        return u;
    }

    void build(SplitMix64& rng) {
        const std::int64_t w = cfg_.base_width;
        enc_.conv1 = make_conv("encoder.conv1", w, 3, 7, 2, 3, false, true, rng);
        enc_.bn1 = make_bn("encoder.bn1", w, true);
        enc_.layer1 = make_stage("encoder.layer1", 3, w, w, 1, rng);
        enc_.layer2 = make_stage("encoder.layer2", 4, w, 2 * w, 2, rng);
        enc_.layer3 = make_stage("encoder.layer3", 6, 2 * w, 4 * w, 2, rng);
        enc_.layer4 = make_stage("encoder.layer4", 3, 4 * w, 8 * w, 2, rng);

        const auto& dw = cfg_.decoder_widths;
        dec_.up[0] = make_up_block("decoder.up1", 8 * w, 4 * w, dw[0], rng);
        dec_.up[1] = make_up_block("decoder.up2", dw[0], 2 * w, dw[1], rng);
        dec_.up[2] = make_up_block("decoder.up3", dw[1], w, dw[2], rng);
        dec_.up[3] = make_up_block("decoder.up4", dw[2], w, dw[3], rng);
        dec_.final_pre = make_conv("decoder.final_pre", 4 * dw[3], dw[3], 1, 1, 0, true, false, rng, /*icnr_scale=*/2);
        dec_.out_conv = make_conv("decoder.out_conv", 3, dw[3], 3, 1, 1, true, false, rng);
    }

    // --- forward pieces -----------------------------------------------------------

    Var<T> conv(const ConvLayer& layer, const Var<T>& x) {
        return conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad);
    }

    Var<T> bn(const BnLayer& layer, const Var<T>& x, bool training) {
        return batch_norm(x, layer.gamma, layer.beta, layer.stats, training, bn_momentum_);
    }

    Var<T> run_block(const BasicBlock& block, const Var<T>& x, bool training) {
        Var<T> out = relu(bn(block.bn1, conv(block.conv1, x), training));
        out = bn(block.bn2, conv(block.conv2, out), training);
        Var<T> identity = block.has_downsample ? bn(block.down_bn, conv(block.down_conv, x), training) : x;
        return relu(add(out, identity));
    }

    Var<T> run_stage(const std::vector<BasicBlock>& stage, Var<T> x, bool training) {
        for (const BasicBlock& block : stage) x = run_block(block, x, training);
        return x;
    }

    Var<T> run_up_block(const UpBlock& u, const Var<T>& x, const Var<T>& skip, bool training) {
        Var<T> up = pixel_shuffle(conv(u.pre, x), 2);
        Var<T> cat = concat_channels(up, skip);
        Var<T> out = relu(bn(u.bn1, conv(u.conv1, cat), training));
        return relu(bn(u.bn2, conv(u.conv2, out), training));
    }

    static Var<T> scale_var(const Var<T>& v) { return scale(v, T(0)); }

    ModelConfig cfg_;
    Encoder enc_;
    Decoder dec_;
    std::vector<NamedParam> params_;
    std::vector<NamedBuffer> buffers_;
    bool frozen_ = false;
    T bn_momentum_ = T(0.1);
};

// ---------------------------------------------------------------------------
// build / save / load
// ---------------------------------------------------------------------------

// Builds the model; with pretrained=true the encoder is filled from
// <weights_cache>/resnet34/{weights.json,weights.bin}. A missing archive is
// a hard WeightsUnavailableError — callers that want random initialization
// must ask for it explicitly via pretrained=false.
template <typename T = float>
std::shared_ptr<Ures34p<T>> build_model(const ModelConfig& cfg,
                                        const std::optional<std::filesystem::path>& weights_cache = std::nullopt) {
    auto model = std::make_shared<Ures34p<T>>(cfg);
    if (cfg.pretrained) {
        if (!weights_cache)
            throw WeightsUnavailableError(
                "pretrained=true but no weights cache configured (set ORBIT_RESTORE_WEIGHTS_CACHE)");
        const std::filesystem::path dir = *weights_cache / "resnet34";
        if (!std::filesystem::exists(dir / "weights.json"))
            throw WeightsUnavailableError("pretrained encoder archive not found under " + dir.string());
        model->load_pretrained_encoder(load_archive(dir));
    }
    return model;
}

template <typename T>
void save_weights(const Ures34p<T>& model, const std::filesystem::path& dir, std::int64_t step = 0,
                  double val_loss = 0.0) {
    save_archive(model.to_archive(step, val_loss), dir);
}

template <typename T>
void load_weights(Ures34p<T>& model, const std::filesystem::path& dir) {
    model.load_from_archive(load_archive(dir));
}

}  // namespace orbit
