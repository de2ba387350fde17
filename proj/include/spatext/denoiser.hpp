#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "spatext/nn.hpp"
#include "spatext/tensor.hpp"

namespace spatext {

// One batch of denoiser inputs. `cond_map` is the spatial condition (ST or a
// binary mask) already at the resolution of `x_t`; it is concatenated to x_t
// along channels. `text` rows flagged in `text_null` are replaced by the
// learned null embedding.
struct DenoiserInput {
    Tensor x_t;                     // [N, space_channels, H, W]
    Tensor cond_map;                // [N, cond_channels, H, W], empty when cond_channels == 0
    Tensor text;                    // [N, text_dim, 1, 1]
    std::vector<std::uint8_t> text_null;
    std::vector<int> t;             // 1..T per sample

    int batch() const { return x_t.n(); }
};

struct Prediction {
    Tensor eps;
    Tensor var_interp;  // raw interpolation output v; frac = (v + 1) / 2. Empty if variance is fixed.
};

// The minimal contract the losses and the trainer need from a noise model.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    // Forward pass that keeps what backward() needs.
    virtual Prediction predict(const DenoiserInput& in) = 0;
    // Backpropagates through the last predict() call, accumulating parameter gradients.
    virtual void backward(const Tensor& d_eps, const Tensor* d_var) = 0;
    virtual std::vector<nn::NamedParam> parameters() = 0;
    virtual bool learns_variance() const = 0;

    void zero_grad();
};

// Read-only noise prediction, as used by the sampler. Must be reentrant.
class InferenceModel {
public:
    virtual ~InferenceModel() = default;
    virtual Prediction infer(const DenoiserInput& in) const = 0;
    virtual int space_channels() const = 0;
    virtual int cond_channels() const = 0;
    virtual int text_dim() const = 0;
};

struct DenoiserConfig {
    int space_channels = 3;
    int cond_channels = 0;  // channels appended to the first layer by extension
    int text_dim = 16;
    std::vector<int> widths = {32, 64, 64};
    int embed_dim = 64;
    bool learn_variance = true;
};

struct ResBlockCache {
    Tensor in, a0, a1, film, a2, a3;
};

class ResBlock {
public:
    ResBlock() = default;
    ResBlock(int channels, int embed_dim);
    void init(std::mt19937_64& rng);
    Tensor forward(const Tensor& h, const Tensor& cond_act, ResBlockCache* cache) const;
    // Returns dh; adds the conditioning gradient into d_cond_act.
    Tensor backward(const ResBlockCache& cache, const Tensor& cond_act, const Tensor& dout, Tensor& d_cond_act);
    void visit(const std::string& prefix, const nn::ParamVisitor& f);

private:
    int channels_ = 0;
    nn::Conv2d conv1_, conv2_;
    nn::Linear film_;
};

struct DenoiserCache {
    Tensor input, temb, t1, t2, t3, text_in, cond, cond_act;
    Tensor h0, h1, d1, h2, d2, h3, h4, up2, c2, h5, up1, c1, h6, a_out;
    ResBlockCache r1, r2, r3, r4, r5, r6;
    std::vector<std::uint8_t> text_null;
};

// Small convolutional encoder-decoder noise predictor: three resolution
// levels with skip connections. Time and global-text embeddings modulate
// every residual block (scale/shift); the spatial condition enters only
// through the first convolution.
class Denoiser : public NoisePredictor, public InferenceModel {
public:
    Denoiser() = default;
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);

    Prediction predict(const DenoiserInput& in) override;
    void backward(const Tensor& d_eps, const Tensor* d_var) override;
    std::vector<nn::NamedParam> parameters() override;
    bool learns_variance() const override { return config_.learn_variance; }

    // Reentrant inference path; safe to call concurrently on a shared model.
    Prediction infer(const DenoiserInput& in) const override;
    int space_channels() const override { return config_.space_channels; }
    int cond_channels() const override { return config_.cond_channels; }
    int text_dim() const override { return config_.text_dim; }

    const DenoiserConfig& config() const { return config_; }
    int input_channels() const { return config_.space_channels + config_.cond_channels; }
    bool extended() const { return config_.cond_channels > 0; }
    const nn::Conv2d& input_layer() const { return conv_in_; }

    // Parameter traversal in a fixed order with stable names.
    void visit(const nn::ParamVisitor& f);

    friend Denoiser extend_input_channels(Denoiser model, int extra_channels, std::mt19937_64& rng);

private:
    Prediction forward(const DenoiserInput& in, DenoiserCache& cache) const;
    void validate(const DenoiserInput& in) const;

    DenoiserConfig config_;
    nn::Linear time1_, time2_, text_proj_;
    nn::Param null_text_;
    nn::Conv2d conv_in_, down1_, down2_, upconv2_, upconv1_, conv_out_;
    ResBlock res1_, res2_, res3_, res4_, res5_, res6_;
    DenoiserCache cache_;
};

// Appends `extra_channels` input channels to the first convolution. The
// existing kernel slice is kept bit-identical; the new slice is He-initialized
// with the fan-in of the extended layer. Throws if the model was already
// extended. extra_channels == 0 returns the model unchanged.
Denoiser extend_input_channels(Denoiser model, int extra_channels, std::mt19937_64& rng);

Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace spatext
