#pragma once

#include <cstdint>
#include <vector>

#include "spatext/image.hpp"
#include "spatext/nn.hpp"

namespace spatext {

struct CodecConfig {
    int factor = 4;           // spatial downsample factor; power of two
    int latent_channels = 4;
    int width = 32;
};

// Fully-convolutional autoencoder for the latent variant. Latents are
// multiplied by `latent_scale` so they have roughly unit variance.
// factor == 1 with latent_channels == 3 is the identity codec.
class Codec {
public:
    Codec() = default;
    Codec(const CodecConfig& config, std::uint64_t seed);
    static Codec identity();

    const CodecConfig& config() const { return config_; }
    bool is_identity() const { return identity_; }
    double latent_scale() const { return latent_scale_; }
    void set_latent_scale(double s) { latent_scale_ = s; }

    // x: [N, 3, H, W] in [-1, 1] -> [N, c, H/f, W/f]
    Tensor encode(const Tensor& x) const;
    Tensor decode(const Tensor& z) const;

    // One reconstruction step; returns the [-1, 1]-space MSE before the update.
    double train_step(const Tensor& x, nn::Adam& optimizer);

    void visit(const nn::ParamVisitor& f);
    std::vector<nn::NamedParam> parameters();

private:
    struct Layer {
        enum Kind { Conv, Silu, Upsample } kind;
        nn::Conv2d conv;
    };
    Tensor run(const std::vector<Layer>& layers, const Tensor& x, std::vector<Tensor>* trace) const;
    Tensor run_backward(std::vector<Layer>& layers, const std::vector<Tensor>& trace, const Tensor& dy, bool need_dx);

    CodecConfig config_;
    bool identity_ = false;
    double latent_scale_ = 1.0;
    std::vector<Layer> encoder_, decoder_;
};

struct CodecTrainConfig {
    CodecConfig codec;
    int steps = 800;
    int batch = 8;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
};

struct CodecTrainResult {
    Codec codec;
    double final_train_mse = 0.0;  // [0, 1] pixel space, last 50 steps
};

CodecTrainResult train_codec(const std::vector<Image>& images, const CodecTrainConfig& config);

// Mean squared reconstruction error in [0, 1] pixel space.
double reconstruction_mse(const Codec& codec, const std::vector<Image>& images);

}  // namespace spatext
