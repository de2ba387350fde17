#include "spatext/codec.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace spatext {

Codec::Codec(const CodecConfig& config, std::uint64_t seed) : config_(config) {
    if (config.factor < 1 || (config.factor & (config.factor - 1)) != 0) {
        throw ValidationError("codec factor must be a power of two");
    }
    if (config.latent_channels < 1 || config.width < 1) throw ValidationError("codec channels must be positive");
    int downs = 0;
    for (int f = config.factor; f > 1; f /= 2) ++downs;

    const int w = config.width;
    encoder_.push_back({Layer::Conv, nn::Conv2d(3, w, 3, 1, 1)});
    encoder_.push_back({Layer::Silu, {}});
    for (int i = 0; i < downs; ++i) {
        encoder_.push_back({Layer::Conv, nn::Conv2d(w, w, 3, 2, 1)});
        encoder_.push_back({Layer::Silu, {}});
    }
    encoder_.push_back({Layer::Conv, nn::Conv2d(w, config.latent_channels, 1, 1, 0)});

    decoder_.push_back({Layer::Conv, nn::Conv2d(config.latent_channels, w, 3, 1, 1)});
    decoder_.push_back({Layer::Silu, {}});
    for (int i = 0; i < downs; ++i) {
        decoder_.push_back({Layer::Upsample, {}});
        decoder_.push_back({Layer::Conv, nn::Conv2d(w, w, 3, 1, 1)});
        decoder_.push_back({Layer::Silu, {}});
    }
    decoder_.push_back({Layer::Conv, nn::Conv2d(w, 3, 3, 1, 1)});

    std::mt19937_64 rng(seed);
    for (auto& l : encoder_)
        if (l.kind == Layer::Conv) l.conv.init(rng);
    for (auto& l : decoder_)
        if (l.kind == Layer::Conv) l.conv.init(rng);
}

Codec Codec::identity() {
    Codec c;
    c.config_ = {1, 3, 0};
    c.identity_ = true;
    return c;
}

Tensor Codec::run(const std::vector<Layer>& layers, const Tensor& x, std::vector<Tensor>* trace) const {
    Tensor cur = x;
    for (const auto& l : layers) {
        if (trace != nullptr) trace->push_back(cur);
        Tensor next;
        switch (l.kind) {
            case Layer::Conv: next = l.conv.forward(cur); break;
            case Layer::Silu: kernels::silu_forward(cur, next); break;
            case Layer::Upsample: kernels::upsample2x_forward(cur, next); break;
        }
        cur = std::move(next);
    }
    return cur;
}

Tensor Codec::run_backward(std::vector<Layer>& layers, const std::vector<Tensor>& trace, const Tensor& dy,
                           bool need_dx) {
    Tensor g = dy;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        Layer& l = layers[i];
        const bool last = (i == 0);
        Tensor next;
        switch (l.kind) {
            case Layer::Conv: next = l.conv.backward(trace[i], g, !last || need_dx); break;
            case Layer::Silu: kernels::silu_backward(trace[i], g, next); break;
            case Layer::Upsample: kernels::upsample2x_backward(g, next); break;
        }
        g = std::move(next);
    }
    return g;
}

Tensor Codec::encode(const Tensor& x) const {
    if (identity_) return x;
    if (x.h() % config_.factor != 0 || x.w() % config_.factor != 0) {
        throw std::invalid_argument("codec: input size not divisible by the downsample factor");
    }
    Tensor z = run(encoder_, x, nullptr);
    for (float& v : z.values()) v = static_cast<float>(v * latent_scale_);
    return z;
}

Tensor Codec::decode(const Tensor& z) const {
    if (identity_) return z;
    Tensor raw = z;
    for (float& v : raw.values()) v = static_cast<float>(v / latent_scale_);
    return run(decoder_, raw, nullptr);
}

double Codec::train_step(const Tensor& x, nn::Adam& optimizer) {
    if (identity_) return 0.0;
    auto params = parameters();
    for (auto& p : params) p.param->zero_grad();
    std::vector<Tensor> enc_trace, dec_trace;
    Tensor z = run(encoder_, x, &enc_trace);
    Tensor y = run(decoder_, z, &dec_trace);
    require_same_shape(x, y, "codec reconstruction");
    Tensor dy(y.n(), y.c(), y.h(), y.w());
    double sq = 0.0;
    const double inv = 1.0 / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = static_cast<double>(y.data()[i]) - x.data()[i];
        sq += d * d;
        dy.data()[i] = static_cast<float>(2.0 * d * inv);
    }
    Tensor dz = run_backward(decoder_, dec_trace, dy, true);
    run_backward(encoder_, enc_trace, dz, false);
    optimizer.step(params);
    return sq * inv;
}

void Codec::visit(const nn::ParamVisitor& f) {
    for (std::size_t i = 0; i < encoder_.size(); ++i)
        if (encoder_[i].kind == Layer::Conv) encoder_[i].conv.visit("codec.enc" + std::to_string(i), f);
    for (std::size_t i = 0; i < decoder_.size(); ++i)
        if (decoder_[i].kind == Layer::Conv) decoder_[i].conv.visit("codec.dec" + std::to_string(i), f);
}

std::vector<nn::NamedParam> Codec::parameters() {
    return nn::collect([this](const nn::ParamVisitor& f) { visit(f); });
}

CodecTrainResult train_codec(const std::vector<Image>& images, const CodecTrainConfig& config) {
    if (images.empty()) throw ValidationError("train_codec: empty dataset");
    CodecTrainResult result{Codec(config.codec, config.seed), 0.0};
    Codec& codec = result.codec;
    nn::Adam optimizer({config.learning_rate, 0.9, 0.999, 1e-8, 1.0});
    std::mt19937_64 rng(config.seed ^ 0xC0DECULL);
    std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
    double tail = 0.0;
    int tail_count = 0;
    for (int step = 0; step < config.steps; ++step) {
        std::vector<Image> batch;
        for (int i = 0; i < config.batch; ++i) batch.push_back(images[pick(rng)]);
        const double mse = codec.train_step(images_to_tensor(batch), optimizer);
        if (step >= config.steps - 50) {
            tail += mse / 4.0;
            ++tail_count;
        }
    }
    result.final_train_mse = tail_count > 0 ? tail / tail_count : 0.0;

    // Normalize latents to unit standard deviation over (a sample of) the data.
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    const std::size_t probe = std::min<std::size_t>(images.size(), 64);
    for (std::size_t i = 0; i < probe; ++i) {
        Tensor z = codec.encode(images_to_tensor({images[i]}));
        for (float v : z.values()) {
            sum += v;
            sq += static_cast<double>(v) * v;
            ++count;
        }
    }
    const double mean = sum / count;
    const double stdev = std::sqrt(std::max(sq / count - mean * mean, 1e-12));
    codec.set_latent_scale(1.0 / stdev);
    return result;
}

double reconstruction_mse(const Codec& codec, const std::vector<Image>& images) {
    double sq = 0.0;
    std::size_t count = 0;
    for (const Image& img : images) {
        Tensor x = images_to_tensor({img});
        Tensor y = codec.decode(codec.encode(x));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = (std::clamp(y.data()[i], -1.0f, 1.0f) - x.data()[i]) * 0.5;
            sq += d * d;
            ++count;
        }
    }
    return count > 0 ? sq / count : 0.0;
}

}  // namespace spatext
