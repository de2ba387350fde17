#include "spatext/denoiser.hpp"

#include <cmath>

namespace spatext {
namespace {

Tensor silu(const Tensor& x) {
    Tensor y;
    kernels::silu_forward(x, y);
    return y;
}

Tensor silu_grad(const Tensor& x, const Tensor& dy) {
    Tensor dx;
    kernels::silu_backward(x, dy, dx);
    return dx;
}

Tensor upsample(const Tensor& x) {
    Tensor y;
    kernels::upsample2x_forward(x, y);
    return y;
}

Tensor upsample_grad(const Tensor& dy) {
    Tensor dx;
    kernels::upsample2x_backward(dy, dx);
    return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    float* o = out.data();
    const float* q = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] += q[i];
    return out;
}

void add_into(Tensor& acc, const Tensor& b) {
    require_same_shape(acc, b, "add_into");
    float* o = acc.data();
    const float* q = b.data();
    for (std::size_t i = 0; i < acc.size(); ++i) o[i] += q[i];
}

}  // namespace

void NoisePredictor::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Tensor out(static_cast<int>(t.size()), dim, 1, 1);
    for (std::size_t n = 0; n < t.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = t[n] * freq;
            out.sample(static_cast<int>(n))[i] = static_cast<float>(std::cos(arg));
            out.sample(static_cast<int>(n))[half + i] = static_cast<float>(std::sin(arg));
        }
    }
    return out;
}

ResBlock::ResBlock(int channels, int embed_dim)
    : channels_(channels),
      conv1_(channels, channels, 3, 1, 1),
      conv2_(channels, channels, 3, 1, 1),
      film_(embed_dim, 2 * channels) {}

void ResBlock::init(std::mt19937_64& rng) {
    conv1_.init(rng);
    // Zero-initialized output conv and modulation: every block starts as identity.
    conv2_.init(rng, 0.0f);
    film_.init(rng, 0.0f);
}

Tensor ResBlock::forward(const Tensor& h, const Tensor& cond_act, ResBlockCache* cache) const {
    Tensor a0 = silu(h);
    Tensor a1 = conv1_.forward(a0);
    Tensor film = film_.forward(cond_act);
    Tensor a2 = a1;
    const std::size_t plane = a1.plane();
    for (int n = 0; n < a1.n(); ++n) {
        const float* fs = film.sample(n);
        for (int c = 0; c < channels_; ++c) {
            float* p = a2.sample(n) + c * plane;
            const float scale = 1.0f + fs[c];
            const float shift = fs[channels_ + c];
            for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * scale + shift;
        }
    }
    Tensor a3 = silu(a2);
    Tensor out = add(h, conv2_.forward(a3));
    if (cache != nullptr) {
        cache->in = h;
        cache->a0 = std::move(a0);
        cache->a1 = std::move(a1);
        cache->film = std::move(film);
        cache->a2 = std::move(a2);
        cache->a3 = std::move(a3);
    }
    return out;
}

Tensor ResBlock::backward(const ResBlockCache& cache, const Tensor& cond_act, const Tensor& dout,
                          Tensor& d_cond_act) {
    Tensor da3 = conv2_.backward(cache.a3, dout);
    Tensor da2 = silu_grad(cache.a2, da3);
    Tensor da1 = da2;
    Tensor dfilm(cache.film.n(), cache.film.c(), 1, 1);
    const std::size_t plane = da2.plane();
    for (int n = 0; n < da2.n(); ++n) {
        const float* fs = cache.film.sample(n);
        float* dfs = dfilm.sample(n);
        for (int c = 0; c < channels_; ++c) {
            const float* g = da2.sample(n) + c * plane;
            const float* a1 = cache.a1.sample(n) + c * plane;
            float* d1 = da1.sample(n) + c * plane;
            const float scale = 1.0f + fs[c];
            double dscale = 0.0, dshift = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                dscale += static_cast<double>(g[i]) * a1[i];
                dshift += g[i];
                d1[i] = g[i] * scale;
            }
            dfs[c] = static_cast<float>(dscale);
            dfs[channels_ + c] = static_cast<float>(dshift);
        }
    }
    add_into(d_cond_act, film_.backward(cond_act, dfilm));
    Tensor da0 = conv1_.backward(cache.a0, da1);
    Tensor dh = dout;
    add_into(dh, silu_grad(cache.in, da0));
    return dh;
}

void ResBlock::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    conv1_.visit(prefix + ".conv1", f);
    conv2_.visit(prefix + ".conv2", f);
    film_.visit(prefix + ".film", f);
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    if (config.widths.size() != 3) throw std::invalid_argument("denoiser: exactly three level widths required");
    if (config.space_channels <= 0 || config.text_dim <= 0 || config.embed_dim % 2 != 0) {
        throw std::invalid_argument("denoiser: invalid configuration");
    }
    const int w1 = config.widths[0], w2 = config.widths[1], w3 = config.widths[2];
    const int e = config.embed_dim;
    time1_ = nn::Linear(e, e);
    time2_ = nn::Linear(e, e);
    text_proj_ = nn::Linear(config.text_dim, e);
    null_text_ = nn::Param({config.text_dim});
    conv_in_ = nn::Conv2d(input_channels(), w1, 3, 1, 1);
    res1_ = ResBlock(w1, e);
    down1_ = nn::Conv2d(w1, w2, 3, 2, 1);
    res2_ = ResBlock(w2, e);
    down2_ = nn::Conv2d(w2, w3, 3, 2, 1);
    res3_ = ResBlock(w3, e);
    res4_ = ResBlock(w3, e);
    upconv2_ = nn::Conv2d(w3, w2, 3, 1, 1);
    res5_ = ResBlock(w2, e);
    upconv1_ = nn::Conv2d(w2, w1, 3, 1, 1);
    res6_ = ResBlock(w1, e);
    conv_out_ = nn::Conv2d(w1, config.space_channels * (config.learn_variance ? 2 : 1), 3, 1, 1);

    std::mt19937_64 rng(seed);
    time1_.init(rng);
    time2_.init(rng);
    text_proj_.init(rng);
    {
        std::normal_distribution<double> dist(0.0, 1.0);
        double norm = 0.0;
        for (float& v : null_text_.value) {
            v = static_cast<float>(dist(rng));
            norm += static_cast<double>(v) * v;
        }
        for (float& v : null_text_.value) v = static_cast<float>(v / std::sqrt(norm));
    }
    conv_in_.init(rng);
    res1_.init(rng);
    down1_.init(rng);
    res2_.init(rng);
    down2_.init(rng);
    res3_.init(rng);
    res4_.init(rng);
    upconv2_.init(rng);
    res5_.init(rng);
    upconv1_.init(rng);
    res6_.init(rng);
    conv_out_.init(rng, 0.1f);
}

void Denoiser::visit(const nn::ParamVisitor& f) {
    time1_.visit("time1", f);
    time2_.visit("time2", f);
    text_proj_.visit("text_proj", f);
    f("null_text", null_text_);
    conv_in_.visit("conv_in", f);
    res1_.visit("res1", f);
    down1_.visit("down1", f);
    res2_.visit("res2", f);
    down2_.visit("down2", f);
    res3_.visit("res3", f);
    res4_.visit("res4", f);
    upconv2_.visit("upconv2", f);
    res5_.visit("res5", f);
    upconv1_.visit("upconv1", f);
    res6_.visit("res6", f);
    conv_out_.visit("conv_out", f);
}

std::vector<nn::NamedParam> Denoiser::parameters() {
    return nn::collect([this](const nn::ParamVisitor& f) { visit(f); });
}

void Denoiser::validate(const DenoiserInput& in) const {
    const int n = in.batch();
    if (in.x_t.c() != config_.space_channels) throw std::invalid_argument("denoiser: x_t channel mismatch");
    if (in.x_t.h() % 4 != 0 || in.x_t.w() % 4 != 0) {
        throw std::invalid_argument("denoiser: spatial size must be divisible by 4");
    }
    if (config_.cond_channels > 0) {
        if (in.cond_map.n() != n || in.cond_map.c() != config_.cond_channels || in.cond_map.h() != in.x_t.h() ||
            in.cond_map.w() != in.x_t.w()) {
            throw std::invalid_argument("denoiser: condition map " + in.cond_map.shape_string() +
                                        " does not match input " + in.x_t.shape_string());
        }
    }
    if (in.text.n() != n || static_cast<int>(in.text.sample_size()) != config_.text_dim) {
        throw std::invalid_argument("denoiser: text embedding shape mismatch");
    }
    if (static_cast<int>(in.text_null.size()) != n || static_cast<int>(in.t.size()) != n) {
        throw std::invalid_argument("denoiser: per-sample metadata size mismatch");
    }
}

Prediction Denoiser::forward(const DenoiserInput& in, DenoiserCache& c) const {
    validate(in);
    const int n = in.batch();
    c.input = config_.cond_channels > 0 ? concat_channels(in.x_t, in.cond_map) : in.x_t;
    c.text_null = in.text_null;

    c.temb = timestep_embedding(in.t, config_.embed_dim);
    c.t1 = time1_.forward(c.temb);
    c.t2 = silu(c.t1);
    c.t3 = time2_.forward(c.t2);
    c.text_in = in.text;
    for (int i = 0; i < n; ++i) {
        if (in.text_null[i]) std::copy(null_text_.value.begin(), null_text_.value.end(), c.text_in.sample(i));
    }
    c.cond = add(c.t3, text_proj_.forward(c.text_in));
    c.cond_act = silu(c.cond);

    c.h0 = conv_in_.forward(c.input);
    c.h1 = res1_.forward(c.h0, c.cond_act, &c.r1);
    c.d1 = down1_.forward(c.h1);
    c.h2 = res2_.forward(c.d1, c.cond_act, &c.r2);
    c.d2 = down2_.forward(c.h2);
    c.h3 = res3_.forward(c.d2, c.cond_act, &c.r3);
    c.h4 = res4_.forward(c.h3, c.cond_act, &c.r4);
    c.up2 = upsample(c.h4);
    c.c2 = add(upconv2_.forward(c.up2), c.h2);
    c.h5 = res5_.forward(c.c2, c.cond_act, &c.r5);
    c.up1 = upsample(c.h5);
    c.c1 = add(upconv1_.forward(c.up1), c.h1);
    c.h6 = res6_.forward(c.c1, c.cond_act, &c.r6);
    c.a_out = silu(c.h6);
    Tensor out = conv_out_.forward(c.a_out);

    Prediction pred;
    const int sc = config_.space_channels;
    pred.eps = Tensor(n, sc, out.h(), out.w());
    if (config_.learn_variance) pred.var_interp = Tensor(n, sc, out.h(), out.w());
    const std::size_t block = static_cast<std::size_t>(sc) * out.plane();
    for (int i = 0; i < n; ++i) {
        std::copy_n(out.sample(i), block, pred.eps.sample(i));
        if (config_.learn_variance) std::copy_n(out.sample(i) + block, block, pred.var_interp.sample(i));
    }
    return pred;
}

Prediction Denoiser::predict(const DenoiserInput& in) { return forward(in, cache_); }

Prediction Denoiser::infer(const DenoiserInput& in) const {
    DenoiserCache local;
    return forward(in, local);
}

void Denoiser::backward(const Tensor& d_eps, const Tensor* d_var) {
    DenoiserCache& c = cache_;
    if (c.a_out.empty()) throw std::logic_error("denoiser: backward without a forward pass");
    const int n = c.h6.n();
    const int sc = config_.space_channels;
    Tensor dout(n, conv_out_.shape().out_channels, c.h6.h(), c.h6.w());
    const std::size_t block = static_cast<std::size_t>(sc) * dout.plane();
    for (int i = 0; i < n; ++i) {
        std::copy_n(d_eps.sample(i), block, dout.sample(i));
        if (config_.learn_variance && d_var != nullptr && !d_var->empty()) {
            std::copy_n(d_var->sample(i), block, dout.sample(i) + block);
        }
    }

    Tensor d_cond_act(n, config_.embed_dim, 1, 1);
    Tensor g = conv_out_.backward(c.a_out, dout);
    g = silu_grad(c.h6, g);
    g = res6_.backward(c.r6, c.cond_act, g, d_cond_act);
    Tensor d_h1 = g;  // skip branch of c1
    g = upconv1_.backward(c.up1, g);
    g = upsample_grad(g);
    g = res5_.backward(c.r5, c.cond_act, g, d_cond_act);
    Tensor d_h2 = g;
    g = upconv2_.backward(c.up2, g);
    g = upsample_grad(g);
    g = res4_.backward(c.r4, c.cond_act, g, d_cond_act);
    g = res3_.backward(c.r3, c.cond_act, g, d_cond_act);
    g = down2_.backward(c.h2, g);
    add_into(g, d_h2);
    g = res2_.backward(c.r2, c.cond_act, g, d_cond_act);
    g = down1_.backward(c.h1, g);
    add_into(g, d_h1);
    g = res1_.backward(c.r1, c.cond_act, g, d_cond_act);
    conv_in_.backward(c.input, g, false);

    Tensor d_cond = silu_grad(c.cond, d_cond_act);
    Tensor d_text = text_proj_.backward(c.text_in, d_cond);
    for (int i = 0; i < n; ++i) {
        if (!c.text_null[i]) continue;
        const float* gt = d_text.sample(i);
        for (int k = 0; k < config_.text_dim; ++k) null_text_.grad[k] += gt[k];
    }
    Tensor d_t2 = time2_.backward(c.t2, d_cond);
    time1_.backward(c.temb, silu_grad(c.t1, d_t2));
}

Denoiser extend_input_channels(Denoiser model, int extra_channels, std::mt19937_64& rng) {
    if (extra_channels < 0) throw std::invalid_argument("extend_input_channels: negative channel count");
    if (extra_channels == 0) return model;
    if (model.extended()) throw std::logic_error("extend_input_channels: model already extended");

    nn::Conv2d& layer = model.conv_in_;
    const kernels::ConvShape old_shape = layer.shape();
    kernels::ConvShape shape = old_shape;
    shape.in_channels += extra_channels;
    const int kk = shape.kernel * shape.kernel;
    const int fan_in = shape.in_channels * kk;

    nn::Param weight({shape.out_channels, shape.in_channels, shape.kernel, shape.kernel});
    std::vector<float> fresh(static_cast<std::size_t>(shape.out_channels) * extra_channels * kk);
    nn::he_normal(fresh, fan_in, rng);
    for (int o = 0; o < shape.out_channels; ++o) {
        const float* src = layer.weight.value.data() + static_cast<std::size_t>(o) * old_shape.in_channels * kk;
        float* dst = weight.value.data() + static_cast<std::size_t>(o) * shape.in_channels * kk;
        std::copy_n(src, static_cast<std::size_t>(old_shape.in_channels) * kk, dst);
        std::copy_n(fresh.data() + static_cast<std::size_t>(o) * extra_channels * kk,
                    static_cast<std::size_t>(extra_channels) * kk, dst + static_cast<std::size_t>(old_shape.in_channels) * kk);
    }
    layer.weight = std::move(weight);
    layer.set_shape(shape);
    model.config_.cond_channels = extra_channels;
    model.cache_ = DenoiserCache{};
    return model;
}

}  // namespace spatext
