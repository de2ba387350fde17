#include "spatext/prior.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "spatext/hash.hpp"

namespace spatext {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'X', 'P', 'R', 'I', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("prior file truncated: " + what);
    return v;
}

}  // namespace

PriorModel::PriorModel(Eigen::MatrixXd weight, Eigen::VectorXd bias, double train_loss)
    : weight_(std::move(weight)), bias_(std::move(bias)), train_loss_(train_loss) {
    if (weight_.rows() != weight_.cols() || bias_.size() != weight_.rows()) {
        throw std::invalid_argument("prior: weight must be d x d and bias d");
    }
    if (!weight_.allFinite() || !bias_.allFinite()) throw ValidationError("prior: non-finite weights");
}

PriorModel PriorModel::identity(int dim) {
    return PriorModel(Eigen::MatrixXd::Identity(dim, dim), Eigen::VectorXd::Zero(dim), 0.0);
}

std::string PriorModel::fingerprint() const {
    std::uint64_t h = fnv1a(weight_.data(), sizeof(double) * static_cast<std::size_t>(weight_.size()));
    h = fnv1a(bias_.data(), sizeof(double) * static_cast<std::size_t>(bias_.size()), h);
    return "prior-" + hex64(h);
}

EmbeddingVector PriorModel::apply(const EmbeddingVector& v) const { return apply_prior(*this, v); }

PriorModel train_prior(const std::vector<EmbeddingVector>& text, const std::vector<EmbeddingVector>& image,
                       const PriorTrainConfig& config) {
    if (text.size() != image.size()) throw ValidationError("train_prior: text and image pair counts differ");
    if (text.empty()) throw ValidationError("train_prior: no training pairs");
    const int d = static_cast<int>(text.front().size());
    const int n = static_cast<int>(text.size());
    const int cols = d + (config.bias ? 1 : 0);
    Eigen::MatrixXd x(n, cols), y(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(text[i].size()) != d || static_cast<int>(image[i].size()) != d) {
            throw ValidationError("train_prior: pair " + std::to_string(i) + " has the wrong dimension");
        }
        for (int j = 0; j < d; ++j) {
            x(i, j) = text[i][j];
            y(i, j) = image[i][j];
        }
        if (config.bias) x(i, d) = 1.0;
    }
    if (!x.allFinite() || !y.allFinite()) throw ValidationError("train_prior: non-finite embeddings");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(config.rank_tolerance);
    if (qr.rank() < cols) {
        throw ValidationError("train_prior: rank-deficient pairs (rank " + std::to_string(qr.rank()) + " < " +
                              std::to_string(cols) + "); need at least d linearly independent text embeddings");
    }
    const Eigen::MatrixXd coef = qr.solve(y);  // cols x d
    const double loss = (x * coef - y).squaredNorm() / n;
    Eigen::MatrixXd weight = coef.topRows(d).transpose();
    Eigen::VectorXd bias = config.bias ? Eigen::VectorXd(coef.row(d).transpose()) : Eigen::VectorXd::Zero(d);
    return PriorModel(std::move(weight), std::move(bias), loss);
}

EmbeddingVector apply_prior(const PriorModel& model, const EmbeddingVector& v) {
    if (static_cast<int>(v.size()) != model.dim()) {
        throw ValidationError("apply_prior: vector has dimension " + std::to_string(v.size()) + ", prior expects " +
                              std::to_string(model.dim()));
    }
    const Eigen::VectorXd in = to_eigen(v);
    if (in.norm() == 0.0) throw ValidationError("apply_prior: cannot map the zero vector");
    Eigen::VectorXd out = model.weight() * in + model.bias();
    const double norm = out.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError("apply_prior: mapped vector cannot be normalized");
    return to_embedding(out / norm);
}

void save_prior(const std::filesystem::path& path, const PriorModel& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(kMagic, sizeof(kMagic));
    put(f, kVersion);
    put(f, static_cast<std::uint32_t>(model.dim()));
    put(f, model.train_loss());
    for (int r = 0; r < model.dim(); ++r)
        for (int c = 0; c < model.dim(); ++c) put(f, model.weight()(r, c));
    for (int r = 0; r < model.dim(); ++r) put(f, model.bias()(r));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

PriorModel load_prior(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open prior " + path.string());
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw ValidationError(path.string() + " is not a prior file");
    }
    const auto version = get<std::uint32_t>(f, "version");
    if (version != kVersion) throw ValidationError("unsupported prior file version " + std::to_string(version));
    const auto d = static_cast<int>(get<std::uint32_t>(f, "dimension"));
    if (d < 1 || d > 4096) throw ValidationError("prior file: implausible dimension " + std::to_string(d));
    const auto loss = get<double>(f, "loss");
    Eigen::MatrixXd w(d, d);
    Eigen::VectorXd b(d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) w(r, c) = get<double>(f, "weights");
    for (int r = 0; r < d; ++r) b(r) = get<double>(f, "bias");
    return PriorModel(std::move(w), std::move(b), loss);
}

}  // namespace spatext
