#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spatext/embed.hpp"

namespace spatext {

struct PriorTrainConfig {
    bool bias = false;
    // Singular values below rank_tolerance * largest count as zero.
    double rank_tolerance = 1e-8;
};

// Linear text-to-image embedding map, y = normalize(W v + b).
class PriorModel {
public:
    PriorModel() = default;
    PriorModel(Eigen::MatrixXd weight, Eigen::VectorXd bias, double train_loss);
    static PriorModel identity(int dim);

    int dim() const { return static_cast<int>(weight_.rows()); }
    const Eigen::MatrixXd& weight() const { return weight_; }
    const Eigen::VectorXd& bias() const { return bias_; }
    double train_loss() const { return train_loss_; }
    // FNV-1a over the weights; identifies the prior inside checkpoints.
    std::string fingerprint() const;

    EmbeddingVector apply(const EmbeddingVector& v) const;

private:
    Eigen::MatrixXd weight_;
    Eigen::VectorXd bias_;
    double train_loss_ = 0.0;
};

// Closed-form least squares. Throws ValidationError when the pairs are
// mismatched, non-finite or rank-deficient (fewer than d independent texts).
PriorModel train_prior(const std::vector<EmbeddingVector>& text, const std::vector<EmbeddingVector>& image,
                       const PriorTrainConfig& config = {});

// Throws ValidationError on dimension mismatch or a zero vector.
EmbeddingVector apply_prior(const PriorModel& model, const EmbeddingVector& v);

void save_prior(const std::filesystem::path& path, const PriorModel& model);
PriorModel load_prior(const std::filesystem::path& path);

}  // namespace spatext
