#pragma once
// Linear classifiers and compression on extracted features: one-vs-all
// L2-regularised logistic regression, and SVD whitening.

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "mcnn/dataio.hpp"

namespace mcnn::classify {

struct LrConfig {
  double c = 1.0;  // objective: (1/c) * 0.5 * ||w||^2 + sum_i log(1 + exp(-y_i (w.x_i + b)))
  int max_iterations = 500;
  double tolerance = 1e-4;  // on the 2-norm of the objective gradient
  int history = 10;         // L-BFGS memory

  void validate() const;
};

struct BinaryTrace {
  std::vector<double> objective;  // per outer iteration, starting at w = 0
  double final_gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct LrModel {
  Eigen::MatrixXf weights;  // classes x dim
  Eigen::VectorXf bias;     // classes
  std::vector<BinaryTrace> traces;

  int classes() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
};

/// One binary problem per class. Bias is not regularised. Throws on fewer
/// than two distinct labels or non-finite features.
LrModel train_lr_ova(const dataio::FeatureSet& data, int classes, const LrConfig& config = {});

struct LrPrediction {
  std::vector<int> labels;
  Eigen::MatrixXd scores;  // n x classes
};

/// argmax of per-class scores, ties to the lowest class.
LrPrediction predict_lr(const LrModel& model, const dataio::FeatureSet& data);

void save_lr(const std::filesystem::path& path, const LrModel& model);
LrModel load_lr(const std::filesystem::path& path);

inline constexpr double kWhiteningEpsilon = 1e-8;

struct WhiteningModel {
  Eigen::VectorXd mean;      // dim
  Eigen::MatrixXd basis;     // dim x k, orthonormal columns
  Eigen::VectorXd singular;  // k, descending
  long samples = 0;
  double epsilon = kWhiteningEpsilon;

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(basis.cols()); }
};

/// Top-k singular triplets of the centred data through the eigendecomposition
/// of the smaller Gram matrix. Directions beyond the data rank are completed
/// to an orthonormal basis.
WhiteningModel fit_svd_whitening(const dataio::FeatureSet& data, int k);

/// ((x - mean) . v_i) / (sigma_i / sqrt(n - 1) + epsilon)
dataio::FeatureSet apply_whitening(const WhiteningModel& model, const dataio::FeatureSet& data);

void save_whitening(const std::filesystem::path& path, const WhiteningModel& model);
WhiteningModel load_whitening(const std::filesystem::path& path);

}  // namespace mcnn::classify
