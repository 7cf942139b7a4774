#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wasgd/rng.hpp"

namespace wasgd {

// Dense model parameters. Dimension is fixed for the lifetime of a run and
// every accepted update must keep all entries finite.
using ParamVector = std::vector<double>;

struct Sample {
  std::vector<double> features;
  int label = 0;       // classification targets
  double target = 0.0; // regression targets
};

// A differentiable objective with per-sample loss and gradient.
//
// grad() returns the loss at x as a byproduct of the forward pass, so callers
// that need both (loss-energy recording during training) pay for one
// evaluation only.
class Model {
 public:
  virtual ~Model() = default;

  virtual int dim() const = 0;
  virtual int feature_dim() const = 0;  // 0 = any input accepted
  virtual std::string name() const = 0;

  virtual double loss(const ParamVector& x, const Sample& s) const = 0;
  // Writes d loss / d x into g (resized to dim()) and returns loss(x, s).
  virtual double grad(const ParamVector& x, const Sample& s, ParamVector& g) const = 0;
  // Predicted class id for classifiers, -1 for regression models.
  virtual int predict(const ParamVector& x, const Sample& s) const {
    (void)x;
    (void)s;
    return -1;
  }

  ParamVector zero_params() const { return ParamVector(static_cast<size_t>(dim()), 0.0); }
  ParamVector random_params(double scale, Rng& rng) const {
    ParamVector x(static_cast<size_t>(dim()));
    for (double& v : x) v = scale * rng.gaussian();
    return x;
  }
};

// y = d constant fit, squared-error loss (d - target)^2 / 2. One parameter,
// SGD step d <- d - eta (d - target).
class ConstantFitModel : public Model {
 public:
  int dim() const override { return 1; }
  int feature_dim() const override { return 0; }
  std::string name() const override { return "constant-fit"; }
  double loss(const ParamVector& x, const Sample& s) const override;
  double grad(const ParamVector& x, const Sample& s, ParamVector& g) const override;
};

// Multinomial logistic regression: logits = W f + b, cross-entropy loss.
// Parameter layout: W row-major (classes x features), then b (classes).
class SoftmaxRegressionModel : public Model {
 public:
  SoftmaxRegressionModel(int feature_dim, int num_classes);
  int dim() const override { return num_classes_ * (feature_dim_ + 1); }
  int feature_dim() const override { return feature_dim_; }
  int num_classes() const { return num_classes_; }
  std::string name() const override { return "softmax"; }
  double loss(const ParamVector& x, const Sample& s) const override;
  double grad(const ParamVector& x, const Sample& s, ParamVector& g) const override;
  int predict(const ParamVector& x, const Sample& s) const override;

 private:
  int feature_dim_;
  int num_classes_;
};

// One hidden tanh layer in front of the softmax output.
// Layout: W1 (hidden x features), b1 (hidden), W2 (classes x hidden), b2 (classes).
class MlpModel : public Model {
 public:
  MlpModel(int feature_dim, int hidden_dim, int num_classes);
  int dim() const override;
  int feature_dim() const override { return feature_dim_; }
  int num_classes() const { return num_classes_; }
  std::string name() const override { return "mlp"; }
  double loss(const ParamVector& x, const Sample& s) const override;
  double grad(const ParamVector& x, const Sample& s, ParamVector& g) const override;
  int predict(const ParamVector& x, const Sample& s) const override;

 private:
  std::vector<double> logits(const ParamVector& x, const Sample& s) const;
  int feature_dim_;
  int hidden_dim_;
  int num_classes_;
};

// Noiseless quadratic 0.5 c |x|^2; the gradient ignores the sample. The
// convex test bed for contraction measurements.
class QuadraticModel : public Model {
 public:
  explicit QuadraticModel(double curvature, int dim = 1);
  int dim() const override { return dim_; }
  int feature_dim() const override { return 0; }
  double curvature() const { return curvature_; }
  std::string name() const override { return "quadratic"; }
  double loss(const ParamVector& x, const Sample& s) const override;
  double grad(const ParamVector& x, const Sample& s, ParamVector& g) const override;

 private:
  double curvature_;
  int dim_;
};

// Scalar quadratic with gradient samples g(x) = c x - b x - h, where b and h
// are zero-mean Gaussian draws with std deviations sigma_b and sigma_h.
struct NoisyQuadraticSpec {
  double c = 1.0;
  double sigma_b = 0.0;
  double sigma_h = 0.0;
};

// Draws b then h from rng (two Gaussians per call) and returns the sample
// gradient at x.
double sample_noisy_gradient(const NoisyQuadraticSpec& spec, double x, Rng& rng);

std::unique_ptr<Model> make_model(const std::string& spec_string);

}  // namespace wasgd
