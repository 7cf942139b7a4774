#include "wasgd/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "wasgd/errors.hpp"

namespace wasgd {

namespace {

void check_dims(const Model& m, const ParamVector& x, const Sample& s) {
  if (static_cast<int>(x.size()) != m.dim()) {
    throw ConfigError(m.name() + ": parameter dimension " + std::to_string(x.size()) +
                      " != " + std::to_string(m.dim()));
  }
  if (m.feature_dim() != 0 && static_cast<int>(s.features.size()) != m.feature_dim()) {
    throw ConfigError(m.name() + ": feature dimension " + std::to_string(s.features.size()) +
                      " != " + std::to_string(m.feature_dim()));
  }
}

// Stable -log softmax_{label} plus the class probabilities.
double cross_entropy_from_logits(const std::vector<double>& logits, int label,
                                 std::vector<double>* probs) {
  double lmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - lmax);
  double log_sum = std::log(sum);
  if (probs) {
    probs->resize(logits.size());
    for (size_t k = 0; k < logits.size(); ++k) (*probs)[k] = std::exp(logits[k] - lmax) / sum;
  }
  return log_sum - (logits[static_cast<size_t>(label)] - lmax);
}

}  // namespace

double ConstantFitModel::loss(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  double r = x[0] - s.target;
  return 0.5 * r * r;
}

double ConstantFitModel::grad(const ParamVector& x, const Sample& s, ParamVector& g) const {
  check_dims(*this, x, s);
  double r = x[0] - s.target;
  g.assign(1, r);
  return 0.5 * r * r;
}

SoftmaxRegressionModel::SoftmaxRegressionModel(int feature_dim, int num_classes)
    : feature_dim_(feature_dim), num_classes_(num_classes) {
  if (feature_dim < 1 || num_classes < 2) {
    throw ConfigError("softmax: need feature_dim >= 1 and num_classes >= 2");
  }
}

namespace {

std::vector<double> linear_logits(const ParamVector& x, const Sample& s, int features,
                                  int classes) {
  std::vector<double> logits(static_cast<size_t>(classes));
  const double* b = x.data() + static_cast<size_t>(classes) * features;
  for (int k = 0; k < classes; ++k) {
    const double* w = x.data() + static_cast<size_t>(k) * features;
    double z = b[k];
    for (int j = 0; j < features; ++j) z += w[j] * s.features[static_cast<size_t>(j)];
    logits[static_cast<size_t>(k)] = z;
  }
  return logits;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double SoftmaxRegressionModel::loss(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  if (s.label < 0 || s.label >= num_classes_) throw ConfigError("softmax: label out of range");
  return cross_entropy_from_logits(linear_logits(x, s, feature_dim_, num_classes_), s.label,
                                   nullptr);
}

int SoftmaxRegressionModel::predict(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  return argmax(linear_logits(x, s, feature_dim_, num_classes_));
}

double SoftmaxRegressionModel::grad(const ParamVector& x, const Sample& s, ParamVector& g) const {
  check_dims(*this, x, s);
  if (s.label < 0 || s.label >= num_classes_) throw ConfigError("softmax: label out of range");
  std::vector<double> logits = linear_logits(x, s, feature_dim_, num_classes_);
  std::vector<double> probs;
  double value = cross_entropy_from_logits(logits, s.label, &probs);
  g.assign(x.size(), 0.0);
  double* gb = g.data() + static_cast<size_t>(num_classes_) * feature_dim_;
  for (int k = 0; k < num_classes_; ++k) {
    double d = probs[static_cast<size_t>(k)] - (k == s.label ? 1.0 : 0.0);
    double* gw = g.data() + static_cast<size_t>(k) * feature_dim_;
    for (int j = 0; j < feature_dim_; ++j) gw[j] = d * s.features[static_cast<size_t>(j)];
    gb[k] = d;
  }
  return value;
}

MlpModel::MlpModel(int feature_dim, int hidden_dim, int num_classes)
    : feature_dim_(feature_dim), hidden_dim_(hidden_dim), num_classes_(num_classes) {
  if (feature_dim < 1 || hidden_dim < 1 || num_classes < 2) {
    throw ConfigError("mlp: need feature_dim, hidden_dim >= 1 and num_classes >= 2");
  }
}

int MlpModel::dim() const {
  return hidden_dim_ * (feature_dim_ + 1) + num_classes_ * (hidden_dim_ + 1);
}

std::vector<double> MlpModel::logits(const ParamVector& x, const Sample& s) const {
  const double* w1 = x.data();
  const double* b1 = w1 + static_cast<size_t>(hidden_dim_) * feature_dim_;
  const double* w2 = b1 + hidden_dim_;
  const double* b2 = w2 + static_cast<size_t>(num_classes_) * hidden_dim_;
  std::vector<double> hidden(static_cast<size_t>(hidden_dim_));
  for (int hch = 0; hch < hidden_dim_; ++hch) {
    double z = b1[hch];
    const double* row = w1 + static_cast<size_t>(hch) * feature_dim_;
    for (int j = 0; j < feature_dim_; ++j) z += row[j] * s.features[static_cast<size_t>(j)];
    hidden[static_cast<size_t>(hch)] = std::tanh(z);
  }
  std::vector<double> out(static_cast<size_t>(num_classes_));
  for (int k = 0; k < num_classes_; ++k) {
    double z = b2[k];
    const double* row = w2 + static_cast<size_t>(k) * hidden_dim_;
    for (int hch = 0; hch < hidden_dim_; ++hch) z += row[hch] * hidden[static_cast<size_t>(hch)];
    out[static_cast<size_t>(k)] = z;
  }
  return out;
}

double MlpModel::loss(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  if (s.label < 0 || s.label >= num_classes_) throw ConfigError("mlp: label out of range");
  return cross_entropy_from_logits(logits(x, s), s.label, nullptr);
}

int MlpModel::predict(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  return argmax(logits(x, s));
}

double MlpModel::grad(const ParamVector& x, const Sample& s, ParamVector& g) const {
  check_dims(*this, x, s);
  if (s.label < 0 || s.label >= num_classes_) throw ConfigError("mlp: label out of range");
  const double* w1 = x.data();
  const double* b1 = w1 + static_cast<size_t>(hidden_dim_) * feature_dim_;
  const double* w2 = b1 + hidden_dim_;
  const double* b2 = w2 + static_cast<size_t>(num_classes_) * hidden_dim_;

  std::vector<double> hidden(static_cast<size_t>(hidden_dim_));
  for (int hch = 0; hch < hidden_dim_; ++hch) {
    double z = b1[hch];
    const double* row = w1 + static_cast<size_t>(hch) * feature_dim_;
    for (int j = 0; j < feature_dim_; ++j) z += row[j] * s.features[static_cast<size_t>(j)];
    hidden[static_cast<size_t>(hch)] = std::tanh(z);
  }
  std::vector<double> logits(static_cast<size_t>(num_classes_));
  for (int k = 0; k < num_classes_; ++k) {
    double z = b2[k];
    const double* row = w2 + static_cast<size_t>(k) * hidden_dim_;
    for (int hch = 0; hch < hidden_dim_; ++hch) z += row[hch] * hidden[static_cast<size_t>(hch)];
    logits[static_cast<size_t>(k)] = z;
  }
  std::vector<double> probs;
  double value = cross_entropy_from_logits(logits, s.label, &probs);

  g.assign(x.size(), 0.0);
  double* gw1 = g.data();
  double* gb1 = gw1 + static_cast<size_t>(hidden_dim_) * feature_dim_;
  double* gw2 = gb1 + hidden_dim_;
  double* gb2 = gw2 + static_cast<size_t>(num_classes_) * hidden_dim_;

  std::vector<double> dlogits(static_cast<size_t>(num_classes_));
  for (int k = 0; k < num_classes_; ++k) {
    dlogits[static_cast<size_t>(k)] = probs[static_cast<size_t>(k)] - (k == s.label ? 1.0 : 0.0);
  }
  std::vector<double> dhidden(static_cast<size_t>(hidden_dim_), 0.0);
  for (int k = 0; k < num_classes_; ++k) {
    double d = dlogits[static_cast<size_t>(k)];
    double* row = gw2 + static_cast<size_t>(k) * hidden_dim_;
    const double* wrow = w2 + static_cast<size_t>(k) * hidden_dim_;
    for (int hch = 0; hch < hidden_dim_; ++hch) {
      row[hch] = d * hidden[static_cast<size_t>(hch)];
      dhidden[static_cast<size_t>(hch)] += d * wrow[hch];
    }
    gb2[k] = d;
  }
  for (int hch = 0; hch < hidden_dim_; ++hch) {
    double hv = hidden[static_cast<size_t>(hch)];
    double dz = dhidden[static_cast<size_t>(hch)] * (1.0 - hv * hv);
    double* row = gw1 + static_cast<size_t>(hch) * feature_dim_;
    for (int j = 0; j < feature_dim_; ++j) row[j] = dz * s.features[static_cast<size_t>(j)];
    gb1[hch] = dz;
  }
  return value;
}

QuadraticModel::QuadraticModel(double curvature, int dim) : curvature_(curvature), dim_(dim) {
  if (curvature <= 0.0 || dim < 1) throw ConfigError("quadratic: need curvature > 0 and dim >= 1");
}

double QuadraticModel::loss(const ParamVector& x, const Sample& s) const {
  check_dims(*this, x, s);
  double sq = 0.0;
  for (double v : x) sq += v * v;
  return 0.5 * curvature_ * sq;
}

double QuadraticModel::grad(const ParamVector& x, const Sample& s, ParamVector& g) const {
  check_dims(*this, x, s);
  g.resize(x.size());
  double sq = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    g[i] = curvature_ * x[i];
    sq += x[i] * x[i];
  }
  return 0.5 * curvature_ * sq;
}

double sample_noisy_gradient(const NoisyQuadraticSpec& spec, double x, Rng& rng) {
  double b = spec.sigma_b * rng.gaussian();
  double h = spec.sigma_h * rng.gaussian();
  return spec.c * x - b * x - h;
}

// Model spec strings: "constant-fit", "quadratic:c[,dim]",
// "softmax:features,classes", "mlp:features,hidden,classes".
std::unique_ptr<Model> make_model(const std::string& spec_string) {
  std::string kind = spec_string;
  std::string args;
  if (auto pos = spec_string.find(':'); pos != std::string::npos) {
    kind = spec_string.substr(0, pos);
    args = spec_string.substr(pos + 1);
  }
  std::vector<double> vals;
  std::stringstream ss(args);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      vals.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("model: bad numeric argument '" + tok + "' in '" + spec_string + "'");
    }
  }
  if (kind == "constant-fit") return std::make_unique<ConstantFitModel>();
  if (kind == "quadratic") {
    double c = vals.size() > 0 ? vals[0] : 1.0;
    int d = vals.size() > 1 ? static_cast<int>(vals[1]) : 1;
    return std::make_unique<QuadraticModel>(c, d);
  }
  if (kind == "softmax") {
    if (vals.size() != 2) throw ConfigError("model: softmax:features,classes");
    return std::make_unique<SoftmaxRegressionModel>(static_cast<int>(vals[0]),
                                                    static_cast<int>(vals[1]));
  }
  if (kind == "mlp") {
    if (vals.size() != 3) throw ConfigError("model: mlp:features,hidden,classes");
    return std::make_unique<MlpModel>(static_cast<int>(vals[0]), static_cast<int>(vals[1]),
                                      static_cast<int>(vals[2]));
  }
  throw ConfigError("model: unknown model '" + kind + "'");
}

}  // namespace wasgd
