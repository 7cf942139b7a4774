#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wasgd/models.hpp"

namespace wasgd {

struct DatasetHandle {
  std::vector<Sample> train;
  std::vector<Sample> test;
  int num_classes = 0;  // 0 for regression datasets
  int feature_dim = 0;
  std::vector<long> label_histogram;  // over train, classification only

  std::vector<int> train_labels() const;
};

// IDX-format reader (MNIST family): magic 0x00000803 for images,
// 0x00000801 for labels, big-endian dimensions, one byte per pixel/label.
// Pixels are scaled to [0, 1]; labels must be in [0, 10).
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path);

// Raw binary-batch reader for CIFAR files (subsampled smoke runs only).
// Record layout: CIFAR-10 1 label byte + 3072 pixels, CIFAR-100 2 label
// bytes (coarse, fine) + 3072 pixels; the fine label is used.
DatasetHandle load_cifar(const std::vector<std::string>& batch_paths, bool cifar100,
                         size_t max_samples = 0);

// Regression set for the constant-fit model: the first half of the samples
// carry target b, the second half target a. The least-squares optimum is
// (a + b) / 2.
DatasetHandle synth_two_level(int count, double a, double b);

// Balanced Gaussian blobs: `classes` isotropic clusters with unit-scale
// random centers, `spread` controls overlap. Emits count training samples
// (class-interleaved) plus test_count held-out ones.
DatasetHandle synth_blobs(int count, int classes, int dim, double spread, uint64_t seed,
                          int test_count = 0);

// Dataset spec strings, as accepted by the CLI and RunConfig:
//   "idx:train_images,train_labels[,test_images,test_labels]"
//   "cifar10:batch1[;batch2...][@max]"   "cifar100:file[@max]"
//   "two-level:count,a,b"
//   "blobs:count,classes,dim,spread,seed[,test_count]"
DatasetHandle load_dataset(const std::string& spec_string);

// Mean loss and error rate of params over samples. Error is the
// misclassification rate for classifiers (num_classes > 0) and the mean loss
// for regression models.
struct EvalResult {
  double loss = 0.0;
  double error = 0.0;
};
EvalResult evaluate(const Model& model, const ParamVector& params,
                    const std::vector<Sample>& samples);

}  // namespace wasgd
