#include "wasgd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wasgd/errors.hpp"
#include "wasgd/weighting.hpp"

namespace wasgd {

namespace {

uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw DataError("idx: truncated file while reading " + what);
  }
  return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
         (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

void fill_histogram(DatasetHandle& d) {
  if (d.num_classes <= 0) return;
  d.label_histogram.assign(static_cast<size_t>(d.num_classes), 0);
  for (const Sample& s : d.train) ++d.label_histogram[static_cast<size_t>(s.label)];
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) parts.push_back(tok);
  return parts;
}

}  // namespace

std::vector<int> DatasetHandle::train_labels() const {
  std::vector<int> labels(train.size());
  for (size_t i = 0; i < train.size(); ++i) labels[i] = train[i].label;
  return labels;
}

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw DataError("idx: cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw DataError("idx: cannot open " + labels_path);

  uint32_t image_magic = read_be32(images, "image magic");
  if (image_magic != 0x00000803u) {
    throw DataError("idx: bad image magic " + std::to_string(image_magic));
  }
  uint32_t label_magic = read_be32(labels, "label magic");
  if (label_magic != 0x00000801u) {
    throw DataError("idx: bad label magic " + std::to_string(label_magic));
  }
  uint32_t n_images = read_be32(images, "image count");
  uint32_t rows = read_be32(images, "rows");
  uint32_t cols = read_be32(images, "cols");
  uint32_t n_labels = read_be32(labels, "label count");
  if (n_images != n_labels) {
    throw DataError("idx: image count " + std::to_string(n_images) + " != label count " +
                    std::to_string(n_labels));
  }
  if (n_images == 0) throw DataError("idx: empty dataset");

  size_t pixels = static_cast<size_t>(rows) * cols;
  DatasetHandle d;
  d.num_classes = 10;
  d.feature_dim = static_cast<int>(pixels);
  d.train.resize(n_images);
  std::vector<unsigned char> buf(pixels);
  for (uint32_t i = 0; i < n_images; ++i) {
    if (!images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels))) {
      throw DataError("idx: truncated image data at item " + std::to_string(i));
    }
    Sample& s = d.train[i];
    s.features.resize(pixels);
    for (size_t j = 0; j < pixels; ++j) s.features[j] = buf[j] / 255.0;
    unsigned char lab = 0;
    if (!labels.read(reinterpret_cast<char*>(&lab), 1)) {
      throw DataError("idx: truncated label data at item " + std::to_string(i));
    }
    if (lab >= 10) throw DataError("idx: label " + std::to_string(int(lab)) + " outside [0,10)");
    s.label = lab;
  }
  fill_histogram(d);
  return d;
}

DatasetHandle load_cifar(const std::vector<std::string>& batch_paths, bool cifar100,
                         size_t max_samples) {
  const size_t pixel_bytes = 3072;
  const size_t label_bytes = cifar100 ? 2 : 1;
  const size_t record = label_bytes + pixel_bytes;
  const int num_classes = cifar100 ? 100 : 10;

  DatasetHandle d;
  d.num_classes = num_classes;
  d.feature_dim = static_cast<int>(pixel_bytes);
  std::vector<unsigned char> buf(record);
  for (const std::string& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cifar: cannot open " + path);
    in.seekg(0, std::ios::end);
    auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    if (size == 0 || size % record != 0) {
      throw DataError("cifar: " + path + " size is not a multiple of the record size");
    }
    size_t n = size / record;
    for (size_t i = 0; i < n; ++i) {
      if (max_samples > 0 && d.train.size() >= max_samples) break;
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
      int label = buf[label_bytes - 1];  // fine label for CIFAR-100
      if (label >= num_classes) throw DataError("cifar: label out of range in " + path);
      Sample s;
      s.label = label;
      s.features.resize(pixel_bytes);
      for (size_t j = 0; j < pixel_bytes; ++j) s.features[j] = buf[label_bytes + j] / 255.0;
      d.train.push_back(std::move(s));
    }
  }
  if (d.train.empty()) throw DataError("cifar: no samples loaded");
  fill_histogram(d);
  return d;
}

DatasetHandle synth_two_level(int count, double a, double b) {
  if (count < 2 || count % 2 != 0) throw ConfigError("two-level: count must be even and >= 2");
  DatasetHandle d;
  d.num_classes = 0;
  d.feature_dim = 0;
  d.train.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    d.train[static_cast<size_t>(i)].target = i < count / 2 ? b : a;
  }
  return d;
}

DatasetHandle synth_blobs(int count, int classes, int dim, double spread, uint64_t seed,
                          int test_count) {
  if (count < classes || classes < 2 || dim < 1) {
    throw ConfigError("blobs: need count >= classes >= 2 and dim >= 1");
  }
  Rng rng(derive_seed(seed, 0xB10B5));
  std::vector<std::vector<double>> centers(static_cast<size_t>(classes));
  for (auto& c : centers) {
    c.resize(static_cast<size_t>(dim));
    for (double& v : c) v = rng.gaussian();
  }
  auto make = [&](int n) {
    std::vector<Sample> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      int k = i % classes;  // class-interleaved, balanced up to remainder
      Sample& s = out[static_cast<size_t>(i)];
      s.label = k;
      s.features.resize(static_cast<size_t>(dim));
      for (int j = 0; j < dim; ++j) {
        s.features[static_cast<size_t>(j)] =
            centers[static_cast<size_t>(k)][static_cast<size_t>(j)] + spread * rng.gaussian();
      }
    }
    return out;
  };
  DatasetHandle d;
  d.num_classes = classes;
  d.feature_dim = dim;
  d.train = make(count);
  if (test_count > 0) d.test = make(test_count);
  fill_histogram(d);
  return d;
}

DatasetHandle load_dataset(const std::string& spec_string) {
  auto pos = spec_string.find(':');
  if (pos == std::string::npos) throw ConfigError("dataset: missing ':' in '" + spec_string + "'");
  std::string kind = spec_string.substr(0, pos);
  std::string args = spec_string.substr(pos + 1);
  if (kind == "idx") {
    auto parts = split(args, ',');
    if (parts.size() != 2 && parts.size() != 4) {
      throw ConfigError("dataset: idx:train_images,train_labels[,test_images,test_labels]");
    }
    DatasetHandle d = load_idx(parts[0], parts[1]);
    if (parts.size() == 4) {
      DatasetHandle t = load_idx(parts[2], parts[3]);
      d.test = std::move(t.train);
    }
    return d;
  }
  if (kind == "cifar10" || kind == "cifar100") {
    size_t max_samples = 0;
    if (auto at = args.find('@'); at != std::string::npos) {
      max_samples = static_cast<size_t>(std::stoul(args.substr(at + 1)));
      args = args.substr(0, at);
    }
    return load_cifar(split(args, ';'), kind == "cifar100", max_samples);
  }
  auto parse_nums = [&](size_t lo, size_t hi) {
    auto parts = split(args, ',');
    if (parts.size() < lo || parts.size() > hi) {
      throw ConfigError("dataset: bad argument count in '" + spec_string + "'");
    }
    std::vector<double> vals;
    for (auto& t : parts) {
      try {
        vals.push_back(std::stod(t));
      } catch (const std::exception&) {
        throw ConfigError("dataset: bad numeric argument '" + t + "'");
      }
    }
    return vals;
  };
  if (kind == "two-level") {
    auto v = parse_nums(3, 3);
    return synth_two_level(static_cast<int>(v[0]), v[1], v[2]);
  }
  if (kind == "blobs") {
    auto v = parse_nums(5, 6);
    return synth_blobs(static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
                       v[3], static_cast<uint64_t>(v[4]),
                       v.size() > 5 ? static_cast<int>(v[5]) : 0);
  }
  throw ConfigError("dataset: unknown kind '" + kind + "'");
}

EvalResult evaluate(const Model& model, const ParamVector& params,
                    const std::vector<Sample>& samples) {
  EvalResult r;
  if (samples.empty()) return r;
  bool classifier = false;
  long wrong = 0;
  for (const Sample& s : samples) {
    r.loss += model.loss(params, s);
    int pred = model.predict(params, s);
    if (pred >= 0) {
      classifier = true;
      if (pred != s.label) ++wrong;
    }
  }
  r.loss /= static_cast<double>(samples.size());
  r.error = classifier ? static_cast<double>(wrong) / static_cast<double>(samples.size()) : r.loss;
  return r;
}

}  // namespace wasgd
