#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "wasgd/dataset.hpp"
#include "wasgd/errors.hpp"

using namespace wasgd;

namespace {

void put_be32(std::ofstream& out, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

struct IdxFixture {
  std::filesystem::path images;
  std::filesystem::path labels;
};

IdxFixture write_idx(int count, int rows, int cols, bool truncate_images = false,
                     unsigned char bad_label = 255) {
  auto dir = std::filesystem::temp_directory_path() / "wasgd_idx_test";
  std::filesystem::create_directories(dir);
  IdxFixture fx{dir / ("img_" + std::to_string(count) + std::to_string(truncate_images) +
                       std::to_string(bad_label)),
                dir / ("lab_" + std::to_string(count) + std::to_string(truncate_images) +
                       std::to_string(bad_label))};
  {
    std::ofstream img(fx.images, std::ios::binary);
    put_be32(img, 0x00000803u);
    put_be32(img, static_cast<uint32_t>(count));
    put_be32(img, static_cast<uint32_t>(rows));
    put_be32(img, static_cast<uint32_t>(cols));
    int pixels = count * rows * cols - (truncate_images ? 5 : 0);
    for (int i = 0; i < pixels; ++i) {
      unsigned char v = static_cast<unsigned char>(i % 256);
      img.write(reinterpret_cast<char*>(&v), 1);
    }
  }
  {
    std::ofstream lab(fx.labels, std::ios::binary);
    put_be32(lab, 0x00000801u);
    put_be32(lab, static_cast<uint32_t>(count));
    for (int i = 0; i < count; ++i) {
      unsigned char v = bad_label != 255 && i == count - 1 ? bad_label
                                                           : static_cast<unsigned char>(i % 10);
      lab.write(reinterpret_cast<char*>(&v), 1);
    }
  }
  return fx;
}

}  // namespace

TEST_CASE("load_idx reads a well-formed pair") {
  auto fx = write_idx(6, 4, 4);
  DatasetHandle d = load_idx(fx.images.string(), fx.labels.string());
  CHECK(d.train.size() == 6);
  CHECK(d.feature_dim == 16);
  CHECK(d.num_classes == 10);
  CHECK(d.train[0].features.size() == 16);
  CHECK(d.train[0].features[1] == doctest::Approx(1.0 / 255.0));
  CHECK(d.train[1].label == 1);
  for (const Sample& s : d.train) {
    for (double v : s.features) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(d.label_histogram.size() == 10);
}

TEST_CASE("load_idx rejects corruption") {
  auto truncated = write_idx(6, 4, 4, true);
  CHECK_THROWS_AS(load_idx(truncated.images.string(), truncated.labels.string()), DataError);

  auto badlab = write_idx(6, 4, 4, false, 11);
  CHECK_THROWS_AS(load_idx(badlab.images.string(), badlab.labels.string()), DataError);

  auto ok = write_idx(6, 4, 4);
  // swapped files fail the magic check
  CHECK_THROWS_AS(load_idx(ok.labels.string(), ok.images.string()), DataError);
  CHECK_THROWS_AS(load_idx("/nonexistent/images", "/nonexistent/labels"), DataError);
}

TEST_CASE("load_idx rejects count mismatch") {
  auto a = write_idx(6, 4, 4);
  auto b = write_idx(4, 4, 4);
  CHECK_THROWS_AS(load_idx(a.images.string(), b.labels.string()), DataError);
}

TEST_CASE("cifar raw batch reader") {
  auto dir = std::filesystem::temp_directory_path() / "wasgd_cifar_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "batch.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (int rec = 0; rec < 3; ++rec) {
      unsigned char label = static_cast<unsigned char>(rec + 1);
      out.write(reinterpret_cast<char*>(&label), 1);
      for (int j = 0; j < 3072; ++j) {
        unsigned char v = static_cast<unsigned char>((rec + j) % 256);
        out.write(reinterpret_cast<char*>(&v), 1);
      }
    }
  }
  DatasetHandle d = load_cifar({path.string()}, false, 0);
  CHECK(d.train.size() == 3);
  CHECK(d.train[1].label == 2);
  CHECK(d.feature_dim == 3072);
  DatasetHandle capped = load_cifar({path.string()}, false, 2);
  CHECK(capped.train.size() == 2);

  auto bad = dir / "bad.bin";
  {
    std::ofstream out(bad, std::ios::binary);
    char z[100] = {};
    out.write(z, sizeof(z));
  }
  CHECK_THROWS_AS(load_cifar({bad.string()}, false, 0), DataError);
}

TEST_CASE("synth_two_level layout and optimum") {
  DatasetHandle d = synth_two_level(12, 0.0, 2.0);
  REQUIRE(d.train.size() == 12);
  for (int i = 0; i < 6; ++i) CHECK(d.train[static_cast<size_t>(i)].target == 2.0);
  for (int i = 6; i < 12; ++i) CHECK(d.train[static_cast<size_t>(i)].target == 0.0);
  // least-squares optimum of y = d is the midpoint
  ConstantFitModel model;
  EvalResult at_mid = evaluate(model, {1.0}, d.train);
  EvalResult off = evaluate(model, {1.1}, d.train);
  CHECK(at_mid.loss < off.loss);
  CHECK_THROWS_AS(synth_two_level(7, 0.0, 1.0), ConfigError);
}

TEST_CASE("synth_blobs is balanced, deterministic, and labeled in range") {
  DatasetHandle d = synth_blobs(300, 10, 8, 0.3, 42, 60);
  CHECK(d.train.size() == 300);
  CHECK(d.test.size() == 60);
  CHECK(d.num_classes == 10);
  CHECK(d.feature_dim == 8);
  for (long c : d.label_histogram) CHECK(c == 30);
  for (const Sample& s : d.train) {
    CHECK(s.label >= 0);
    CHECK(s.label < 10);
  }
  DatasetHandle d2 = synth_blobs(300, 10, 8, 0.3, 42, 60);
  CHECK(d.train[17].features == d2.train[17].features);
  DatasetHandle d3 = synth_blobs(300, 10, 8, 0.3, 43, 60);
  CHECK(d.train[17].features != d3.train[17].features);
}

TEST_CASE("dataset spec strings") {
  DatasetHandle d = load_dataset("two-level:12,0,2");
  CHECK(d.train.size() == 12);
  DatasetHandle b = load_dataset("blobs:100,4,6,0.5,7");
  CHECK(b.train.size() == 100);
  CHECK(b.num_classes == 4);
  CHECK_THROWS_AS(load_dataset("two-level:12"), ConfigError);
  CHECK_THROWS_AS(load_dataset("nope:1,2"), ConfigError);
  CHECK_THROWS_AS(load_dataset("plain"), ConfigError);
}

TEST_CASE("evaluate: classifier error rate and regression loss") {
  SoftmaxRegressionModel model(2, 2);
  // strongly separating weights along feature 0
  ParamVector x{5.0, 0.0, -5.0, 0.0, 0.0, 0.0};
  std::vector<Sample> samples;
  Sample a;
  a.features = {1.0, 0.0};
  a.label = 0;
  Sample b;
  b.features = {-1.0, 0.0};
  b.label = 1;
  Sample c;
  c.features = {1.0, 0.0};
  c.label = 1;  // will be misclassified
  samples = {a, b, c};
  EvalResult r = evaluate(model, x, samples);
  CHECK(r.error == doctest::Approx(1.0 / 3).epsilon(1e-12));

  ConstantFitModel reg;
  Sample t;
  t.target = 3.0;
  EvalResult rr = evaluate(reg, {1.0}, {t});
  CHECK(rr.loss == doctest::Approx(2.0));
  CHECK(rr.error == rr.loss);
}
