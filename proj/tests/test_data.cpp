// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "desmp/data/dataset.hpp"
#include "desmp/data/mnist.hpp"
#include "desmp/data/partition.hpp"
#include "desmp/data/power.hpp"
#include "desmp/data/synthetic.hpp"

using namespace desmp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("desmp_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels, std::uint32_t magic = 2051) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, count);
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels, std::uint32_t magic = 2049) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

/// Residual MSE of the least-squares fit of y on [X, 1].
double ols_residual_mse(const data::Dataset& d) {
  Eigen::MatrixXd X(d.size(), d.dim() + 1);
  Eigen::VectorXd y(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) X(i, j) = d.features(i, j);
    X(i, d.dim()) = 1.0;
    y(i) = d.values[i];
  }
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  return (X * beta - y).squaredNorm() / static_cast<double>(d.size());
}

}  // namespace

TEST(Mnist, FixtureRoundTrip) {
  const auto dir = temp_dir("mnist_fixture");
  const std::vector<unsigned char> pixels{0, 255, 128, 7, 1, 2, 3, 4};
  write_bytes(dir / "img", idx_images(2, 2, 2, pixels));
  write_bytes(dir / "lab", idx_labels({3, 9}));
  const auto d = data::load_mnist((dir / "img").string(), (dir / "lab").string());
  ASSERT_EQ(d.size(), 2u);
  ASSERT_EQ(d.dim(), 4u);
  for (std::size_t i = 0; i < pixels.size(); ++i) EXPECT_DOUBLE_EQ(d.features.data[i], pixels[i] / 255.0);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(d.classes, 10u);
}

TEST(Mnist, FormatErrors) {
  const auto dir = temp_dir("mnist_errors");
  write_bytes(dir / "empty", {});
  write_bytes(dir / "lab", idx_labels({1}));
  EXPECT_THROW(data::load_mnist((dir / "empty").string(), (dir / "lab").string()), FormatError);

  write_bytes(dir / "badmagic", idx_images(1, 1, 1, {0}, 2049));
  try {
    data::load_mnist((dir / "badmagic").string(), (dir / "lab").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.position(), 0u);
  }

  write_bytes(dir / "short", idx_images(2, 2, 2, {1, 2, 3}));
  try {
    data::load_mnist((dir / "short").string(), (dir / "lab").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_GT(e.position(), 0u);
  }

  write_bytes(dir / "one", idx_images(1, 1, 1, {5}));
  write_bytes(dir / "two_labels", idx_labels({1, 2}));
  EXPECT_THROW(data::load_mnist((dir / "one").string(), (dir / "two_labels").string()), FormatError);
  write_bytes(dir / "bad_label", idx_labels({10}));
  EXPECT_THROW(data::load_mnist((dir / "one").string(), (dir / "bad_label").string()), FormatError);
  EXPECT_THROW(data::load_mnist((dir / "missing").string(), (dir / "lab").string()), Error);
}

TEST(Mnist, BundledSubset) {
  const fs::path dir = fs::path(DESMP_TEST_DATA) / "mnist5k";
  const auto test = data::load_mnist((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
  EXPECT_EQ(test.size(), 1000u);
  EXPECT_EQ(test.dim(), 784u);
  for (int y : test.labels) {
    EXPECT_GE(y, 0);
    EXPECT_LE(y, 9);
  }
  for (double v : test.features.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  // Pure loader: same bytes, same dataset.
  const auto again = data::load_mnist((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
  EXPECT_EQ(test.features, again.features);
  EXPECT_EQ(test.labels, again.labels);
}

TEST(Power, DropsMissingRows) {
  const auto dir = temp_dir("power");
  write_text(dir / "p.txt",
             "Date;Time;Global_active_power;Global_reactive_power;Voltage\n"
             "16/12/2006;17:24:00;4.216;0.418;234.840\n"
             "16/12/2006;17:25:00;?;?;?\n"
             "16/12/2006;17:26:00;5.360;0.436;233.630\n");
  const auto p = data::load_power_csv((dir / "p.txt").string());
  EXPECT_EQ(p.dataset.size(), 2u);
  EXPECT_EQ(p.dropped_rows, 1u);
  EXPECT_EQ(p.dataset.dim(), 2u);
  EXPECT_EQ(p.dataset.values, (std::vector<double>{4.216, 5.360}));
  EXPECT_EQ(p.feature_names, (std::vector<std::string>{"Global_reactive_power", "Voltage"}));
}

TEST(Power, AllMissingIsAnError) {
  const auto dir = temp_dir("power_missing");
  write_text(dir / "p.txt", "Date;Time;Global_active_power;Voltage\n1;2;?;?\n3;4;?;1\n");
  EXPECT_THROW(data::load_power_csv((dir / "p.txt").string()), Error);
}

TEST(Power, BadNumberReportsLine) {
  const auto dir = temp_dir("power_bad");
  write_text(dir / "p.txt", "Date;Time;Global_active_power;Voltage\n1;2;1.0;2.0\n1;2;abc;2.0\n");
  try {
    data::load_power_csv((dir / "p.txt").string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.position(), 3u);
  }
  write_text(dir / "q.txt", "Date;Time;Voltage\n1;2;3\n");
  EXPECT_THROW(data::load_power_csv((dir / "q.txt").string()), Error);
}

TEST(Power, ZScoredMomentsRecomputed) {
  const auto dir = temp_dir("power_moments");
  auto rng = Stream::derive(21, Purpose::dataset);
  std::string text = "Date;Time;Global_active_power;A;B;C\n";
  for (int i = 0; i < 257; ++i) {
    char line[160];
    std::snprintf(line, sizeof line, "d;t;%.6f;%.6f;%.6f;%.6f\n", rng.uniform() * 5, 230 + rng.normal() * 3,
                  rng.uniform() * 0.01, 1e4 + rng.normal() * 50);
    text += line;
  }
  write_text(dir / "p.txt", text);
  const auto p = data::load_power_csv((dir / "p.txt").string());
  const auto& f = p.dataset.features;
  for (std::size_t j = 0; j < f.cols; ++j) {
    long double mean = 0, var = 0;
    for (std::size_t i = 0; i < f.rows; ++i) mean += f(i, j);
    mean /= f.rows;
    for (std::size_t i = 0; i < f.rows; ++i) var += (f(i, j) - mean) * (f(i, j) - mean);
    var /= f.rows;
    EXPECT_NEAR(static_cast<double>(mean), 0.0, 1e-9);
    EXPECT_NEAR(static_cast<double>(var), 1.0, 1e-9);
  }
}

TEST(Partition, SingleClientOwnsEverything) {
  std::vector<int> labels{0, 1, 1, 0, 2};
  auto rng = Stream::derive(1, Purpose::partition);
  const auto p = data::partition_noniid(5, labels, 1, 2, rng);
  ASSERT_EQ(p.clients(), 1u);
  EXPECT_EQ(p.assignment[0], (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Partition, TwoClientsOneShardEach) {
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i < 25 ? 0 : 1);
  auto rng = Stream::derive(2, Purpose::partition);
  const auto p = data::partition_noniid(labels.size(), labels, 2, 1, rng);
  for (const auto& a : p.assignment) {
    std::set<int> seen;
    for (auto i : a) seen.insert(labels[i]);
    EXPECT_LE(seen.size(), 2u);
    EXPECT_EQ(seen.size(), 1u);
  }
}

TEST(Partition, TooManyClientsRejected) {
  std::vector<int> labels{0, 1};
  auto rng = Stream::derive(1, Purpose::partition);
  EXPECT_THROW(data::partition_noniid(2, labels, 3, 1, rng), DomainError);
}

TEST(Partition, ExactDisjointCoverAndDeterminism) {
  auto d = data::synth_classification(1003, 2, 7, 3.0, 5);
  for (std::size_t clients : {1u, 7u, 30u, 100u}) {
    for (std::size_t spc : {1u, 2u, 3u}) {
      auto r1 = Stream::derive(9, Purpose::partition);
      auto r2 = Stream::derive(9, Purpose::partition);
      const auto p = data::partition_noniid(d.size(), d.labels, clients, spc, r1);
      EXPECT_EQ(p.assignment, data::partition_noniid(d.size(), d.labels, clients, spc, r2).assignment);
      std::vector<int> seen(d.size(), 0);
      for (const auto& a : p.assignment) {
        EXPECT_FALSE(a.empty());
        for (auto i : a) ++seen[i];
      }
      EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    }
  }
}

TEST(Partition, MnistSubsetIsLabelSkewed) {
  const fs::path dir = fs::path(DESMP_TEST_DATA) / "mnist5k";
  const auto train =
      data::load_mnist((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
  auto rng = Stream::derive(1, Purpose::partition);
  const auto p = data::partition_noniid(train.size(), train.labels, 100, 2, rng);
  // Recount distinct labels per client and take the median.
  std::vector<std::size_t> distinct;
  for (const auto& a : p.assignment) {
    std::set<int> s;
    for (auto i : a) s.insert(train.labels[i]);
    distinct.push_back(s.size());
  }
  std::sort(distinct.begin(), distinct.end());
  EXPECT_LE((distinct[49] + distinct[50]) / 2.0, 4.0);

  auto rng_iid = Stream::derive(1, Purpose::partition);
  const auto iid = data::partition_iid(train.size(), 100, rng_iid);
  EXPECT_GT(data::label_skew(p, train.labels, 10), data::label_skew(iid, train.labels, 10));
}

TEST(Synthetic, SingleClassLabelsIdentical) {
  const auto d = data::synth_classification(50, 3, 1, 2.0, 1);
  for (int y : d.labels) EXPECT_EQ(y, 0);
}

TEST(Synthetic, LargeMarginNearestCentroidPerfect) {
  const auto d = data::synth_classification(2000, 5, 6, 100.0, 3);
  std::vector<double> centroid(6 * 5, 0.0);
  std::vector<int> count(6, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++count[d.labels[i]];
    for (std::size_t j = 0; j < 5; ++j) centroid[d.labels[i] * 5 + j] += d.features(i, j);
  }
  for (std::size_t c = 0; c < 6; ++c) {
    for (std::size_t j = 0; j < 5; ++j) centroid[c * 5 + j] /= count[c];
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 6; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += std::pow(d.features(i, j) - centroid[c * 5 + j], 2);
      if (s < best_d) best_d = s, best = c;
    }
    EXPECT_EQ(best, d.labels[i]);
  }
}

TEST(Synthetic, MarginSixIsNearlySeparable) {
  const auto d = data::synth_classification(5000, 20, 10, 6.0, 4);
  // Nearest class mean, estimated on the data itself.
  std::vector<double> centroid(10 * 20, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < 20; ++j) centroid[d.labels[i] * 20 + j] += d.features(i, j) / 500.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 10; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < 20; ++j) s += std::pow(d.features(i, j) - centroid[c * 20 + j], 2);
      if (s < best_d) best_d = s, best = c;
    }
    correct += best == d.labels[i];
  }
  EXPECT_GE(correct / 5000.0, 0.99);
}

TEST(Synthetic, DeterministicBytes) {
  const auto a = data::synth_classification(300, 4, 3, 2.0, 77);
  const auto b = data::synth_classification(300, 4, 3, 2.0, 77);
  ASSERT_EQ(a.features.data.size(), b.features.data.size());
  EXPECT_EQ(0, std::memcmp(a.features.data.data(), b.features.data.data(), a.features.data.size() * sizeof(double)));
  EXPECT_EQ(a.labels, b.labels);
  const auto r1 = data::synth_regression(300, 4, 0.3, 77);
  const auto r2 = data::synth_regression(300, 4, 0.3, 77);
  EXPECT_EQ(0, std::memcmp(r1.values.data(), r2.values.data(), r1.values.size() * sizeof(double)));
  EXPECT_EQ(r1.features, r2.features);
}

TEST(Synthetic, NoiselessRegressionIsExactlyLinear) {
  EXPECT_NEAR(ols_residual_mse(data::synth_regression(500, 7, 0.0, 5)), 0.0, 1e-9);
}

TEST(Synthetic, OlsResidualMatchesNoiseVariance) {
  const double sigma = 0.3;
  EXPECT_NEAR(ols_residual_mse(data::synth_regression(10000, 7, sigma, 6)), sigma * sigma, 0.1 * sigma * sigma);
}

TEST(Dataset, SplitIsDisjointAndSeeded) {
  const auto d = data::synth_regression(100, 2, 0.1, 1);
  auto r1 = Stream::derive(3, Purpose::dataset);
  auto r2 = Stream::derive(3, Purpose::dataset);
  const auto a = data::split(d, 0.25, r1);
  const auto b = data::split(d, 0.25, r2);
  EXPECT_EQ(a.train.size(), 75u);
  EXPECT_EQ(a.test.size(), 25u);
  EXPECT_EQ(a.test.values, b.test.values);
  std::multiset<double> all(d.values.begin(), d.values.end());
  std::multiset<double> parts(a.train.values.begin(), a.train.values.end());
  parts.insert(a.test.values.begin(), a.test.values.end());
  EXPECT_EQ(all, parts);
  EXPECT_THROW(data::split(d, 0.0, r1), DomainError);
}

TEST(Dataset, CsvExport) {
  const auto dir = temp_dir("csv");
  data::Dataset d;
  d.task = nn::Task::classification;
  d.classes = 2;
  d.features = nn::Matrix(2, 2, {0.5, 1.0, -2.0, 3.25});
  d.labels = {1, 0};
  data::write_csv(d, (dir / "d.csv").string());
  std::ifstream in(dir / "d.csv");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, "x0,x1,label\n0.5,1,1\n-2,3.25,0\n");
}
