#pragma once

// Stratified dataset splitting, accuracy / confusion-matrix metrics and the
// three-split cross-validation protocol.

#include <array>
#include <cmath>
#include <ostream>
#include <vector>

#include "crimemap/common.hpp"
#include "crimemap/net.hpp"

namespace crimemap {

struct SplitSpec {
  double test_fraction = 0.05;
  int repeats = 3;
  uint64_t seed = 0;

  void validate() const {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw ConfigError("test_fraction must be in (0, 1)");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
  }
};

struct SplitPair {
  std::vector<size_t> train;  // indices into the manifest/dataset
  std::vector<size_t> test;
};

// Seeded stratified splits: per repeat and per label, a shuffled class is cut
// so the test share is within one example of test_fraction. Train and test
// partition the input exactly.
inline std::vector<SplitPair> split(const std::vector<int>& labels, const SplitSpec& spec,
                                    int num_classes = 3) {
  spec.validate();
  if (labels.size() < 20) throw DegenerateInputError("split: need at least 20 examples");
  std::vector<std::vector<size_t>> by_class(num_classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ShapeError("split: label out of range");
    by_class[labels[i]].push_back(i);
  }
  std::vector<SplitPair> out;
  for (int rep = 0; rep < spec.repeats; ++rep) {
    SplitPair pair;
    for (int k = 0; k < num_classes; ++k) {
      if (by_class[k].empty()) continue;
      size_t n = by_class[k].size();
      size_t test_n = static_cast<size_t>(std::lround(spec.test_fraction * static_cast<double>(n)));
      if (test_n == 0 || test_n >= n)
        throw DegenerateInputError("split: class " + std::to_string(k) +
                                   " too small to stratify at fraction " +
                                   std::to_string(spec.test_fraction));
      auto cls = by_class[k];
      Rng rng = make_rng(spec.seed, 0x5e17ull + rep * 131 + k);
      shuffle_inplace(cls, rng);
      pair.test.insert(pair.test.end(), cls.begin(), cls.begin() + test_n);
      pair.train.insert(pair.train.end(), cls.begin() + test_n, cls.end());
    }
    std::sort(pair.train.begin(), pair.train.end());
    std::sort(pair.test.begin(), pair.test.end());
    out.push_back(std::move(pair));
  }
  return out;
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.size() != truths.size())
    throw ShapeError("accuracy: prediction/truth length mismatch");
  if (predictions.empty()) throw DegenerateInputError("accuracy: empty input");
  size_t correct = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++correct;
  return static_cast<double>(correct) / predictions.size();
}

using Confusion = std::array<std::array<size_t, 3>, 3>;  // [truth][prediction]

inline Confusion confusion(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.size() != truths.size())
    throw ShapeError("confusion: prediction/truth length mismatch");
  Confusion m{};
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (truths[i] < 0 || truths[i] > 2 || predictions[i] < 0 || predictions[i] > 2)
      throw ShapeError("confusion: label out of range");
    m[truths[i]][predictions[i]]++;
  }
  return m;
}

struct EvalReport {
  std::vector<double> split_accuracies;
  double mean_accuracy = 0.0;
  Confusion confusion_total{};  // summed over splits
};

inline void print_report(std::ostream& out, const EvalReport& r) {
  out << "splits: " << r.split_accuracies.size() << "\n";
  for (size_t i = 0; i < r.split_accuracies.size(); ++i)
    out << "split " << i << " accuracy: " << r.split_accuracies[i] << "\n";
  out << "mean accuracy: " << r.mean_accuracy << "\n";
  out << "confusion (rows = truth Low/Neutral/High, cols = prediction):\n";
  for (int i = 0; i < 3; ++i)
    out << "  " << r.confusion_total[i][0] << "\t" << r.confusion_total[i][1] << "\t"
        << r.confusion_total[i][2] << "\n";
}

// Trains a fresh model per split (seed derived from spec.seed and the split
// index), evaluates on the held-out side, and aggregates.
inline EvalReport cross_validate(const Dataset& data, const ArchSpec& arch, const SplitSpec& spec,
                                 TrainConfig train_cfg) {
  auto splits = split(data.labels, spec, arch.num_classes());
  EvalReport report;
  for (size_t s = 0; s < splits.size(); ++s) {
    Dataset train_set;
    train_set.input_shape = data.input_shape;
    for (size_t i : splits[s].train) {
      train_set.inputs.push_back(data.inputs[i]);
      train_set.labels.push_back(data.labels[i]);
    }
    TrainConfig cfg = train_cfg;
    cfg.seed = spec.seed * 1000003ull + s;
    ModelParams init = init_params(arch, cfg.seed);
    TrainResult trained;
    try {
      trained = train(init, train_set, cfg);
    } catch (const std::exception& e) {
      throw NumericError("cross_validate: split " + std::to_string(s) + ": " + e.what());
    }

    Network<float> net(trained.params);
    auto ws = net.make_workspace();
    std::vector<int> preds, truths;
    for (size_t i : splits[s].test) {
      preds.push_back(net.predict(data.inputs[i], ws));
      truths.push_back(data.labels[i]);
    }
    report.split_accuracies.push_back(accuracy(preds, truths));
    Confusion m = confusion(preds, truths);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) report.confusion_total[i][j] += m[i][j];
  }
  double sum = 0.0;
  for (double a : report.split_accuracies) sum += a;
  report.mean_accuracy = sum / report.split_accuracies.size();
  return report;
}

}  // namespace crimemap
