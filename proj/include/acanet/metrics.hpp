// Copyright (c) 2026 ACA-Net C++ contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ACANET_METRICS_HPP
#define ACANET_METRICS_HPP

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace acanet {

struct Trial {
  std::string enrol_id;
  std::string test_id;
  bool target = false;
};
using TrialList = std::vector<Trial>;

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> targets;

  void add(double score, bool target) {
    scores.push_back(score);
    targets.push_back(target);
  }
  std::size_t size() const { return scores.size(); }
};

// dot(a, b) / (|a| |b|). Zero-norm inputs are an error: an all-zero
// embedding carries no direction to compare.
double cosine_score(std::span<const double> a, std::span<const double> b);

// Threshold sweep conventions shared by both metrics (and by the brute
// force oracles in the tests): decisions are "accept if score >= t",
// candidate thresholds lie strictly between adjacent distinct scores
// (midpoints) plus one below the minimum and one above the maximum.
struct OperatingPoint {
  double threshold = 0.0;
  double fa_rate = 0.0;    // accepted non-targets / non-targets
  double miss_rate = 0.0;  // rejected targets / targets
};

std::vector<OperatingPoint> det_points(const ScoreSet& s);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate with linear interpolation between the two operating
// points that straddle the fa == miss crossing.
EerResult compute_eer(const ScoreSet& s);

struct DcfParams {
  double p_target = 0.01;
  double c_fa = 1.0;
  double c_miss = 1.0;
  // Divide by min(c_miss * p_target, c_fa * (1 - p_target)) so that a
  // system no better than always-accept/always-reject scores 1.0.
  bool normalize = true;
};

struct DcfResult {
  double min_dcf = 0.0;
  double threshold = 0.0;
};

DcfResult compute_min_dcf(const ScoreSet& s, const DcfParams& p = {});

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double min_dcf = 0.0;
  double min_dcf_threshold = 0.0;
  std::size_t n_trials = 0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
  std::vector<OperatingPoint> det;
};

// Scores every trial by cosine over the given embeddings and computes both
// metrics. Unresolvable utterance ids are collected and reported together.
EvalReport evaluate(const TrialList& trials,
                    const std::map<std::string, std::vector<double>>& embeddings_by_id,
                    const DcfParams& dcf = {});

// Trial list file: one `<label 0|1> <enrol_id> <test_id>` per line.
TrialList load_trials(const std::filesystem::path& path);
void save_trials(const std::filesystem::path& path, const TrialList& trials);

void save_report_json(const std::filesystem::path& path, const EvalReport& report);

}  // namespace acanet

#endif  // ACANET_METRICS_HPP
