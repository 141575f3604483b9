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

#include "acanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace acanet {

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("cosine_score: vector lengths " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()) + " differ or are zero");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::runtime_error("cosine_score: zero-norm vector (embedding has no direction)");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

void check_scoreset(const ScoreSet& s) {
  if (s.scores.size() != s.targets.size()) {
    throw std::invalid_argument("ScoreSet: scores and targets lengths differ");
  }
  std::size_t n_target = 0;
  for (bool t : s.targets) n_target += t ? 1 : 0;
  if (n_target == 0 || n_target == s.targets.size()) {
    throw std::invalid_argument(
        "ScoreSet: need at least one target and one non-target trial");
  }
  for (double v : s.scores) {
    if (!std::isfinite(v)) throw std::invalid_argument("ScoreSet: non-finite score");
  }
}

// Candidate thresholds per the shared sweep convention.
std::vector<double> candidate_thresholds(const std::vector<double>& scores) {
  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> thr;
  thr.reserve(distinct.size() + 1);
  thr.push_back(distinct.front() - 1.0);
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    thr.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }
  thr.push_back(distinct.back() + 1.0);
  return thr;
}

}  // namespace

std::vector<OperatingPoint> det_points(const ScoreSet& s) {
  check_scoreset(s);
  const std::size_t n = s.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  std::size_t n_target = 0;
  for (bool t : s.targets) n_target += t ? 1 : 0;
  const std::size_t n_nontarget = n - n_target;

  const std::vector<double> thr = candidate_thresholds(s.scores);
  std::vector<OperatingPoint> points;
  points.reserve(thr.size());
  // Sweep thresholds in ascending order, advancing over the sorted scores:
  // targets below t are misses, non-targets at or above t are false accepts.
  std::size_t idx = 0, miss = 0, fa_removed = 0;
  for (double t : thr) {
    while (idx < n && s.scores[order[idx]] < t) {
      if (s.targets[order[idx]]) {
        ++miss;
      } else {
        ++fa_removed;
      }
      ++idx;
    }
    OperatingPoint p;
    p.threshold = t;
    p.miss_rate = static_cast<double>(miss) / static_cast<double>(n_target);
    p.fa_rate = static_cast<double>(n_nontarget - fa_removed) / static_cast<double>(n_nontarget);
    points.push_back(p);
  }
  return points;
}

EerResult compute_eer(const ScoreSet& s) {
  const std::vector<OperatingPoint> pts = det_points(s);
  // diff = miss - fa goes from -1 (accept everything) to +1 (reject
  // everything); find the sign change and intersect the two segments.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double diff = pts[i].miss_rate - pts[i].fa_rate;
    if (diff < 0.0) continue;
    if (diff == 0.0 || i == 0) {
      return {pts[i].fa_rate, pts[i].threshold};
    }
    const OperatingPoint& lo = pts[i - 1];
    const OperatingPoint& hi = pts[i];
    const double d0 = lo.fa_rate - lo.miss_rate;  // > 0
    const double d1 = hi.miss_rate - hi.fa_rate;  // > 0
    const double lambda = d0 / (d0 + d1);
    const double eer = lo.fa_rate + lambda * (hi.fa_rate - lo.fa_rate);
    const double threshold = lo.threshold + lambda * (hi.threshold - lo.threshold);
    return {eer, threshold};
  }
  throw std::logic_error("compute_eer: no crossing found");
}

DcfResult compute_min_dcf(const ScoreSet& s, const DcfParams& p) {
  if (p.p_target <= 0.0 || p.p_target >= 1.0) {
    throw std::invalid_argument("compute_min_dcf: p_target must be in (0, 1)");
  }
  const std::vector<OperatingPoint> pts = det_points(s);
  double best = std::numeric_limits<double>::infinity();
  double best_thr = 0.0;
  for (const OperatingPoint& op : pts) {
    const double dcf = p.c_miss * p.p_target * op.miss_rate +
                       p.c_fa * (1.0 - p.p_target) * op.fa_rate;
    if (dcf < best) {
      best = dcf;
      best_thr = op.threshold;
    }
  }
  if (p.normalize) {
    best /= std::min(p.c_miss * p.p_target, p.c_fa * (1.0 - p.p_target));
  }
  return {best, best_thr};
}

EvalReport evaluate(const TrialList& trials,
                    const std::map<std::string, std::vector<double>>& embeddings_by_id,
                    const DcfParams& dcf) {
  if (trials.empty()) throw std::invalid_argument("evaluate: empty trial list");
  std::vector<std::string> missing;
  for (const Trial& t : trials) {
    for (const std::string& id : {t.enrol_id, t.test_id}) {
      if (embeddings_by_id.find(id) == embeddings_by_id.end()) missing.push_back(id);
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string list;
    for (const std::string& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw std::runtime_error("evaluate: missing embeddings for " +
                             std::to_string(missing.size()) + " utterance id(s): " + list);
  }
  ScoreSet scores;
  for (const Trial& t : trials) {
    const auto& a = embeddings_by_id.at(t.enrol_id);
    const auto& b = embeddings_by_id.at(t.test_id);
    scores.add(cosine_score(a, b), t.target);
  }
  EvalReport report;
  const EerResult eer = compute_eer(scores);
  const DcfResult mdcf = compute_min_dcf(scores, dcf);
  report.eer = eer.eer;
  report.eer_threshold = eer.threshold;
  report.min_dcf = mdcf.min_dcf;
  report.min_dcf_threshold = mdcf.threshold;
  report.n_trials = trials.size();
  for (const Trial& t : trials) report.n_target += t.target ? 1 : 0;
  report.n_nontarget = report.n_trials - report.n_target;
  report.det = det_points(scores);
  return report;
}

TrialList load_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trials: cannot open " + path.string());
  TrialList trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string label, enrol, test;
    if (!(ss >> label >> enrol >> test) || (label != "0" && label != "1")) {
      throw std::runtime_error("load_trials: " + path.string() + ":" + std::to_string(line_no) +
                               ": expected '<0|1> <enrol_id> <test_id>', got '" + line + "'");
    }
    trials.push_back(Trial{enrol, test, label == "1"});
  }
  return trials;
}

void save_trials(const std::filesystem::path& path, const TrialList& trials) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trials: cannot open " + path.string());
  for (const Trial& t : trials) {
    out << (t.target ? 1 : 0) << ' ' << t.enrol_id << ' ' << t.test_id << '\n';
  }
  if (!out) throw std::runtime_error("save_trials: failed writing " + path.string());
}

void save_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json j;
  j["eer"] = report.eer;
  j["eer_threshold"] = report.eer_threshold;
  j["min_dcf"] = report.min_dcf;
  j["min_dcf_threshold"] = report.min_dcf_threshold;
  j["n_trials"] = report.n_trials;
  j["n_target"] = report.n_target;
  j["n_nontarget"] = report.n_nontarget;
  nlohmann::json det = nlohmann::json::array();
  for (const OperatingPoint& p : report.det) {
    det.push_back({{"threshold", p.threshold}, {"fa_rate", p.fa_rate}, {"miss_rate", p.miss_rate}});
  }
  j["det_points"] = det;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report_json: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace acanet
