#include "experiments/results.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "common/error.hpp"
#include "experiments/stats.hpp"

namespace infusion::experiments {

using nlohmann::json;

namespace {

int argmax(const std::vector<double>& p) {
  if (p.empty()) return -1;
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double at_or_zero(const std::vector<double>& p, int i) {
  return i >= 0 && static_cast<std::size_t>(i) < p.size() ? p[static_cast<std::size_t>(i)] : 0.0;
}

}  // namespace

void derive_metrics(ExperimentResult& r) {
  require(r.before.size() == r.after.size(), ErrorCode::shape, "before/after probability vectors differ in length");
  r.dp_target = at_or_zero(r.after, r.target_index) - at_or_zero(r.before, r.target_index);
  r.dp_true = at_or_zero(r.after, r.true_index) - at_or_zero(r.before, r.true_index);
  r.log_odds_shift = r.target_index >= 0 ? log_odds_shift(at_or_zero(r.before, r.target_index),
                                                          at_or_zero(r.after, r.target_index))
                                         : 0.0;
  r.top1_before = argmax(r.before);
  r.top1_after = argmax(r.after);
}

void check_consistency(const ExperimentResult& r) {
  if (!r.ok) return;
  auto bad = [&](const std::string& what) { fail(ErrorCode::format, "result " + r.experiment_id + ": " + what); };
  if (r.before.size() != r.after.size()) bad("before/after probability vectors differ in length");
  for (const auto* v : {&r.before, &r.after}) {
    if (v->empty()) continue;
    const double s = std::accumulate(v->begin(), v->end(), 0.0);
    if (std::abs(s - 1.0) > 1e-6) bad("probability vector sums to " + std::to_string(s));
    for (double x : *v)
      if (!(x >= 0.0)) bad("negative or non-finite probability");
  }
  ExperimentResult d = r;
  derive_metrics(d);
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
  if (!close(d.dp_target, r.dp_target)) bad("dp_target does not match the probability vectors");
  if (!close(d.dp_true, r.dp_true)) bad("dp_true does not match the probability vectors");
  if (!close(d.log_odds_shift, r.log_odds_shift)) bad("log_odds_shift does not match the probability vectors");
  if (d.top1_before != r.top1_before || d.top1_after != r.top1_after) bad("top-1 fields do not match");
}

double one_vs_rest(const ExperimentResult& r) {
  if (r.before.size() < 2 || r.target_index < 0) return r.dp_target;
  double rest = 0.0;
  for (std::size_t c = 0; c < r.before.size(); ++c)
    if (static_cast<int>(c) != r.target_index) rest += r.after[c] - r.before[c];
  return r.dp_target - rest / static_cast<double>(r.before.size() - 1);
}

json to_json(const ExperimentResult& r) {
  return {{"experiment_id", r.experiment_id},
          {"kind", r.kind},
          {"method", r.method},
          {"strategy", r.strategy},
          {"group", r.group},
          {"config_hash", r.config_hash},
          {"probe", r.probe},
          {"target", r.target},
          {"true_index", r.true_index},
          {"target_index", r.target_index},
          {"before", r.before},
          {"after", r.after},
          {"dp_target", r.dp_target},
          {"dp_true", r.dp_true},
          {"log_odds_shift", r.log_odds_shift},
          {"top1_before", r.top1_before},
          {"top1_after", r.top1_after},
          {"predicted_df", r.predicted_df},
          {"actual_df", r.actual_df},
          {"seconds", r.seconds},
          {"ok", r.ok},
          {"error", r.error},
          {"extra", r.extra}};
}

ExperimentResult result_from_json(const json& j) {
  ExperimentResult r;
  try {
    r.experiment_id = j.at("experiment_id").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.group = j.value("group", "");
    r.config_hash = j.value("config_hash", "");
    r.probe = j.value("probe", json::object());
    r.target = j.value("target", json::object());
    r.true_index = j.at("true_index").get<int>();
    r.target_index = j.at("target_index").get<int>();
    r.before = j.at("before").get<std::vector<double>>();
    r.after = j.at("after").get<std::vector<double>>();
    r.dp_target = j.at("dp_target").get<double>();
    r.dp_true = j.at("dp_true").get<double>();
    r.log_odds_shift = j.at("log_odds_shift").get<double>();
    r.top1_before = j.at("top1_before").get<int>();
    r.top1_after = j.at("top1_after").get<int>();
    r.predicted_df = j.at("predicted_df").get<double>();
    r.actual_df = j.at("actual_df").get<double>();
    r.seconds = j.value("seconds", 0.0);
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", "");
    r.extra = j.value("extra", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("malformed experiment record: ") + e.what());
  }
  return r;
}

void append_result(const std::filesystem::path& store, const ExperimentResult& r) {
  check_consistency(r);
  if (store.has_parent_path()) std::filesystem::create_directories(store.parent_path());
  std::ofstream out(store, std::ios::app);
  require(out.good(), ErrorCode::io, "cannot append to " + store.string());
  out << to_json(r).dump() << '\n';
}

std::vector<ExperimentResult> load_results(const std::filesystem::path& store) {
  std::vector<ExperimentResult> out;
  std::ifstream in(store);
  if (!in.good()) return out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    try {
      out.push_back(result_from_json(json::parse(line)));
      check_consistency(out.back());
    } catch (const json::exception& e) {
      fail(ErrorCode::format, store.string() + ":" + std::to_string(no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.code(), store.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<ExperimentResult>& results) {
  std::vector<SummaryRow> rows;
  std::map<std::string, std::vector<const ExperimentResult*>> groups;
  for (const auto& r : results) {
    const std::string key = r.kind + '\x1f' + r.method + '\x1f' + r.strategy + '\x1f' + r.group;
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) {
      SummaryRow row;
      row.kind = r.kind;
      row.method = r.method;
      row.strategy = r.strategy;
      row.group = r.group;
      rows.push_back(row);
    }
    it->second.push_back(&r);
  }
  for (auto& row : rows) {
    const auto& rs = groups.at(row.kind + '\x1f' + row.method + '\x1f' + row.strategy + '\x1f' + row.group);
    std::vector<double> dp, dtrue, ovr, lo, pred, act;
    std::size_t pos = 0, tb = 0, ta = 0;
    for (const auto* r : rs) {
      if (!r->ok) {
        ++row.failed;
        continue;
      }
      dp.push_back(r->dp_target);
      dtrue.push_back(r->dp_true);
      ovr.push_back(one_vs_rest(*r));
      lo.push_back(r->log_odds_shift);
      pred.push_back(r->predicted_df);
      act.push_back(r->actual_df);
      pos += r->dp_target > 0.0;
      const bool before_hit = r->top1_before == r->target_index, after_hit = r->top1_after == r->target_index;
      tb += before_hit;
      ta += after_hit;
      row.flips += !before_hit && after_hit;
      row.degradations += before_hit && !after_hit;
    }
    row.n = dp.size();
    if (row.n == 0) continue;
    const double n = static_cast<double>(row.n);
    row.mean_dp_target = mean(dp);
    row.mean_dp_true = mean(dtrue);
    row.mean_one_vs_rest = mean(ovr);
    row.mean_log_odds = mean(lo);
    row.mean_predicted_df = mean(pred);
    row.mean_actual_df = mean(act);
    row.positive_rate = static_cast<double>(pos) / n;
    row.top1_target_before = static_cast<double>(tb) / n;
    row.top1_target_after = static_cast<double>(ta) / n;
    row.chi2 = flip_chi2(row.flips, row.degradations);
    row.wilcoxon_p = wilcoxon_signed_rank(dp).p;
    if (row.n >= 2) {
      row.sd_dp_target = stddev(dp);
      auto d = cohens_d(dp);
      row.cohens_d = d.d;
      row.d_degenerate = d.degenerate;
    }
  }
  return rows;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << "kind,method,strategy,group,n,failed,mean_dp_target,sd_dp_target,mean_dp_true,mean_one_vs_rest,cohens_d,"
         "mean_log_odds,positive_rate,top1_target_before,top1_target_after,flips,degradations,chi2,wilcoxon_p,"
         "mean_predicted_df,mean_actual_df\n"
      << std::setprecision(10);
  for (const auto& r : rows)
    out << r.kind << ',' << r.method << ',' << r.strategy << ',' << r.group << ',' << r.n << ',' << r.failed << ','
        << r.mean_dp_target << ',' << r.sd_dp_target << ',' << r.mean_dp_true << ',' << r.mean_one_vs_rest << ','
        << (r.d_degenerate ? std::string("nan") : (std::ostringstream() << std::setprecision(10) << r.cohens_d).str())
        << ',' << r.mean_log_odds << ',' << r.positive_rate << ',' << r.top1_target_before << ','
        << r.top1_target_after << ',' << r.flips << ',' << r.degradations << ',' << r.chi2 << ',' << r.wilcoxon_p
        << ',' << r.mean_predicted_df << ',' << r.mean_actual_df << '\n';
}

json figure_report(const std::vector<ExperimentResult>& results) {
  json summary = json::array();
  for (const auto& r : summarize(results))
    summary.push_back({{"kind", r.kind},
                       {"method", r.method},
                       {"strategy", r.strategy},
                       {"group", r.group},
                       {"n", r.n},
                       {"failed", r.failed},
                       {"mean_dp_target", r.mean_dp_target},
                       {"sd_dp_target", r.sd_dp_target},
                       {"mean_one_vs_rest", r.mean_one_vs_rest},
                       {"cohens_d", r.d_degenerate ? json(nullptr) : json(r.cohens_d)},
                       {"mean_log_odds", r.mean_log_odds},
                       {"positive_rate", r.positive_rate},
                       {"top1_target_before", r.top1_target_before},
                       {"top1_target_after", r.top1_target_after},
                       {"chi2", r.chi2},
                       {"wilcoxon_p", r.wilcoxon_p}});

  // per-arm delta lists (box plots) and (true, target) grids (heat maps)
  std::map<std::string, json> arms;
  std::map<std::string, std::map<std::pair<int, int>, std::pair<double, int>>> cells;
  std::map<std::string, std::size_t> width;
  for (const auto& r : results) {
    if (!r.ok) continue;
    const std::string key = r.kind + "/" + r.method + "/" + r.strategy + (r.group.empty() ? "" : "/" + r.group);
    auto& a = arms[key];
    if (a.is_null()) a = {{"kind", r.kind}, {"method", r.method}, {"strategy", r.strategy}, {"group", r.group},
                          {"dp_target", json::array()}, {"predicted_df", json::array()}, {"actual_df", json::array()}};
    a["dp_target"].push_back(r.dp_target);
    a["predicted_df"].push_back(r.predicted_df);
    a["actual_df"].push_back(r.actual_df);
    if (r.true_index >= 0 && r.target_index >= 0) {
      auto& c = cells[key][{r.true_index, r.target_index}];
      c.first += r.dp_target;
      c.second += 1;
      width[key] = std::max(width[key], r.before.size());
    }
  }
  json arm_list = json::array(), grids = json::array();
  for (auto& [k, a] : arms) arm_list.push_back(a);
  for (auto& [k, m] : cells) {
    const std::size_t n = width[k];
    json mean = json::array(), count = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      json mr = json::array(), cr = json::array();
      for (std::size_t j = 0; j < n; ++j) {
        auto it = m.find({static_cast<int>(i), static_cast<int>(j)});
        mr.push_back(it == m.end() ? json(nullptr) : json(it->second.first / it->second.second));
        cr.push_back(it == m.end() ? 0 : it->second.second);
      }
      mean.push_back(mr);
      count.push_back(cr);
    }
    grids.push_back({{"arm", k}, {"rows", "true class"}, {"cols", "target class"}, {"mean_dp_target", mean},
                     {"count", count}});
  }
  return {{"summary", summary}, {"arms", arm_list}, {"heatmaps", grids}};
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

}  // namespace infusion::experiments
