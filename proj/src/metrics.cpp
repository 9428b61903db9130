#include "serprank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csv.hpp"
#include "serprank/error.hpp"

namespace serprank {

namespace {

double dcg(std::span<const int> grades, std::size_t k) {
  double s = 0.0;
  const std::size_t n = std::min(k, grades.size());
  for (std::size_t i = 0; i < n; ++i) {
    s += (std::exp2(grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  }
  return s;
}

}  // namespace

double ndcg_at_k(std::span<const int> ranked_grades, std::size_t k) {
  if (ranked_grades.empty()) throw EmptyList("NDCG of an empty list");
  if (k < 1) throw UsageError("NDCG cutoff must be >= 1");
  for (int g : ranked_grades) {
    if (g < 0 || g > 2) throw OutOfRange("grade " + std::to_string(g) + " outside {0,1,2}");
  }
  std::vector<int> ideal(ranked_grades.begin(), ranked_grades.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, k);
  if (idcg == 0.0) return 1.0;
  return dcg(ranked_grades, k) / idcg;
}

double combined_ndcg(double ndcg_less, double ndcg_full, double less_weight) {
  return less_weight * ndcg_less + (1.0 - less_weight) * ndcg_full;
}

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    carry_ += (sum_ - t) + x;
  } else {
    carry_ += (x - t) + sum_;
  }
  sum_ = t;
}

int QrelSet::grade(QueryId query, ItemId item) const {
  const auto it = queries.find(query);
  if (it == queries.end()) throw UnknownQuery("query " + std::to_string(query) + " not in qrels");
  const auto& q = it->second;
  const auto pos = std::find(q.items.begin(), q.items.end(), item);
  if (pos == q.items.end()) {
    throw UnknownItem("item " + std::to_string(item) + " not shown by query " +
                      std::to_string(query));
  }
  return q.grades[static_cast<std::size_t>(pos - q.items.begin())];
}

MetricReport evaluate_run(const Run& run, const QrelSet& qrels, std::size_t k,
                          double less_weight) {
  MetricReport report;
  report.k = k;
  for (const auto& [qid, ranked] : run) {
    const auto it = qrels.queries.find(qid);
    if (it == qrels.queries.end()) {
      throw UnknownQuery("run query " + std::to_string(qid) + " not in qrels");
    }
    const auto& q = it->second;
    std::vector<ItemId> a = ranked, b = q.items;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) {
      throw NotAPermutation("run list of query " + std::to_string(qid) +
                            " is not a permutation of its shown items");
    }
    std::vector<int> grades;
    grades.reserve(ranked.size());
    for (ItemId item : ranked) {
      const auto pos = std::find(q.items.begin(), q.items.end(), item);
      grades.push_back(q.grades[static_cast<std::size_t>(pos - q.items.begin())]);
    }
    report.per_query.push_back({qid, q.scenario, ndcg_at_k(grades, k)});
  }
  std::sort(report.per_query.begin(), report.per_query.end(),
            [](const QueryScore& x, const QueryScore& y) { return x.query_id < y.query_id; });
  for (std::size_t i = 1; i < report.per_query.size(); ++i) {
    if (report.per_query[i].query_id == report.per_query[i - 1].query_id) {
      throw DataError("query " + std::to_string(report.per_query[i].query_id) +
                      " appears twice in the run");
    }
  }
  CompensatedSum full, less;
  for (const auto& s : report.per_query) {
    if (s.scenario == Scenario::Full) {
      full.add(s.ndcg);
      ++report.queries_full;
    } else {
      less.add(s.ndcg);
      ++report.queries_less;
    }
  }
  if (report.queries_full > 0) {
    report.ndcg_full = full.value() / static_cast<double>(report.queries_full);
  }
  if (report.queries_less > 0) {
    report.ndcg_less = less.value() / static_cast<double>(report.queries_less);
  }
  report.ndcg_combined = combined_ndcg(report.ndcg_less, report.ndcg_full, less_weight);
  return report;
}

void write_run(const std::filesystem::path& path, const Run& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const auto& [qid, items] : run) out << qid << '\t' << csv::join_ints(items) << '\n';
  if (!out) throw UsageError("write failed: " + path.string());
}

Run read_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  Run run;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw MalformedRow(line_no, "expected query_id<TAB>items");
    const auto qid = csv::parse_int(std::string_view(line).substr(0, tab));
    const auto items = csv::parse_int_list(std::string_view(line).substr(tab + 1));
    if (!qid) throw MalformedRow(line_no, "query id is not an integer");
    if (!items) throw MalformedRow(line_no, "item list is not space-separated integers");
    run.emplace_back(*qid, *items);
  }
  return run;
}

void write_qrels(const std::filesystem::path& path, const QrelSet& qrels) {
  std::vector<QueryId> ids;
  for (const auto& [qid, q] : qrels.queries) ids.push_back(qid);
  std::sort(ids.begin(), ids.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << kQrelsHeader << '\n';
  for (QueryId qid : ids) {
    const auto& q = qrels.queries.at(qid);
    for (std::size_t i = 0; i < q.items.size(); ++i) {
      out << qid << ',' << to_string(q.scenario) << ',' << q.items[i] << ',' << q.grades[i]
          << '\n';
    }
  }
  if (!out) throw UsageError("write failed: " + path.string());
}

QrelSet read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw MissingHeader(path.string() + ": empty file");
  const std::vector<std::string> header = {"query_id", "scenario", "item_id", "grade"};
  if (row != header) {
    throw MissingHeader(path.string() + ": expected header '" + kQrelsHeader + "'");
  }
  QrelSet qrels;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    const std::size_t line = reader.line_no();
    if (row.size() != 4) throw MalformedRow(line, "expected 4 fields");
    const auto qid = csv::parse_int(row[0]);
    const auto item = csv::parse_int(row[2]);
    const auto grade = csv::parse_int(row[3]);
    if (!qid || !item || !grade) throw MalformedRow(line, "non-integer id or grade");
    if (*grade < 0 || *grade > 2) throw MalformedRow(line, "grade outside {0,1,2}");
    Scenario s;
    if (row[1] == "full") {
      s = Scenario::Full;
    } else if (row[1] == "less") {
      s = Scenario::Less;
    } else {
      throw MalformedRow(line, "scenario must be 'full' or 'less'");
    }
    auto [it, inserted] = qrels.queries.try_emplace(*qid);
    auto& q = it->second;
    if (inserted) {
      q.scenario = s;
    } else if (q.scenario != s) {
      throw MalformedRow(line, "query changes scenario");
    }
    if (std::find(q.items.begin(), q.items.end(), *item) != q.items.end()) {
      throw MalformedRow(line, "duplicate (query, item)");
    }
    q.items.push_back(*item);
    q.grades.push_back(static_cast<int>(*grade));
  }
  return qrels;
}

std::string format_table(std::span<const TableRow> rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %9s  %9s\n", static_cast<int>(width), "Model", "NDCG",
                "NDCG full", "NDCG less");
  out << buf << std::string(width + 34, '-') << '\n';
  for (const auto& r : rows) {
    if (r.has_less) {
      std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %9.4f  %9.4f\n", static_cast<int>(width),
                    r.name.c_str(), r.combined, r.full, r.less);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  %8s  %9.4f  %9s\n", static_cast<int>(width),
                    r.name.c_str(), "-", r.full, "-");
    }
    out << buf;
  }
  return out.str();
}

}  // namespace serprank
