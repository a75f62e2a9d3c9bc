#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "../wer_oracle.hpp"
#include "support.hpp"
#include "tesu/binio.hpp"
#include "tesu/eval.hpp"

using namespace tesu;

namespace {

using Words = std::vector<std::string>;

double wer_of(const Words& r, const Words& h) {
  return wer(std::span<const std::string>(r), std::span<const std::string>(h));
}

EvalReport sample_report() {
  EvalReport rep;
  RepetitionScore s{0.123456, 0.75, 0.987654, 1.234567, 10};
  rep.rows.push_back(make_row(InputPath::kText, 0.1, "heldout", s, 77));
  rep.rows.push_back(make_row(InputPath::kSpeech, 0.1, "heldout", s, 77));
  rep.rows.push_back(make_row(InputPath::kSpeech, 0.0, "train", s, 78));
  rep.metadata = {{"config_hash", "00ff"}, {"stack", "aligned"}};
  rep.timestamp = "2026-01-01T00:00:00Z";
  return rep;
}

}  // namespace

TEST_CASE("wer examples") {
  CHECK(wer_of({"a", "b", "c"}, {"a", "b", "c"}) == 0.0);
  CHECK(wer_of({"a", "b", "c"}, {"a", "x", "c"}) == doctest::Approx(1.0 / 3.0));
  CHECK(wer_of({"hello"}, {}) == 1.0);
  CHECK(wer_of({"a"}, {"x", "y", "z"}) == 3.0);
  CHECK(wer("Hello, World!", "hello world") == 0.0);
  CHECK_KIND(wer_of({}, {"a"}), ErrorKind::kInvalidArgument);
  CHECK_KIND(wer("", "a"), ErrorKind::kInvalidArgument);
}

TEST_CASE("wer matches the exhaustive oracle on short sequences") {
  const auto seqs = oracle::all_sequences({"x", "y", "z"}, 4);
  REQUIRE(seqs.size() == 121);
  std::size_t mismatches = 0;
  for (const auto& r : seqs) {
    for (const auto& h : seqs) {
      const std::size_t expected = oracle::edit_distance(r, h);
      if (edit_distance(r, h) != expected) ++mismatches;
      if (!r.empty() && wer_of(r, h) != static_cast<double>(expected) / static_cast<double>(r.size())) ++mismatches;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("wer is invariant under relabeling") {
  const auto seqs = oracle::all_sequences({"x", "y", "z"}, 3);
  const std::map<std::string, std::string> relabel = {{"x", "z"}, {"y", "x"}, {"z", "y"}};
  auto apply = [&](const Words& w) {
    Words out;
    for (const auto& s : w) out.push_back(relabel.at(s));
    return out;
  };
  for (const auto& r : seqs) {
    if (r.empty()) continue;
    CHECK(wer_of(r, r) == 0.0);
    for (const auto& h : seqs) CHECK(wer_of(r, h) == wer_of(apply(r), apply(h)));
  }
}

TEST_CASE("report rows are rounded to four decimals") {
  const EvalReport rep = sample_report();
  CHECK(rep.rows[0].wer == 0.1235);
  CHECK(rep.rows[0].sigma == 0.0);
  CHECK(rep.rows[0].seed == 0);
  CHECK(rep.rows[1].sigma == 0.1);
  CHECK(rep.rows[1].seed == 77);
}

TEST_CASE("csv report") {
  const EvalReport rep = sample_report();
  const std::string csv = report_csv(rep);
  CHECK(csv.rfind(std::string(kReportCsvHeader) + "\n", 0) == 0);
  CHECK(csv.find("speech,0.1000,heldout,0.1235,0.7500,0.9877,1.2346,77\n") != std::string::npos);
  CHECK(parse_report_csv(csv) == rep.rows);
  CHECK(report_csv(EvalReport{}) == std::string(kReportCsvHeader) + "\n");
  CHECK(parse_report_csv(report_csv(EvalReport{})).empty());
  CHECK_KIND(parse_report_csv("nope\n"), ErrorKind::kFormat);
  CHECK_KIND(parse_report_csv(std::string(kReportCsvHeader) + "\ntext,0,heldout,x,0,0,0,0\n"), ErrorKind::kFormat);
}

TEST_CASE("json report") {
  const EvalReport rep = sample_report();
  const EvalReport back = parse_report_json(report_json(rep));
  CHECK(back.rows == rep.rows);
  CHECK(back.metadata == rep.metadata);
  CHECK(back.timestamp == rep.timestamp);
  EvalReport later = rep;
  later.timestamp = "2026-06-01T00:00:00Z";
  CHECK(report_csv(later) == report_csv(rep));
  CHECK_KIND(parse_report_json("{}"), ErrorKind::kFormat);
}

TEST_CASE("emit_report writes files") {
  const auto dir = testing::scratch_dir("report");
  const EvalReport rep = sample_report();
  emit_report(rep, ReportFormat::kCsv, dir / "r.csv");
  emit_report(rep, ReportFormat::kJson, dir / "r.json");
  CHECK(parse_report_csv(binio::read_file(dir / "r.csv")) == rep.rows);
  CHECK(parse_report_json(binio::read_file(dir / "r.json")).rows == rep.rows);
  emit_report(EvalReport{}, ReportFormat::kCsv, dir / "empty.csv");
  CHECK(binio::read_file(dir / "empty.csv") == std::string(kReportCsvHeader) + "\n");
  CHECK_KIND(emit_report(rep, ReportFormat::kCsv, dir / "r.csv" / "nested.csv"), ErrorKind::kIo);
}
