#include "tesu/eval.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "tesu/binio.hpp"
#include "tesu/error.hpp"

namespace tesu {
namespace {

double round4(double x) { return std::round(x * 1e4) / 1e4; }

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

double parse_double(const std::string& s, const char* field) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kFormat, std::string("report: bad ") + field + " value '" + s + "'");
  }
}

nlohmann::json row_json(const EvalRow& r) {
  return {{"path", r.path},   {"sigma", r.sigma},     {"split", r.split},
          {"wer", r.wer},     {"exact_match", r.exact_match}, {"align_cosine", r.align_cosine},
          {"ce", r.ce},       {"seed", r.seed}};
}

}  // namespace

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  if (reference.empty()) fail(ErrorKind::kInvalidArgument, "wer: empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

double wer(std::string_view reference, std::string_view hypothesis) {
  const auto r = normalize_words(reference);
  const auto h = normalize_words(hypothesis);
  return wer(std::span<const std::string>(r), std::span<const std::string>(h));
}

const char* path_name(InputPath path) { return path == InputPath::kText ? "text" : "speech"; }

RepetitionScore repetition_eval(const Stack& stack, std::span<const std::string> sentences, const EvalOptions& opts) {
  if (!stack.encoder || !stack.vocab) fail(ErrorKind::kState, "repetition_eval: incomplete stack");
  if (sentences.empty()) fail(ErrorKind::kInvalidArgument, "repetition_eval: no sentences");
  RepetitionScore score;
  double wer_sum = 0.0, exact = 0.0, cos_sum = 0.0, ce_sum = 0.0;
  const std::size_t r = stack.encoder->config().frames_per_token;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const TokenSeq tok = encode(sentences[i], *stack.vocab);
    if (tok.empty()) fail(ErrorKind::kInvalidArgument, "repetition_eval: empty sentence");
    const LatentSeq text_latents = stack.encoder->encode_text(tok);
    LatentSeq latents = text_latents;
    double cosine = 1.0;
    if (opts.path == InputPath::kSpeech) {
      const AcousticSeq speech = render(tok, Rng::derive(opts.noise_seed, i), opts.sigma, r, opts.synth);
      latents = stack.encoder->encode_speech(speech);
      cosine = alignment_residual(text_latents, latents).mean_cosine;
    }
    const Generation g = generate_from_latents(stack, latents, kRepetitionPrompt, opts.max_new);
    wer_sum += wer(std::span<const std::string>(tok.words), std::span<const std::string>(g.words));
    exact += g.words == tok.words ? 1.0 : 0.0;
    cos_sum += cosine;
    ce_sum += response_ce(stack, latents, kRepetitionPrompt, tok.ids);
  }
  const double n = static_cast<double>(sentences.size());
  score.wer = wer_sum / n;
  score.exact_match = exact / n;
  score.align_cosine = cos_sum / n;
  score.ce = ce_sum / n;
  score.count = sentences.size();
  return score;
}

EvalRow make_row(InputPath path, double sigma, const std::string& split, const RepetitionScore& s,
                 std::uint64_t seed) {
  EvalRow row;
  row.path = path_name(path);
  row.sigma = round4(path == InputPath::kText ? 0.0 : sigma);
  row.split = split;
  row.wer = round4(s.wer);
  row.exact_match = round4(s.exact_match);
  row.align_cosine = round4(s.align_cosine);
  row.ce = round4(s.ce);
  row.seed = path == InputPath::kText ? 0 : seed;
  return row;
}

AblationResult ablation_misaligned(const Stack& aligned, const Stack& control, std::span<const std::string> sentences,
                                   const std::string& split, double sigma, std::uint64_t noise_seed) {
  AblationResult out;
  for (auto* which : {&aligned, &control}) {
    auto& rows = which == &aligned ? out.aligned : out.control;
    for (InputPath path : {InputPath::kText, InputPath::kSpeech}) {
      EvalOptions opts;
      opts.path = path;
      opts.sigma = sigma;
      opts.noise_seed = noise_seed;
      rows.push_back(make_row(path, sigma, split, repetition_eval(*which, sentences, opts), noise_seed));
    }
  }
  return out;
}

std::string report_csv(const EvalReport& report) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& r : report.rows) {
    out += r.path + "," + fixed4(r.sigma) + "," + r.split + "," + fixed4(r.wer) + "," + fixed4(r.exact_match) + "," +
           fixed4(r.align_cosine) + "," + fixed4(r.ce) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<EvalRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) fail(ErrorKind::kFormat, "report: missing CSV header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) fail(ErrorKind::kFormat, "report: expected 8 columns in '" + line + "'");
    EvalRow r;
    r.path = f[0];
    r.sigma = parse_double(f[1], "sigma");
    r.split = f[2];
    r.wer = parse_double(f[3], "wer");
    r.exact_match = parse_double(f[4], "exact_match");
    r.align_cosine = parse_double(f[5], "align_cosine");
    r.ce = parse_double(f[6], "ce");
    try {
      r.seed = std::stoull(f[7]);
    } catch (const std::exception&) {
      fail(ErrorKind::kFormat, "report: bad seed '" + f[7] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
  j["metadata"] = report.metadata;
  j["timestamp"] = report.timestamp;
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    EvalReport rep;
    for (const auto& r : j.at("rows")) {
      EvalRow row;
      row.path = r.at("path").get<std::string>();
      row.sigma = r.at("sigma").get<double>();
      row.split = r.at("split").get<std::string>();
      row.wer = r.at("wer").get<double>();
      row.exact_match = r.at("exact_match").get<double>();
      row.align_cosine = r.at("align_cosine").get<double>();
      row.ce = r.at("ce").get<double>();
      row.seed = r.at("seed").get<std::uint64_t>();
      rep.rows.push_back(std::move(row));
    }
    rep.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    rep.timestamp = j.at("timestamp").get<std::string>();
    return rep;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("report: ") + e.what());
  }
}

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path) {
  binio::write_file(path, format == ReportFormat::kCsv ? report_csv(report) : report_json(report));
}

}  // namespace tesu
