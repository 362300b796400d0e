#include <doctest.h>

#include "semvol/dataio.hpp"
#include "semvol/rng.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace semvol;
using namespace semvol::dataio;
using testing::error_code;

namespace {

Record qa(std::string id, std::string response, std::string reference) {
  Record r;
  r.id = std::move(id);
  r.kind = RecordKind::Qa;
  r.query = "q";
  r.response = std::move(response);
  r.reference = std::move(reference);
  return r;
}

std::vector<Record> labeled(std::size_t pos, std::size_t neg) {
  std::vector<Record> out;
  for (std::size_t i = 0; i < pos + neg; ++i) {
    Record r;
    r.id = "r" + std::to_string(i);
    r.query = "q" + std::to_string(i);
    r.label = i < pos ? 1 : 0;
    out.push_back(r);
  }
  return out;
}

std::string random_text(Rng &rng) {
  static const char *pieces[] = {"a", "Z", "9", " ", ",", "\"", "\\", "\n", "\t", "\xc3\xa9", "{", "}", "null"};
  std::string s;
  const auto len = rng.below(12);
  for (std::uint64_t i = 0; i < len; ++i) s += pieces[rng.below(std::size(pieces))];
  return s;
}

void write_lines(const fs::path &p, const std::string &content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// Captures std::cerr for the lifetime of the object.
class CerrCapture {
 public:
  CerrCapture() : old_(std::cerr.rdbuf(buf_.rdbuf())) {}
  ~CerrCapture() { std::cerr.rdbuf(old_); }
  std::string text() const { return buf_.str(); }

 private:
  std::ostringstream buf_;
  std::streambuf *old_;
};

} // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("The cat, sat!") == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(tokenize("  x1-Y2  ") == std::vector<std::string>{"x1", "y2"});
  CHECK(tokenize("caf\xc3\xa9 ok") == std::vector<std::string>{"caf\xc3\xa9", "ok"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("...").empty());
}

TEST_CASE("rouge-l worked values") {
  CHECK(rouge_l("the cat sat", "the cat ran") == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(rouge_l("Paris is the capital", "paris is the capital") == 1.0);
  CHECK(rouge_l("alpha beta", "gamma delta") == 0.0);
  CHECK(rouge_l("", "anything") == 0.0);
  CHECK(rouge_l("anything", "") == 0.0);
}

TEST_CASE("rouge-l precision and recall use the right denominators") {
  // LCS 2: P = 2/2, R = 2/4, F = 2/3.
  CHECK(rouge_l("a b", "a b c d") == doctest::Approx(2.0 / 3.0));
  // LCS 1: P = 1/4, R = 1/1, F = 0.4.
  CHECK(rouge_l("x y z a", "a") == doctest::Approx(0.4));
  // Order matters for the subsequence: only "a c" is shared in order.
  CHECK(rouge_l("a b c", "c a b") == doctest::Approx(2.0 / 3.0));
  CHECK(rouge_l("a c", "a b c") == doctest::Approx(0.8));
}

TEST_CASE("rouge-l matches a brute-force LCS") {
  Rng rng(7);
  const std::vector<std::string> vocab{"a", "b", "c", "d"};
  for (int t = 0; t < 300; ++t) {
    std::vector<std::string> c, r;
    const auto nc = rng.below(13), nr = rng.below(13);
    for (std::uint64_t i = 0; i < nc; ++i) c.push_back(vocab[rng.below(vocab.size())]);
    for (std::uint64_t i = 0; i < nr; ++i) r.push_back(vocab[rng.below(vocab.size())]);
    const double expected = oracle::rouge_from_lcs(oracle::lcs_brute(c, r), c.size(), r.size());
    CHECK(rouge_l(c, r) == doctest::Approx(expected).epsilon(1e-14));
    const double value = rouge_l(c, r);
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
    if (c.size() == r.size()) CHECK(rouge_l(r, c) == value);
  }
}

TEST_CASE("rouge labeling is strict at the threshold") {
  // LCS 3 over 10 + 10 tokens: exactly 0.3.
  const auto at = qa("b", "w1 w2 w3 x4 x5 x6 x7 x8 x9 x10", "w1 w2 w3 y4 y5 y6 y7 y8 y9 y10");
  CHECK(rouge_l(*at.response, *at.reference) == 0.3);
  CHECK(label_by_rouge(at) == 0);
  CHECK(label_by_rouge(at, std::nextafter(0.3, 1.0)) == 1);

  const auto low = qa("l", "a b c d e f g h i j", "a k l m n o p q r s");
  CHECK(label_by_rouge(low) == 1);
  CHECK(label_by_rouge(qa("s", "the cat sat", "the cat ran")) == 0);
}

TEST_CASE("rouge labeling is monotone in the threshold") {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const auto r = qa("x", random_text(rng) + " a b", random_text(rng) + " b c");
    CHECK(label_by_rouge(r, 0.0) == 0);
    CHECK(label_by_rouge(r, 1.0 + 1e-9) == 1);
    int prev = 0;
    for (double th = 0.0; th <= 1.01; th += 0.05) {
      const int l = label_by_rouge(r, th);
      CHECK(l >= prev);
      prev = l;
    }
  }
}

TEST_CASE("rouge labeling needs a response and reference") {
  Record r;
  r.id = "m";
  r.query = "q";
  r.response = "x";
  CHECK(error_code([&] { label_by_rouge(r); }) == ErrorCode::MissingField);
  CHECK_FALSE(effective_label(r, 0.3).has_value());
  r.label = 1;
  CHECK(effective_label(r, 0.3) == 1);
  auto derived = qa("d", "the cat sat", "the cat ran");
  CHECK(effective_label(derived, std::nullopt) == std::nullopt);
  CHECK(effective_label(derived, 0.3) == 0);
}

TEST_CASE("labeled subset sampling") {
  auto records = labeled(6, 14);
  Record unlabeled;
  unlabeled.id = "u";
  unlabeled.query = "q";
  records.push_back(unlabeled);

  const auto a = sample_labeled_subset(records, 10, 42);
  CHECK(a.size() == 10);
  CHECK(a == sample_labeled_subset(records, 10, 42));
  CHECK(std::set<std::string>(a.begin(), a.end()).size() == 10);
  CHECK(std::find(a.begin(), a.end(), "u") == a.end());

  bool differs = false;
  for (std::uint64_t seed = 0; seed < 10 && !differs; ++seed) differs = sample_labeled_subset(records, 10, seed) != a;
  CHECK(differs);

  CHECK(sample_labeled_subset(records, 20, 1).size() == 20);
  CHECK(error_code([&] { sample_labeled_subset(records, 21, 1); }) == ErrorCode::InsufficientLabels);

  const auto s = sample_labeled_subset(records, 10, 5, true);
  int pos = 0;
  for (const auto &id : s) pos += std::stoi(id.substr(1)) < 6 ? 1 : 0;
  CHECK(pos == 5);
  CHECK(s.size() == 10);

  // Not enough positives: the rest comes from negatives.
  const auto s2 = sample_labeled_subset(records, 16, 5, true);
  pos = 0;
  for (const auto &id : s2) pos += std::stoi(id.substr(1)) < 6 ? 1 : 0;
  CHECK(pos == 6);
  CHECK(s2.size() == 16);
}

TEST_CASE("records round-trip") {
  oracle::TempDir dir("dataio");
  Rng rng(9);
  std::vector<Record> records;
  for (int i = 0; i < 500; ++i) {
    Record r;
    r.id = "id-" + std::to_string(i) + random_text(rng);
    r.kind = rng.below(2) ? RecordKind::Qa : RecordKind::Query;
    r.query = random_text(rng);
    if (r.kind == RecordKind::Qa || rng.below(2)) r.response = random_text(rng);
    if (rng.below(2)) r.reference = random_text(rng);
    if (rng.below(3)) r.label = static_cast<int>(rng.below(2));
    records.push_back(r);
  }
  save_dataset(dir / "d.jsonl", records);
  const auto back = load_dataset(dir / "d.jsonl");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].kind == records[i].kind);
    CHECK(back[i].query == records[i].query);
    CHECK(back[i].response == records[i].response);
    CHECK(back[i].reference == records[i].reference);
    CHECK(back[i].label == records[i].label);
  }
}

TEST_CASE("stage files round-trip") {
  oracle::TempDir dir("dataio");
  Rng rng(10);

  std::vector<PerturbationSet> sets;
  for (int i = 0; i < 30; ++i) {
    PerturbationSet p;
    p.record_id = "p" + std::to_string(i);
    p.kind = i % 2 ? PerturbationKind::ResponseSample : PerturbationKind::QueryAugmentation;
    for (int k = 0; k < 3; ++k) p.texts.push_back("text " + std::to_string(k) + random_text(rng));
    p.generation = {"m", rng.uniform(0, 2), "query_extension_v1"};
    p.attempts = 1 + static_cast<int>(rng.below(3));
    if (i % 3 == 0) {
      measures::TokenLogprob t{"tok", -rng.uniform(0, 5), {{"a", -0.1}, {"b", -2.0}}};
      p.logprobs.push_back({t, t});
    }
    sets.push_back(p);
  }
  save_perturbations(dir / "p.jsonl", sets);
  const auto ps = load_perturbations(dir / "p.jsonl");
  REQUIRE(ps.size() == sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    CHECK(ps[i].texts == sets[i].texts);
    CHECK(ps[i].kind == sets[i].kind);
    CHECK(ps[i].generation.temperature == sets[i].generation.temperature);
    CHECK(ps[i].attempts == sets[i].attempts);
    REQUIRE(ps[i].logprobs.size() == sets[i].logprobs.size());
    for (std::size_t k = 0; k < ps[i].logprobs.size(); ++k) {
      CHECK(ps[i].logprobs[k][0].logprob == sets[i].logprobs[k][0].logprob);
      CHECK(ps[i].logprobs[k][0].top_alternatives.size() == 2);
    }
  }

  std::vector<EmbeddingsRecord> emb;
  for (int i = 0; i < 10; ++i) {
    EmbeddingsRecord e{"e" + std::to_string(i), 7, {}, {}};
    for (int k = 0; k < 4; ++k) {
      std::vector<double> v;
      for (int j = 0; j < 7; ++j) v.push_back(rng.normal() * 1e-3);
      e.vectors.push_back(v);
    }
    emb.push_back(e);
  }
  save_embeddings(dir / "e.jsonl", emb);
  const auto eb = load_embeddings(dir / "e.jsonl");
  REQUIRE(eb.size() == emb.size());
  for (std::size_t i = 0; i < emb.size(); ++i) CHECK(eb[i].vectors == emb[i].vectors);

  std::vector<measures::ScoreRow> scores;
  for (int i = 0; i < 10; ++i) scores.push_back({"s" + std::to_string(i), measures::Measure::SemanticVolume, rng.normal() * 100, {}});
  save_scores(dir / "s.jsonl", scores);
  const auto sb = load_scores(dir / "s.jsonl");
  for (std::size_t i = 0; i < scores.size(); ++i) CHECK(sb[i].score == scores[i].score);

  calibration::CalibrationResult c;
  c.tau_star = -123.456789012345;
  c.metric = calibration::Metric::Accuracy;
  c.achieved = 0.87;
  c.subset_size = 100;
  c.seed = 18446744073709551615ull;
  save_calibration(dir / "c.json", c);
  const auto cb = load_calibration(dir / "c.json");
  CHECK(cb.tau_star == c.tau_star);
  CHECK(cb.metric == c.metric);
  CHECK(cb.subset_size == 100);
  CHECK(cb.seed == c.seed);
  std::vector<std::string> keys;
  const auto cj = nlohmann::ordered_json::parse(read_file(dir / "c.json"));
  for (auto it = cj.begin(); it != cj.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"tau_star", "metric", "achieved", "subset_size", "seed"});

  save_predictions(dir / "pr.jsonl", {{"a", 0.5, 1}, {"b", -0.5, 0}});
  const auto pr = load_predictions(dir / "pr.jsonl");
  CHECK(pr.size() == 2);
  CHECK(pr[1].predicted == 0);
}

TEST_CASE("parse errors carry the line number") {
  oracle::TempDir dir("dataio");
  write_lines(dir / "bad.jsonl", "{\"id\":\"a\",\"query\":\"x\"}\n\n{\"id\":\"b\",\"query\":\n");
  try {
    load_dataset(dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.context().find(":3") != std::string::npos);
  }

  write_lines(dir / "nofield.jsonl", "{\"id\":\"a\"}\n");
  CHECK(error_code([&] { load_dataset(dir / "nofield.jsonl"); }) == ErrorCode::ParseError);
  write_lines(dir / "label.jsonl", "{\"id\":\"a\",\"query\":\"x\",\"label\":2}\n");
  CHECK(error_code([&] { load_dataset(dir / "label.jsonl"); }) == ErrorCode::ParseError);
  write_lines(dir / "qa.jsonl", "{\"id\":\"a\",\"kind\":\"qa\",\"query\":\"x\"}\n");
  CHECK(error_code([&] { load_dataset(dir / "qa.jsonl"); }) == ErrorCode::ParseError);
  write_lines(dir / "dim.jsonl", "{\"id\":\"a\",\"dim\":3,\"vectors\":[[1,2]]}\n");
  CHECK(error_code([&] { load_embeddings(dir / "dim.jsonl"); }) == ErrorCode::ParseError);
  write_lines(dir / "blank.jsonl", "{\"record_id\":\"a\",\"kind\":\"query_augmentation\",\"texts\":[\"  \"]}\n");
  CHECK(error_code([&] { load_perturbations(dir / "blank.jsonl"); }) == ErrorCode::ParseError);

  CHECK(error_code([&] { load_dataset(dir / "missing.jsonl"); }) == ErrorCode::IoError);
}

TEST_CASE("duplicate ids are rejected") {
  oracle::TempDir dir("dataio");
  write_lines(dir / "dup.jsonl", "{\"id\":\"a\",\"query\":\"x\"}\n{\"id\":\"a\",\"query\":\"y\"}\n");
  try {
    load_dataset(dir / "dup.jsonl");
    FAIL("expected a duplicate id error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::DuplicateId);
    CHECK(e.context() == "line 2");
  }
}

TEST_CASE("unknown keys are kept on read and dropped with a warning on write") {
  oracle::TempDir dir("dataio");
  write_lines(dir / "x.jsonl", "{\"id\":\"a\",\"query\":\"x\",\"source\":\"web\",\"score\":3}\n");
  const auto records = load_dataset(dir / "x.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].extra["source"] == "web");
  CHECK(records[0].extra["score"] == 3);

  CerrCapture cap;
  save_dataset(dir / "y.jsonl", records);
  CHECK(cap.text().find("source") != std::string::npos);
  const auto written = nlohmann::json::parse(read_file(dir / "y.jsonl"));
  CHECK_FALSE(written.contains("source"));
}

TEST_CASE("atomic writes leave no temp file") {
  oracle::TempDir dir("dataio");
  write_atomic(dir / "sub" / "f.txt", "hello");
  CHECK(read_file(dir / "sub" / "f.txt") == "hello");
  CHECK_FALSE(fs::exists(dir / "sub" / "f.txt.tmp"));
  write_atomic(dir / "sub" / "f.txt", "bye");
  CHECK(read_file(dir / "sub" / "f.txt") == "bye");
}

TEST_CASE("appends are resumable lines") {
  oracle::TempDir dir("dataio");
  PerturbationSet p{"r1", PerturbationKind::QueryAugmentation, {"a"}, {"m", 1.0, "t"}, {}, 1, {}};
  append_perturbation(dir / "p.jsonl", p);
  p.record_id = "r2";
  append_perturbation(dir / "p.jsonl", p);
  const auto back = load_perturbations(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].record_id == "r2");
}
