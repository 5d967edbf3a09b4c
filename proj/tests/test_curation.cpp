#include <doctest.h>

#include <random>
#include <set>

#include "formaforge/curation.hpp"
#include "formaforge/extract.hpp"
#include "formaforge/hash.hpp"
#include "formaforge/mock.hpp"
#include "test_util.hpp"

using namespace formaforge;
using namespace formaforge::mock;

namespace {

void check_cover(const std::vector<Chunk>& chunks, std::string_view doc) {
  REQUIRE(!chunks.empty());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    CHECK(chunks[i].index == static_cast<int>(i));
    CHECK(chunks[i].char_span.first == pos);
    CHECK(chunks[i].char_span.second > chunks[i].char_span.first);
    CHECK(chunks[i].text == doc.substr(pos, chunks[i].char_span.second - pos));
    pos = chunks[i].char_span.second;
  }
  CHECK(pos == doc.size());
}

std::string paragraph(char c, std::size_t n) {
  std::string s;
  while (s.size() < n) {
    s += std::string(7, c);
    s += ' ';
  }
  return s + "\n";
}

const CurationOptions kFast = [] {
  CurationOptions o;
  o.retry = {1, std::chrono::milliseconds(0)};
  o.parallelism = 3;
  return o;
}();

}  // namespace

TEST_CASE("short doc is one chunk") {
  const std::string doc = "# Title\n\nSome text.\n";
  const auto cs = chunk_markdown("d", doc, 6000);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].text == doc);
  CHECK(cs[0].doc_id == "d");
  CHECK(cs[0].char_span == std::pair<std::size_t, std::size_t>{0, doc.size()});
  CHECK(chunk_markdown("d", "", 600).empty());
  CHECK_THROWS_AS(chunk_markdown("d", doc, 511), std::invalid_argument);
}

TEST_CASE("splits land on headings") {
  std::string doc;
  std::vector<std::size_t> heading_offsets;
  for (int h = 0; h < 3; ++h) {
    heading_offsets.push_back(doc.size());
    doc += "## Section " + std::to_string(h) + "\n\n" + paragraph('a' + h, 400) + "\n";
  }
  const auto cs = chunk_markdown("d", doc, 600);
  check_cover(cs, doc);
  REQUIRE(cs.size() == 3);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    CHECK(cs[i].char_span.first == heading_offsets[i]);
    CHECK(cs[i].text.size() <= 600);
  }
}

TEST_CASE("small sections are packed") {
  std::string doc;
  for (int h = 0; h < 6; ++h) doc += "# H" + std::to_string(h) + "\n\nshort body\n\n";
  const auto cs = chunk_markdown("d", doc, 512);
  check_cover(cs, doc);
  CHECK(cs.size() == 1);
}

TEST_CASE("oversized display math stays whole") {
  const std::size_t max = 600;
  std::string math = "$$\n";
  while (math.size() < 2 * max) math += "x_{i} + y_{i} = z_{i} \\\\\n";
  math += "$$\n";
  const std::string doc = "Intro paragraph.\n\n" + math + "\nAfter the display.\n";
  const auto cs = chunk_markdown("d", doc, max);
  check_cover(cs, doc);
  int holders = 0;
  for (const auto& c : cs) {
    if (c.text.find("$$") != std::string::npos) {
      ++holders;
      CHECK(c.text.find(math) != std::string::npos);
      CHECK(c.text.size() > max);
    } else {
      CHECK(c.text.size() <= max);
    }
  }
  CHECK(holders == 1);
}

TEST_CASE("fenced code blocks are never split") {
  std::string code = "```python\n";
  while (code.size() < 900) code += "print('hello')\n\n";
  code += "```\n";
  const std::string doc = paragraph('p', 300) + "\n" + code + "\n" + paragraph('q', 300);
  const auto cs = chunk_markdown("d", doc, 512);
  check_cover(cs, doc);
  bool found = false;
  for (const auto& c : cs) found = found || c.text.find(code) != std::string::npos;
  CHECK(found);
}

TEST_CASE("long paragraphs split on words and UTF-8 boundaries") {
  std::string para;
  while (para.size() < 3000) para += "αβγ δ ";
  std::string blob(2000, 'z');
  std::string multibyte;
  while (multibyte.size() < 2000) multibyte += "∀";
  const std::string doc = para + "\n\n" + blob + "\n\n" + multibyte + "\n";
  const auto cs = chunk_markdown("d", doc, 512);
  check_cover(cs, doc);
  for (const auto& c : cs) {
    CHECK(c.text.size() <= 512);
    // No chunk starts with a UTF-8 continuation byte.
    CHECK((static_cast<unsigned char>(c.text.front()) & 0xC0) != 0x80);
  }
}

TEST_CASE("random documents are covered exactly") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> pieces{
      "# Heading\n", "## Sub\n", "\n", "Some words here. ", "$$\na = b\n$$\n", "```\ncode\n```\n",
      "~~~\nmore\n~~~\n", "ünïcödé ", std::string(300, 'w') + "\n", "- item\n"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), len(1, 200);
  for (int rep = 0; rep < 100; ++rep) {
    std::string doc;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) doc += pieces[pick(rng)];
    const auto cs = chunk_markdown("r", doc, 512);
    check_cover(cs, doc);
  }
}

TEST_CASE("parse_extraction_reply") {
  const auto two = parse_extraction_reply(
      R"([{"problem": "Prove that 2 is prime.", "type": "proof"}, {"problem": "Compute 3!.", "type": "ans"}])");
  REQUIRE(two.size() == 2);
  CHECK(two[0].type == ProblemType::proof);
  CHECK(two[1].problem == "Compute 3!.");
  CHECK(parse_extraction_reply("[]").empty());
  const auto wrapped = parse_extraction_reply(
      "Here you go:\n```json\n[{\"problem\": \"P\", \"type\": \"proof\"}]\n```\nDone.");
  REQUIRE(wrapped.size() == 1);
  CHECK(wrapped[0].problem == "P");
  CHECK(parse_extraction_reply("no json at all").empty());
  CHECK(parse_extraction_reply("[{\"problem\": \"P\"").empty());
  CHECK(parse_extraction_reply("{\"problem\": \"P\", \"type\": \"proof\"}").empty());
  const auto filtered = parse_extraction_reply(
      R"([{"problem": "ok", "type": "proof"}, {"problem": "x", "type": "essay"}, {"type": "ans"}, {"problem": "  ", "type": "ans"}, 7])");
  REQUIRE(filtered.size() == 1);
  CHECK(filtered[0].problem == "ok");
}

TEST_CASE("extract_problems and validation against mocks") {
  const Chunk chunk{"d", 0, "Exercise 1. Prove that 2 is prime.\nExercise 2. Compute 3!.\n", {0, 0}};
  SUBCASE("two records") {
    Script s;
    s.add("extraction", chunk.text,
          {{R"([{"problem": "Prove that 2 is prime.", "type": "proof"}, {"problem": "Compute 3!.", "type": "ans"}])"}});
    MockChatEndpoint ex(s);
    const auto ps = extract_problems(chunk, ex, kFast);
    REQUIRE(ps.size() == 2);
    CHECK(ps[1].type == ProblemType::ans);
  }
  SUBCASE("prose only") {
    Script s;
    s.add("extraction", chunk.text, {{"[]"}});
    MockChatEndpoint ex(s);
    CHECK(extract_problems(chunk, ex, kFast).empty());
  }
  SUBCASE("transport failure gives an empty list") {
    Script s;
    ScriptedResponse down;
    down.transport_error = true;
    s.add("extraction", chunk.text, {down});
    MockChatEndpoint ex(s);
    CHECK(extract_problems(chunk, ex, kFast).empty());
  }
  SUBCASE("validator") {
    Script s;
    s.add("validation", join_key({"good", "Algebra"}), {{"reasoning $\\boxed{true}$"}});
    s.add("validation", join_key({"vague", "Algebra"}), {{"It depends."}});
    s.add("validation", join_key({"undefined f", "Algebra"}), {{"\\boxed{false}"}});
    MockChatEndpoint v(s);
    CHECK(validate_extracted_problem("good", "Algebra", v, kFast));
    CHECK_FALSE(validate_extracted_problem("vague", "Algebra", v, kFast));
    CHECK_FALSE(validate_extracted_problem("undefined f", "Algebra", v, kFast));
  }
}

TEST_CASE("seeded permutation") {
  std::mt19937_64 ref;
  ref.discard(9999);
  CHECK(ref() == 9981545732273789042ULL);  // std-mandated check value
  for (std::size_t n : {0u, 1u, 2u, 10u, 1000u}) {
    auto p = seeded_permutation(n, 17);
    CHECK(p == seeded_permutation(n, 17));
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == i);
  }
  CHECK(seeded_permutation(50, 1) != seeded_permutation(50, 2));
}

TEST_CASE("build_dataset pipeline arithmetic and idempotence") {
  const std::string md = "# Exercises\n\n1. Show that a+b=b+a.\n2. Show it again.\n3. Bad one.\n";
  const SourceDoc doc{"book1", md, "Algebra"};
  Script ex, val;
  ex.add("extraction", md,
         {{R"([{"problem": "Show that a+b=b+a.", "type": "proof"}, {"problem": "Show that  a+b=b+a. ", "type": "proof"}, {"problem": "Bad one.", "type": "proof"}, {"problem": "Find x.", "type": "ans"}])"}});
  val.add("validation", join_key({"Show that a+b=b+a.", "Algebra"}), {{"\\boxed{true}"}});
  val.add("validation", join_key({"Show that  a+b=b+a.", "Algebra"}), {{"\\boxed{true}"}});
  val.add("validation", join_key({"Bad one.", "Algebra"}), {{"\\boxed{false}"}});
  val.add("validation", join_key({"Find x.", "Algebra"}), {{"\\boxed{true}"}});

  fftest::TempDir dir;
  auto run = [&](const std::filesystem::path& out, CurationOptions opts) {
    MockChatEndpoint e(ex, "extractor"), v(val, "validator");
    return build_dataset({doc}, e, v, opts,
                         {out / "problems.jsonl", out / "holdout.jsonl", out / "manifest.jsonl"},
                         fftest::fixed_clock);
  };
  std::filesystem::create_directories(dir / "a");
  std::filesystem::create_directories(dir / "b");
  const auto r1 = run(dir / "a", kFast);
  CHECK(r1.counts.chunks == 1);
  CHECK(r1.counts.extracted == 4);
  CHECK(r1.counts.validated == 3);
  CHECK(r1.counts.deduped == 2);
  REQUIRE(r1.problems.size() == 2);
  CHECK(r1.problems[0].statement == "Show that a+b=b+a.");
  CHECK(r1.problems[0].id == content_id("Show that a+b=b+a.", "book1"));
  CHECK(r1.problems[0].source == "book1");
  CHECK(r1.problems[1].type == ProblemType::ans);
  CHECK(load_problem_file(dir / "a" / "problems.jsonl") == r1.problems);
  CHECK_FALSE(std::filesystem::exists(dir / "a" / "holdout.jsonl"));

  std::set<std::string> hashes;
  for (const auto& p : r1.problems) CHECK(hashes.insert(sha256_hex(normalize_whitespace(p.statement))).second);

  const auto ms = read_manifests(dir / "a" / "manifest.jsonl");
  REQUIRE(ms.size() == 1);
  CHECK(ms[0].metrics.at("extracted") == 4);
  CHECK(ms[0].endpoints.at("extractor") == "mock:extractor");
  CHECK(ms[0].prompt_template_hashes.size() == 2);

  run(dir / "b", kFast);
  for (const char* f : {"problems.jsonl", "manifest.jsonl"}) {
    CHECK(fftest::slurp(dir / "a" / f) == fftest::slurp(dir / "b" / f));
  }

  SUBCASE("holdout") {
    CurationOptions o = kFast;
    o.holdout = 1;
    o.seed = 4;
    std::filesystem::create_directories(dir / "c");
    const auto r = run(dir / "c", o);
    CHECK(r.holdout.size() == 1);
    CHECK(r.problems.size() == 1);
    CHECK(load_problem_file(dir / "c" / "holdout.jsonl") == r.holdout);
    const auto perm = seeded_permutation(2, 4);
    CHECK(r.holdout[0] == r1.problems[perm[0]]);
  }
}
