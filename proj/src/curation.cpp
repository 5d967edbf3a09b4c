#include "formaforge/curation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>
#include <set>

#include "formaforge/extract.hpp"
#include "formaforge/hash.hpp"
#include "formaforge/parallel.hpp"
#include "formaforge/prompts.hpp"

namespace formaforge {

namespace {

struct Span {
  std::size_t begin;
  std::size_t end;
  std::size_t size() const { return end - begin; }
};

enum class UnitKind { heading, paragraph, atomic };

struct Unit {
  Span span;
  UnitKind kind;
};

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

bool is_heading(std::string_view line) {
  const std::string_view t = ltrim(line);
  std::size_t hashes = 0;
  while (hashes < t.size() && t[hashes] == '#') ++hashes;
  if (hashes == 0 || hashes > 6) return false;
  return hashes == t.size() || t[hashes] == ' ' || t[hashes] == '\t' ||
         t[hashes] == '\n' || t[hashes] == '\r';
}

std::string_view fence_marker(std::string_view line) {
  const std::string_view t = ltrim(line);
  if (t.starts_with("```")) return "```";
  if (t.starts_with("~~~")) return "~~~";
  return {};
}

bool opens_display_math(std::string_view line) { return ltrim(line).starts_with("$$"); }

// Splits the document into lines, each keeping its trailing newline.
std::vector<Span> split_lines(std::string_view doc) {
  std::vector<Span> lines;
  std::size_t pos = 0;
  while (pos < doc.size()) {
    const std::size_t nl = doc.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? doc.size() : nl + 1;
    lines.push_back({pos, end});
    pos = end;
  }
  return lines;
}

std::vector<Unit> split_units(std::string_view doc) {
  const auto lines = split_lines(doc);
  auto text = [&](std::size_t i) {
    return doc.substr(lines[i].begin, lines[i].size());
  };
  std::vector<Unit> units;
  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string_view line = text(i);
    if (is_blank(line)) {
      if (units.empty()) {
        units.push_back({lines[i], UnitKind::paragraph});
      } else {
        units.back().span.end = lines[i].end;
      }
      ++i;
      continue;
    }
    if (const std::string_view marker = fence_marker(line); !marker.empty()) {
      std::size_t j = i + 1;
      while (j < lines.size() && !ltrim(text(j)).starts_with(marker)) ++j;
      j = std::min(j + 1, lines.size());
      units.push_back({{lines[i].begin, lines[j - 1].end}, UnitKind::atomic});
      i = j;
      continue;
    }
    if (opens_display_math(line)) {
      const std::string_view rest = ltrim(line).substr(2);
      std::size_t j = i + 1;
      if (rest.find("$$") == std::string_view::npos) {
        while (j < lines.size() && text(j).find("$$") == std::string_view::npos) ++j;
        j = std::min(j + 1, lines.size());
      }
      units.push_back({{lines[i].begin, lines[j - 1].end}, UnitKind::atomic});
      i = j;
      continue;
    }
    if (is_heading(line)) {
      units.push_back({lines[i], UnitKind::heading});
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < lines.size()) {
      const std::string_view l = text(j);
      if (is_blank(l) || is_heading(l) || !fence_marker(l).empty() ||
          opens_display_math(l)) {
        break;
      }
      ++j;
    }
    units.push_back({{lines[i].begin, lines[j - 1].end}, UnitKind::paragraph});
    i = j;
  }
  return units;
}

// Greedy packing of contiguous spans into groups of at most max bytes. A
// span larger than max is emitted alone.
std::vector<Span> pack(const std::vector<Span>& pieces, std::size_t max) {
  std::vector<Span> out;
  std::optional<Span> cur;
  for (const Span& p : pieces) {
    if (cur && cur->size() + p.size() <= max) {
      cur->end = p.end;
      continue;
    }
    if (cur) out.push_back(*cur);
    cur = p;
  }
  if (cur) out.push_back(*cur);
  return out;
}

bool utf8_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

// Splits a plain-text span finer: lines, then words, then bytes.
std::vector<Span> split_fine(std::string_view doc, Span span, std::size_t max,
                             int level) {
  if (span.size() <= max) return {span};
  std::vector<Span> atoms;
  if (level >= 2) {
    std::size_t pos = span.begin;
    while (pos < span.end) {
      std::size_t end = std::min(pos + max, span.end);
      while (end < span.end && end > pos + 1 && utf8_continuation(doc[end])) --end;
      atoms.push_back({pos, end});
      pos = end;
    }
    return atoms;
  }
  const char delim = level == 0 ? '\n' : ' ';
  std::size_t pos = span.begin;
  while (pos < span.end) {
    std::size_t cut = doc.find(delim, pos);
    cut = (cut == std::string_view::npos || cut >= span.end) ? span.end : cut + 1;
    atoms.push_back({pos, cut});
    pos = cut;
  }
  std::vector<Span> refined;
  for (const Span& a : atoms) {
    for (const Span& s : split_fine(doc, a, max, level + 1)) refined.push_back(s);
  }
  return pack(refined, max);
}

std::string trim_copy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

std::vector<Chunk> chunk_markdown(std::string_view doc_id, std::string_view doc,
                                  std::size_t max_chars) {
  if (max_chars < 512) throw std::invalid_argument("chunk_markdown: max_chars must be >= 512");
  const auto units = split_units(doc);

  // Sections start at headings.
  std::vector<std::vector<Unit>> sections;
  for (const Unit& u : units) {
    if (sections.empty() || u.kind == UnitKind::heading) sections.emplace_back();
    sections.back().push_back(u);
  }

  std::vector<Span> spans;
  std::vector<Span> run;  // consecutive sections that fit whole
  auto flush_run = [&] {
    for (const Span& s : pack(run, max_chars)) spans.push_back(s);
    run.clear();
  };
  for (const auto& section : sections) {
    const Span whole{section.front().span.begin, section.back().span.end};
    if (whole.size() <= max_chars) {
      run.push_back(whole);
      continue;
    }
    flush_run();
    std::vector<Span> pieces;
    for (const Unit& u : section) {
      if (u.kind == UnitKind::atomic || u.span.size() <= max_chars) {
        pieces.push_back(u.span);
      } else {
        for (const Span& s : split_fine(doc, u.span, max_chars, 0)) pieces.push_back(s);
      }
    }
    for (const Span& s : pack(pieces, max_chars)) spans.push_back(s);
  }
  flush_run();

  std::vector<Chunk> chunks;
  chunks.reserve(spans.size());
  for (const Span& s : spans) {
    chunks.push_back({std::string(doc_id), static_cast<int>(chunks.size()),
                      std::string(doc.substr(s.begin, s.size())), {s.begin, s.end}});
  }
  return chunks;
}

std::vector<ExtractedProblem> parse_extraction_reply(std::string_view reply) {
  json parsed;
  bool ok = false;
  try {
    parsed = json::parse(reply);
    ok = parsed.is_array();
  } catch (const json::parse_error&) {
  }
  if (!ok) {
    const std::size_t open = reply.find('[');
    const std::size_t close = reply.rfind(']');
    if (open != std::string_view::npos && close != std::string_view::npos && close > open) {
      try {
        parsed = json::parse(reply.substr(open, close - open + 1));
        ok = parsed.is_array();
      } catch (const json::parse_error&) {
      }
    }
  }
  if (!ok) {
    spdlog::warn("extraction reply is not a JSON array; no problems taken from it");
    return {};
  }
  std::vector<ExtractedProblem> out;
  for (const auto& rec : parsed) {
    if (!rec.is_object() || !rec.contains("problem") || !rec["problem"].is_string() ||
        !rec.contains("type") || !rec["type"].is_string()) {
      spdlog::warn("dropping malformed extraction record");
      continue;
    }
    const std::string problem = trim_copy(rec["problem"].get<std::string>());
    const std::string type = rec["type"].get<std::string>();
    if (problem.empty() || (type != "proof" && type != "ans")) {
      spdlog::warn("dropping extraction record with type '{}'", type);
      continue;
    }
    out.push_back({problem, parse_problem_type(type)});
  }
  return out;
}

std::vector<ExtractedProblem> extract_problems(const Chunk& chunk, ChatEndpoint& extractor,
                                               const CurationOptions& opts) {
  ChatRequest req;
  req.template_name = std::string(prompts::extraction().name);
  req.fingerprint_key = chunk.text;
  req.messages.push_back({"system", std::string(prompts::extraction().text)});
  req.messages.push_back({"user", chunk.text});
  req.temperature = opts.temperature;
  req.max_tokens = opts.max_tokens;
  try {
    const ChatResponse r = with_retries(opts.retry, [&] { return extractor.complete(req); });
    if (r.choices.empty()) return {};
    return parse_extraction_reply(r.choices.front().text);
  } catch (const TransportError& e) {
    spdlog::warn("extraction failed for {}#{}: {}", chunk.doc_id, chunk.index, e.what());
    return {};
  }
}

bool validate_extracted_problem(std::string_view problem, std::string_view category,
                                ChatEndpoint& validator, const CurationOptions& opts) {
  ChatRequest req;
  req.template_name = std::string(prompts::validation().name);
  req.fingerprint_key = join_key({problem, category});
  req.messages.push_back({"user", prompts::render_validation(problem, category)});
  req.temperature = opts.temperature;
  req.max_tokens = opts.max_tokens;
  try {
    const ChatResponse r = with_retries(opts.retry, [&] { return validator.complete(req); });
    if (r.choices.empty()) return false;
    return extract_boxed_answer(r.choices.front().text) == CcResult::accepted;
  } catch (const TransportError& e) {
    spdlog::warn("validation failed, rejecting problem: {}", e.what());
    return false;
  }
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    // Rejection sampling keeps the draw uniform and platform-independent.
    const std::uint64_t bound = i;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = rng();
    } while (x >= limit);
    std::swap(perm[i - 1], perm[x % bound]);
  }
  return perm;
}

CurationResult build_dataset(const std::vector<SourceDoc>& docs, ChatEndpoint& extractor,
                             ChatEndpoint& validator, const CurationOptions& opts,
                             const CurationPaths& paths, const Clock& clock) {
  struct Item {
    std::size_t doc;
    ExtractedProblem problem;
    bool valid = false;
  };

  std::vector<Chunk> chunks;
  std::vector<std::size_t> chunk_doc;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (auto& c : chunk_markdown(docs[d].doc_id, docs[d].markdown, opts.max_chars)) {
      chunks.push_back(std::move(c));
      chunk_doc.push_back(d);
    }
  }

  std::vector<std::vector<ExtractedProblem>> per_chunk(chunks.size());
  parallel_for(chunks.size(), opts.parallelism, [&](std::size_t i) {
    per_chunk[i] = extract_problems(chunks[i], extractor, opts);
  });

  std::vector<Item> items;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    for (auto& p : per_chunk[i]) items.push_back({chunk_doc[i], std::move(p), false});
  }
  parallel_for(items.size(), opts.parallelism, [&](std::size_t i) {
    items[i].valid = validate_extracted_problem(items[i].problem.problem,
                                                docs[items[i].doc].category, validator, opts);
  });

  CurationResult res;
  res.counts.chunks = chunks.size();
  res.counts.extracted = items.size();
  std::set<std::string> seen;
  std::vector<Problem> problems;
  for (const Item& it : items) {
    if (!it.valid) continue;
    ++res.counts.validated;
    const std::string& statement = it.problem.problem;
    if (!seen.insert(sha256_hex(normalize_whitespace(statement))).second) continue;
    const SourceDoc& doc = docs[it.doc];
    problems.push_back({content_id(statement, doc.doc_id), statement, doc.category,
                        it.problem.type, doc.doc_id});
  }
  res.counts.deduped = problems.size();

  if (opts.holdout > 0) {
    const auto perm = seeded_permutation(problems.size(), opts.seed);
    std::vector<bool> held(problems.size(), false);
    for (std::size_t i = 0; i < std::min(opts.holdout, problems.size()); ++i) {
      held[perm[i]] = true;
    }
    for (std::size_t i = 0; i < problems.size(); ++i) {
      (held[i] ? res.holdout : res.problems).push_back(problems[i]);
    }
  } else {
    res.problems = std::move(problems);
  }

  write_problem_file(res.problems, paths.problems);
  if (opts.holdout > 0 && !paths.holdout.empty()) write_problem_file(res.holdout, paths.holdout);

  RunManifest& m = res.manifest;
  m.created_at = clock();
  json doc_ids = json::array();
  for (const auto& d : docs) doc_ids.push_back(d.doc_id);
  m.config_snapshot = {{"command", "curate"},
                       {"docs", std::move(doc_ids)},
                       {"max_chars", opts.max_chars},
                       {"temperature", opts.temperature},
                       {"holdout", opts.holdout},
                       {"seed", opts.seed},
                       {"problems_file", paths.problems.filename().string()}};
  m.prompt_template_hashes =
      prompts::template_hashes({&prompts::extraction(), &prompts::validation()});
  m.endpoints = {{"extractor", extractor.identity()}, {"validator", validator.identity()}};
  m.metrics = {{"chunks", res.counts.chunks},
               {"extracted", res.counts.extracted},
               {"validated", res.counts.validated},
               {"deduped", res.counts.deduped},
               {"holdout", res.holdout.size()}};
  m.run_id = sha256_hex(m.config_snapshot.dump() + m.created_at).substr(0, 16);
  if (!paths.manifest.empty()) append_manifest(m, paths.manifest);
  return res;
}

}  // namespace formaforge
