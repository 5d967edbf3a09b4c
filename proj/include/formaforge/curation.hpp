#pragma once

// Textbook markdown -> problem set: chunk, extract with an LLM, validate
// with an LLM, deduplicate, assign content-hash ids.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/datastore.hpp"
#include "formaforge/rollout.hpp"

namespace formaforge {

struct Chunk {
  std::string doc_id;
  int index = 0;
  std::string text;
  /// Byte offsets [first, second) into the document.
  std::pair<std::size_t, std::size_t> char_span;
};

/// Splits at heading boundaries first, then paragraph boundaries, then
/// line and word boundaries. Display math ($$...$$) and fenced code blocks
/// are never split; one longer than max_chars becomes its own oversized
/// chunk. Lengths are in bytes; cuts never fall inside a UTF-8 sequence.
/// Chunks are contiguous and cover the document exactly.
std::vector<Chunk> chunk_markdown(std::string_view doc_id, std::string_view doc,
                                  std::size_t max_chars);

struct ExtractedProblem {
  std::string problem;
  ProblemType type = ProblemType::proof;
};

struct CurationOptions {
  std::size_t max_chars = 6000;
  double temperature = 0.0;
  int max_tokens = 4096;
  RetryPolicy retry;
  std::size_t parallelism = 8;
  /// Problems moved to the holdout file, chosen by a seeded shuffle.
  std::size_t holdout = 0;
  std::uint64_t seed = 0;
};

/// Parses an extractor reply. On malformed JSON, one more attempt is made on
/// the text between the first '[' and the last ']'. Records without a
/// string "problem" or with a type other than proof/ans are dropped.
std::vector<ExtractedProblem> parse_extraction_reply(std::string_view reply);

std::vector<ExtractedProblem> extract_problems(const Chunk& chunk,
                                               ChatEndpoint& extractor,
                                               const CurationOptions& opts = {});

/// Validator verdict; an unparseable reply or a transport failure rejects.
bool validate_extracted_problem(std::string_view problem, std::string_view category,
                                ChatEndpoint& validator,
                                const CurationOptions& opts = {});

struct SourceDoc {
  std::string doc_id;
  std::string markdown;
  std::string category;
};

struct CurationCounts {
  std::size_t chunks = 0;
  std::size_t extracted = 0;
  std::size_t validated = 0;
  std::size_t deduped = 0;
};

struct CurationResult {
  std::vector<Problem> problems;
  std::vector<Problem> holdout;
  CurationCounts counts;
  RunManifest manifest;
};

struct CurationPaths {
  std::filesystem::path problems;
  /// Written only when opts.holdout > 0.
  std::filesystem::path holdout;
  std::filesystem::path manifest;  // skipped when empty
};

CurationResult build_dataset(const std::vector<SourceDoc>& docs, ChatEndpoint& extractor,
                             ChatEndpoint& validator, const CurationOptions& opts,
                             const CurationPaths& paths,
                             const Clock& clock = utc_now_iso8601);

/// Deterministic Fisher-Yates on mt19937_64; identical on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace formaforge
