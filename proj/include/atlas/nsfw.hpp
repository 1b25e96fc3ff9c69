#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "atlas/corpus.hpp"
#include "atlas/remote.hpp"

namespace atlas {

enum class NsfwMode { Blocklist, Remote, Off };

struct NsfwConfig {
  NsfwMode mode = NsfwMode::Blocklist;
  std::vector<std::string> blocklist;  // empty: default_blocklist()
  bool use_default_blocklist = true;
  RemoteEndpoint remote;  // POST {"texts": [...]} -> {"flags": [bool, ...]}
};

const std::vector<std::string>& default_blocklist();

// Case-insensitive whole-word match; multi-word terms match as a contiguous
// token run.
class BlocklistMatcher {
 public:
  explicit BlocklistMatcher(const std::vector<std::string>& terms);
  bool matches(std::string_view text) const;
  bool empty() const noexcept { return terms_.empty(); }

 private:
  std::vector<std::vector<std::string>> terms_;
};

struct NsfwSplit {
  std::vector<std::size_t> kept;     // record indices
  std::vector<std::size_t> flagged;
};

// Sets nsfw_flagged on matching records; flagged records stay in the corpus
// but are excluded from indexing and layout downstream.
NsfwSplit nsfw_filter(const NsfwConfig& config, std::vector<PromptRecord>& records);

}  // namespace atlas
