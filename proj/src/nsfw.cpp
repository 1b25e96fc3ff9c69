#include "atlas/nsfw.hpp"

#include <algorithm>

#include "atlas/embedder.hpp"
#include "atlas/error.hpp"

namespace atlas {

const std::vector<std::string>& default_blocklist() {
  static const std::vector<std::string> terms = {"nsfw",  "nude",    "nudity", "naked",     "explicit",
                                                 "porn",  "sexual",  "gore",   "gory",      "bloody",
                                                 "topless", "erotic", "lewd",  "dismembered", "corpse"};
  return terms;
}

BlocklistMatcher::BlocklistMatcher(const std::vector<std::string>& terms) {
  for (const auto& t : terms) {
    auto tokens = tokenize(t);
    if (!tokens.empty()) terms_.push_back(std::move(tokens));
  }
}

bool BlocklistMatcher::matches(std::string_view text) const {
  if (terms_.empty()) return false;
  const auto tokens = tokenize(text);
  for (const auto& term : terms_) {
    if (term.size() > tokens.size()) continue;
    for (std::size_t i = 0; i + term.size() <= tokens.size(); ++i)
      if (std::equal(term.begin(), term.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

NsfwSplit nsfw_filter(const NsfwConfig& config, std::vector<PromptRecord>& records) {
  NsfwSplit split;
  std::vector<char> flags(records.size(), 0);
  switch (config.mode) {
    case NsfwMode::Off:
      break;
    case NsfwMode::Blocklist: {
      std::vector<std::string> terms = config.blocklist;
      if (config.use_default_blocklist) {
        const auto& d = default_blocklist();
        terms.insert(terms.end(), d.begin(), d.end());
      }
      const BlocklistMatcher matcher(terms);
      for (std::size_t i = 0; i < records.size(); ++i) flags[i] = matcher.matches(records[i].prompt) ? 1 : 0;
      break;
    }
    case NsfwMode::Remote: {
      constexpr std::size_t kBatch = 256;
      for (std::size_t start = 0; start < records.size(); start += kBatch) {
        const std::size_t len = std::min(kBatch, records.size() - start);
        nlohmann::json texts = nlohmann::json::array();
        for (std::size_t i = 0; i < len; ++i) texts.push_back(records[start + i].prompt);
        const auto reply = post_json(config.remote, {{"texts", texts}});
        auto it = reply.find("flags");
        if (it == reply.end() || !it->is_array() || it->size() != len)
          throw BackendError("NSFW reply must carry one flag per text", 200, false);
        for (std::size_t i = 0; i < len; ++i) flags[start + i] = (*it)[i].get<bool>() ? 1 : 0;
      }
      break;
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].nsfw_flagged = records[i].nsfw_flagged || flags[i] != 0;
    (records[i].nsfw_flagged ? split.flagged : split.kept).push_back(i);
  }
  return split;
}

}  // namespace atlas
