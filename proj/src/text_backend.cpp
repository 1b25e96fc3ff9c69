#include "atlas/text_backend.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "atlas/embedder.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/rng.hpp"

namespace atlas {

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 8> kStageNames = {{
    {Stage::Category, "category"},
    {Stage::Subcategory, "subcategory"},
    {Stage::Subsubcategory, "subsubcategory"},
    {Stage::Idea, "idea"},
    {Stage::Location, "location"},
    {Stage::Subject, "subject"},
    {Stage::Prompt, "prompt"},
    {Stage::Annotation, "annotation"},
}};

// Original instruction wording; a templates directory can replace any of it.
const std::map<std::string, std::string, std::less<>>& default_templates() {
  static const std::map<std::string, std::string, std::less<>> t = {
      {"subcategory",
       "List {n} distinct subcategories of the image category \"{category}\". Answer with one short phrase per "
       "item. Keep every item safe for work."},
      {"subsubcategory",
       "List {n} distinct, more specific subcategories of \"{subcategory}\", which belongs to \"{category}\". "
       "One short phrase per item. Keep every item safe for work."},
      {"idea",
       "Write {n} short captions, each describing a different idea for an image about \"{subsubcategory}\". "
       "One phrase per caption. Keep every item safe for work."},
      {"location",
       "For the image idea \"{idea_caption}\", list {n} different places where the scene could take place. "
       "One short phrase per place."},
      {"subject",
       "For the image idea \"{idea_caption}\" set at \"{location_caption}\", list {n} different main subjects "
       "of the scene. One short phrase per subject."},
      {"prompt",
       "Write one concise text-to-image prompt that combines the idea \"{idea_caption}\", the location "
       "\"{location_caption}\" and the main subject \"{subject_caption}\". One sentence."},
      {"annotation",
       "Given the text-to-image prompt \"{prompt}\", predict the likely lighting, tone, mood and genre of the "
       "resulting image. Answer with a JSON object with exactly those keys."},
      {"label",
       "These are main-subject captions of neighbouring images on a map: {subjects}. Write a label of at most "
       "three words that best describes them."},
  };
  return t;
}

// ---- mock vocabularies (no entry may contain a default blocklist term) ----

constexpr std::array<std::string_view, 48> kSubcatModifiers = {
    "coastal",  "urban",      "ancient",   "rural",      "tropical",    "alpine",     "desert",   "arctic",
    "futuristic", "medieval", "underwater", "industrial", "suburban",   "volcanic",   "enchanted", "abandoned",
    "miniature", "floating",  "nocturnal", "autumn",     "winter",      "spring",     "summer",   "overgrown",
    "crystal",  "misty",      "sunlit",    "rainy",      "forgotten",   "royal",      "rustic",   "modern",
    "victorian", "tribal",    "cosmic",    "pastoral",   "coral",       "glacial",    "riverside", "mountain",
    "canyon",   "meadow",     "harbor",    "island",     "jungle",      "steampunk",  "candlelit", "festive"};

constexpr std::array<std::string_view, 32> kSubsubModifiers = {
    "hidden",   "vast",      "quiet",    "bustling",  "winding",    "towering",  "secret",   "sprawling",
    "narrow",   "golden",    "frozen",   "windswept", "lantern lit", "mossy",    "sunken",   "terraced",
    "painted",  "crumbling", "glowing",  "silent",    "crowded",    "drifting",  "mirrored", "flooded",
    "colorful", "stormy",    "wild",     "ornate",    "weathered",  "peaceful",  "lush",     "snowy"};

constexpr std::array<std::string_view, 24> kLightPhrases = {
    "golden sunset",       "pale moonlight",      "morning fog",        "first snowfall",
    "summer rain",         "soft sunrise light",  "a sudden storm",     "warm lantern glow",
    "neon reflections",    "drifting fireflies",  "falling petals",     "swirling autumn leaves",
    "a double rainbow",    "the northern lights", "midday haze",        "long evening shadows",
    "scattered starlight", "heavy mist",          "bright spring sun",  "flickering candlelight",
    "a blue hour sky",     "rolling thunderclouds", "dappled shade",    "a hazy dusk"};

constexpr std::array<std::string_view, 10> kLightVerbs = {
    "shining on", "settling over", "drifting across", "falling over", "glowing above",
    "sweeping through", "washing over", "lingering in", "breaking over", "spilling into"};

constexpr std::array<std::string_view, 24> kPlaces = {
    "cliffside path",   "old stone bridge",  "quiet courtyard",   "market square",   "rooftop terrace",
    "lakeside dock",    "forest clearing",   "mountain pass",     "train platform",  "lighthouse gallery",
    "harbor pier",      "village street",    "glass greenhouse",  "desert oasis",    "temple stairway",
    "riverbank meadow", "golf course",       "castle rampart",    "canal walkway",   "hilltop garden",
    "library balcony",  "fishing boat deck", "vineyard terrace",  "snowy trailhead"};

constexpr std::array<std::string_view, 6> kRelations = {"overlooking", "near", "beside", "below", "facing",
                                                        "above"};

constexpr std::array<std::string_view, 20> kLandmarks = {
    "a fishing village", "Palm Springs",        "the old harbor",    "a snowy ridge",      "a crumbling castle",
    "distant city lights", "a winding river",   "the open sea",      "a bamboo grove",     "rolling vineyards",
    "a sleepy town",     "a frozen lake",       "a busy port",       "the salt flats",     "a pine forest",
    "a hidden waterfall", "terraced rice fields", "a desert canyon",  "a coral lagoon",     "the city skyline"};

constexpr std::array<std::string_view, 64> kAgents = {
    "lone hiker",      "young painter",    "old fisherman",    "curious fox",      "golfer",
    "street musician", "sleeping cat",     "red dragon",       "armored knight",   "tiny robot",
    "ballet dancer",   "wandering monk",   "flock of swans",   "mountain goat",    "sailor",
    "astronaut",       "gardener",         "young wizard",     "lighthouse keeper", "barn owl",
    "cyclist",         "chef",             "snow leopard",     "pair of lovers",   "brass automaton",
    "fox cub",         "school of koi",    "traveling merchant", "shepherd",       "pianist",
    "grizzly bear",    "hot air balloon",  "vintage car",      "steam locomotive", "paper kite",
    "photographer",    "beekeeper",        "street vendor",    "old librarian",    "stray dog",
    "jazz trio",       "white stag",       "market crowd",     "skateboarder",     "potter",
    "fire dancer",     "elderly couple",   "rowing team",      "mountain climber", "young explorer",
    "herd of horses",  "hummingbird",      "wooden sailboat",  "clockmaker",       "farmer",
    "firefighter",     "street artist",    "scuba diver",      "falconer",         "tea master",
    "surfer",          "lantern maker",    "violinist",        "giant tortoise"};

constexpr std::array<std::string_view, 32> kActions = {
    "resting",          "playing",           "reading a map",      "watching the horizon",
    "chasing butterflies", "carrying lanterns", "feeding pigeons",  "sketching quietly",
    "walking slowly",   "dancing",           "gazing upward",      "drinking tea",
    "waiting patiently", "laughing",         "exploring",          "fishing",
    "climbing",         "sleeping",          "painting a mural",   "playing a violin",
    "taking photographs", "gathering flowers", "sharing a meal",   "telling stories",
    "working",          "racing ahead",      "standing still",     "looking back",
    "listening closely", "mending nets",     "practicing",         "wandering"};

constexpr std::array<std::string_view, 3> kComposeJoins = {" at ", " by ", " in "};
constexpr std::array<std::string_view, 3> kComposeLinks = {", ", " with ", " under "};

constexpr std::array<std::string_view, 16> kLighting = {
    "golden hour",   "soft daylight",  "overcast",       "moonlight",   "neon glow",    "candlelight",
    "backlit",       "harsh noon sun", "blue hour",      "studio light", "dappled light", "firelight",
    "foggy diffuse", "rim light",      "low key",        "high key"};

constexpr std::array<std::string_view, 12> kTones = {"warm",     "cool",       "muted",     "vibrant",
                                                     "pastel",   "high contrast", "earthy", "monochrome",
                                                     "saturated", "soft",       "moody",     "bright"};

constexpr std::array<std::string_view, 12> kMoods = {"serene",   "joyful",     "melancholic", "mysterious",
                                                     "energetic", "nostalgic", "dramatic",    "whimsical",
                                                     "romantic", "tense",      "peaceful",    "hopeful"};

constexpr std::array<std::string_view, 12> kGenres = {"photography",    "oil painting", "watercolor",
                                                      "digital art",    "anime",        "cinematic still",
                                                      "concept art",    "illustration", "fantasy art",
                                                      "documentary photo", "pixel art", "storybook illustration"};

const std::vector<std::pair<std::string, std::string>> kLightingRules = {
    {"sunset", "golden hour"},   {"sunrise", "soft daylight"}, {"moonlight", "moonlight"},
    {"neon", "neon glow"},       {"storm", "overcast"},        {"candlelight", "candlelight"},
    {"fog", "foggy diffuse"},    {"mist", "foggy diffuse"},    {"starlight", "moonlight"},
};

constexpr std::array<std::string_view, 28> kStopwords = {
    "a",  "an",   "the",  "of",   "in",    "on",   "at",   "with",  "and",    "or",
    "to", "by",   "for",  "from", "near",  "over", "into", "under", "during", "its",
    "is", "are",  "as",   "up",   "above", "below", "beside", "facing"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& pool, Rng& rng) {
  return pool[rng.below(N)];
}

std::string ctx_string(const nlohmann::json& context, const char* key) {
  auto it = context.find(key);
  if (it == context.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

std::string join(std::initializer_list<std::string_view> parts) {
  std::string out;
  for (auto p : parts) out += p;
  return out;
}

std::string mock_child(const StageRequest& req, Rng& rng) {
  const auto& ctx = req.context;
  switch (req.stage) {
    case Stage::Subcategory:
      return join({pick(kSubcatModifiers, rng), " ", ctx_string(ctx, "category")});
    case Stage::Subsubcategory:
      return join({pick(kSubsubModifiers, rng), " ", ctx_string(ctx, "subcategory")});
    case Stage::Idea:
      return join({pick(kLightPhrases, rng), " ", pick(kLightVerbs, rng), " ", ctx_string(ctx, "subsubcategory")});
    case Stage::Location:
      return join({pick(kPlaces, rng), " ", pick(kRelations, rng), " ", pick(kLandmarks, rng)});
    case Stage::Subject: {
      // Each category draws from a narrow band of agents, so subjects cluster
      // by category on the map.
      const std::size_t band = hash64(ctx_string(ctx, "category")) % kAgents.size();
      const std::string_view agent = kAgents[(band + rng.below(8)) % kAgents.size()];
      return join({agent, " ", pick(kActions, rng)});
    }
    default:
      throw ValidationError("stage '" + std::string(stage_name(req.stage)) + "' is not an expansion stage");
  }
}

}  // namespace

std::string_view stage_name(Stage stage) {
  for (const auto& [s, name] : kStageNames)
    if (s == stage) return name;
  return "unknown";
}

Stage stage_from_name(std::string_view name) {
  for (const auto& [s, n] : kStageNames)
    if (n == name) return s;
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

bool is_stopword(std::string_view token) {
  return std::find(kStopwords.begin(), kStopwords.end(), token) != kStopwords.end();
}

InstructionTemplates::InstructionTemplates() : text_(default_templates()) {}

InstructionTemplates InstructionTemplates::from_directory(const std::filesystem::path& dir) {
  InstructionTemplates t;
  if (!std::filesystem::is_directory(dir)) throw IoError("templates directory not found: " + dir.string());
  for (auto& [name, text] : t.text_) {
    const auto file = dir / (name + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::ifstream in(file);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  }
  return t;
}

const std::string& InstructionTemplates::raw(std::string_view name) const {
  auto it = text_.find(name);
  if (it == text_.end()) throw ValidationError("no instruction template for '" + std::string(name) + "'");
  return it->second;
}

std::string InstructionTemplates::render(std::string_view name, std::size_t n, const nlohmann::json& context) const {
  std::string out = raw(name);
  auto replace_all = [&out](const std::string& key, const std::string& value) {
    const std::string needle = "{" + key + "}";
    for (auto pos = out.find(needle); pos != std::string::npos; pos = out.find(needle, pos + value.size()))
      out.replace(pos, needle.size(), value);
  };
  replace_all("n", std::to_string(n));
  for (auto it = context.begin(); it != context.end(); ++it)
    replace_all(it.key(), it->is_string() ? it->get<std::string>() : it->dump());
  return out;
}

// ---- TemplateMockBackend ----

std::vector<std::string> TemplateMockBackend::expand(const StageRequest& request) {
  std::vector<std::string> items;
  items.reserve(request.n);
  for (std::size_t i = 0; i < request.n; ++i) {
    Rng rng(hash_combine({request.seed, i}));
    items.push_back(mock_child(request, rng));
  }
  return items;
}

std::string TemplateMockBackend::compose(const std::string& idea, const std::string& location,
                                         const std::string& subject, std::uint64_t seed) {
  Rng rng(seed);
  const auto form = rng.below(kComposeJoins.size());
  return join({subject, kComposeJoins[form], location, kComposeLinks[form], idea});
}

const std::vector<std::pair<std::string, std::string>>& TemplateMockBackend::lighting_rules() {
  return kLightingRules;
}

AnnotationSet TemplateMockBackend::annotate(const std::string& prompt, const ExpansionLineage& lineage,
                                            std::uint64_t seed) {
  AnnotationSet a;
  a.location = lineage.location_caption;
  a.subject = lineage.subject_caption;
  const auto tokens = tokenize(prompt);
  const std::unordered_set<std::string> token_set(tokens.begin(), tokens.end());
  for (const auto& [keyword, lighting] : kLightingRules) {
    if (token_set.contains(keyword)) {
      a.lighting = lighting;
      break;
    }
  }
  const std::uint64_t h = hash64(prompt, seed);
  if (a.lighting.empty()) a.lighting = kLighting[hash_combine({h, 1}) % kLighting.size()];
  a.tone = kTones[hash_combine({h, 2}) % kTones.size()];
  a.mood = kMoods[hash_combine({h, 3}) % kMoods.size()];
  a.genre = kGenres[hash_combine({h, 4}) % kGenres.size()];
  return a;
}

std::string TemplateMockBackend::label(std::span<const std::string> subjects) {
  // Two most frequent non-stopword tokens; ties go to the earlier first sighting.
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> freq;  // token -> (count, first seen)
  std::size_t order = 0;
  for (const auto& s : subjects)
    for (auto& tok : tokenize(s)) {
      if (is_stopword(tok)) continue;
      auto [it, inserted] = freq.try_emplace(tok, 0, order++);
      ++it->second.first;
    }
  if (freq.empty()) return "untitled";
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::string out = ranked[0].first;
  if (ranked.size() > 1) out += " " + ranked[1].first;
  return out;
}

// ---- RemoteLlmBackend ----

RemoteLlmBackend::RemoteLlmBackend(RemoteEndpoint endpoint, InstructionTemplates templates, std::size_t max_in_flight)
    : endpoint_(std::move(endpoint)),
      templates_(std::move(templates)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_in_flight))) {
  if (endpoint_.url.empty()) throw ValidationError("remote LLM backend needs an endpoint");
}

nlohmann::json RemoteLlmBackend::call(std::string_view name, std::size_t n, const nlohmann::json& context,
                                      std::uint64_t seed) {
  nlohmann::json body;
  body["instruction"] = templates_.render(name, n, context);
  body["n"] = n;
  body["context"] = context;
  body["context"]["seed"] = seed;
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{in_flight_};
  auto reply = post_json(endpoint_, body);
  auto it = reply.find("items");
  if (it == reply.end() || !it->is_array())
    throw BackendError("LLM reply for '" + std::string(name) + "' lacks an 'items' array", 200, false);
  return *it;
}

std::vector<std::string> RemoteLlmBackend::expand(const StageRequest& request) {
  const auto items = call(stage_name(request.stage), request.n, request.context, request.seed);
  std::vector<std::string> out;
  for (const auto& item : items) {
    if (out.size() == request.n) break;
    if (item.is_string() && !item.get<std::string>().empty()) out.push_back(item.get<std::string>());
  }
  return out;
}

std::string RemoteLlmBackend::compose(const std::string& idea, const std::string& location,
                                      const std::string& subject, std::uint64_t seed) {
  const nlohmann::json ctx = {{"idea_caption", idea}, {"location_caption", location}, {"subject_caption", subject}};
  const auto items = call("prompt", 1, ctx, seed);
  if (items.empty() || !items[0].is_string()) throw BackendError("LLM returned no prompt", 200, false);
  return items[0].get<std::string>();
}

AnnotationSet RemoteLlmBackend::annotate(const std::string& prompt, const ExpansionLineage& lineage,
                                         std::uint64_t seed) {
  const nlohmann::json ctx = {{"prompt", prompt},
                              {"location_caption", lineage.location_caption},
                              {"subject_caption", lineage.subject_caption}};
  const auto items = call("annotation", 1, ctx, seed);
  if (items.empty() || !items[0].is_object()) throw BackendError("LLM returned no annotation object", 200, false);
  const auto& obj = items[0];
  AnnotationSet a;
  for (auto name : AnnotationSet::kFields) {
    auto it = obj.find(std::string(name));
    const bool optional = name == "location" || name == "subject";
    if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) {
      if (optional) continue;
      throw BackendError("annotation reply is missing field '" + std::string(name) + "'", 200, false);
    }
    a.field(name) = it->get<std::string>();
  }
  return a;
}

std::string RemoteLlmBackend::label(std::span<const std::string> subjects) {
  std::string joined;
  for (const auto& s : subjects) {
    if (!joined.empty()) joined += "; ";
    joined += s;
  }
  const auto items = call("label", 1, {{"subjects", joined}}, 0);
  if (items.empty() || !items[0].is_string()) throw BackendError("LLM returned no label", 200, false);
  return items[0].get<std::string>();
}

// ---- validating wrappers ----

std::string compose_prompt(TextBackend& backend, const std::string& idea, const std::string& location,
                           const std::string& subject, std::uint64_t seed) {
  if (idea.empty()) throw ValidationError("compose_prompt: empty idea");
  if (location.empty()) throw ValidationError("compose_prompt: empty location");
  if (subject.empty()) throw ValidationError("compose_prompt: empty subject");
  auto prompt = backend.compose(idea, location, subject, seed);
  if (prompt.empty()) throw BackendError("backend produced an empty prompt", 200, false);
  // Keep prompts single-line so they round-trip through line-based tools.
  std::replace(prompt.begin(), prompt.end(), '\n', ' ');
  return prompt;
}

AnnotationSet annotate_prompt(TextBackend& backend, const std::string& prompt, const ExpansionLineage& lineage,
                              std::uint64_t seed) {
  if (prompt.empty()) throw ValidationError("annotate_prompt: empty prompt");
  auto a = backend.annotate(prompt, lineage, seed);
  if (a.location.empty()) a.location = lineage.location_caption;
  if (a.subject.empty()) a.subject = lineage.subject_caption;
  for (auto name : AnnotationSet::kFields)
    if (a.field(name).empty()) throw BackendError("annotation field '" + std::string(name) + "' is empty", 200, false);
  return a;
}

}  // namespace atlas
