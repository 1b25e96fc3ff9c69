#include "atlas/pipeline.hpp"

namespace atlas {

// Placeholder list written for this project: 160 broad image categories.
// Replace freely; nothing downstream depends on the wording.
const std::vector<std::string>& seed_categories() {
  static const std::vector<std::string> categories = {
      "landscapes",         "cityscapes",          "portraits",           "wildlife",
      "still life",         "architecture",        "interiors",           "street scenes",
      "seascapes",          "mountains",           "forests",             "deserts",
      "rivers and lakes",   "gardens",             "farmland",            "villages",
      "castles",            "temples",             "bridges",             "lighthouses",
      "harbors",            "markets",             "festivals",           "concerts",
      "sports",             "dance",               "theater",             "circus",
      "fairgrounds",        "amusement parks",     "trains",              "ships",
      "aircraft",           "cars",                "bicycles",            "spacecraft",
      "robots",             "machines",            "factories",           "workshops",
      "kitchens",           "food",                "desserts",            "drinks",
      "cafes",              "restaurants",         "libraries",           "museums",
      "schools",            "laboratories",        "hospitals",           "offices",
      "bedrooms",           "living rooms",        "rooftops",            "alleys",
      "subways",            "highways",            "airports",            "train stations",
      "beaches",            "islands",             "coral reefs",         "underwater worlds",
      "caves",              "volcanoes",           "glaciers",            "polar regions",
      "jungles",            "savannas",            "wetlands",            "canyons",
      "night skies",        "galaxies",            "planets",             "weather",
      "storms",             "seasons",             "sunrises",            "sunsets",
      "birds",              "insects",             "fish",                "reptiles",
      "pets",               "horses",              "farm animals",        "big cats",
      "mythical creatures", "dragons",             "fairies",             "monsters",
      "heroes",             "knights",             "wizards",             "pirates",
      "explorers",          "astronauts",          "soldiers",            "samurai",
      "cowboys",            "royalty",             "children playing",    "families",
      "couples",            "elderly people",      "crowds",              "workers",
      "musicians",          "artists",             "athletes",            "dancers",
      "fashion",            "costumes",            "jewelry",             "textiles",
      "pottery",            "sculptures",          "paintings",           "murals",
      "graffiti",           "toys",                "games",               "puppets",
      "books",              "maps",                "clocks",              "instruments",
      "tools",               "armor",               "furniture",
      "staircases",
      "fountains",          "statues",             "ruins",               "monuments",
      "holidays",           "weddings",            "parades",             "celebrations",
      "folklore",           "fairy tales",         "science fiction scenes", "fantasy worlds",
      "steampunk inventions", "cyberpunk cities",  "post apocalyptic scenes", "utopian cities",
      "abstract patterns",  "geometric shapes",    "textures",            "microscopic worlds",
      "flowers",            "trees",               "fruits",              "vegetables",
      "minerals",           "fire",                "water",               "light and shadow",
  };
  return categories;
}

}  // namespace atlas
