#include "pbd/data.hpp"

namespace pbd {

// Common English words, lowercase a-z, 3-10 letters. Sized so the synthetic
// correction task is learnable to the acceptance floor at desk scale; see the
// corpus notes in the README.
const std::vector<std::string>& builtin_words() {
  static const std::vector<std::string> words = {
      "able", "account", "actor", "admire", "advice", "against", "airport", "allow", "also", "anger",
      "announce", "anyone", "appear", "area", "around", "article", "assist", "attack", "author", "awake",
      "baby", "ball", "base", "bean", "become", "begin", "bell", "bend", "between", "bitter",
      "blind", "board", "bone", "born", "bottom", "brain", "breath", "bright", "brother", "budget",
      "burn", "busy", "cable", "came", "candle", "capital", "care", "carry", "castle", "cause",
      "cell", "cereal", "chamber", "charge", "cheap", "chest", "choice", "circle", "class", "clear",
      "cliff", "close", "club", "coast", "cold", "combine", "comment", "complex", "concrete", "connect",
      "content", "control", "copper", "corner", "cottage", "count", "courage", "crack", "cream", "cricket",
      "cross", "cruise", "curtain", "cycle", "dare", "dead", "decade", "deep", "degree", "depart",
      "describe", "desk", "develop", "diamond", "direct", "dish", "distant", "domain", "doubt", "dragon",
      "dream", "drive", "during", "eagle", "east", "edit", "eight", "electric", "embrace", "enable",
      "energy", "enough", "entrance", "equip", "estimate", "evidence", "exceed", "exhibit", "expense", "expose",
      "extreme", "fade", "fall", "fancy", "fatal", "feast", "fellow", "fiber", "fifth", "fill",
      "fine", "first", "five", "flavor", "flood", "fluid", "follow", "force", "form", "fortune",
      "fountain", "freedom", "fringe", "frozen", "function", "future", "garage", "gave", "genuine", "give",
      "global", "goat", "good", "grain", "grasp", "gray", "grief", "grocery", "guard", "guitar",
      "hammer", "happy", "harvest", "head", "heart", "hello", "hidden", "hint", "hole", "honest",
      "horn", "hotel", "huge", "hunger", "idea", "illness", "impose", "income", "indoor", "injury",
      "inside", "install", "intend", "into", "iron", "jacket", "joke", "jump", "justice", "kettle",
      "kingdom", "knife", "lack", "land", "late", "lawn", "leader", "lease", "left", "length",
      "library", "like", "link", "little", "loan", "lodge", "loop", "lost", "loyal", "lung",
      "magnet", "major", "mansion", "march", "marry", "material", "mayor", "meat", "meet", "mental",
      "merge", "meter", "mile", "minimum", "miss", "model", "monitor", "moral", "motion", "mouth",
      "muscle", "mystery", "nation", "nearby", "needle", "nerve", "news", "nine", "noon", "nothing",
      "nurse", "observe", "occur", "officer", "only", "opinion", "orchard", "original", "outer", "oven",
      "overseas", "package", "palace", "paper", "park", "pass", "paste", "pattern", "peak", "pencil",
      "perfect", "person", "phrase", "piece", "pine", "pity", "plant", "player", "plenty", "poet",
      "pole", "pond", "porch", "positive", "potato", "powder", "prefer", "preserve", "prevent", "prime",
      "private", "process", "program", "prompt", "prospect", "prove", "pull", "purchase", "push", "queen",
      "quote", "radio", "rally", "rare", "react", "reality", "recall", "record", "refer", "region",
      "relate", "remain", "remote", "repeat", "require", "resign", "respect", "resume", "return", "revise",
      "rich", "right", "risk", "robot", "roof", "rough", "rubber", "rush", "safety", "salary",
      "sample", "save", "scare", "scheme", "score", "search", "section", "seem", "sell", "sentence",
      "serve", "several", "shall", "sharp", "shift", "shoe", "should", "shrink", "sign", "silly",
      "sincere", "sister", "size", "slate", "slight", "smart", "snake", "society", "solar", "some",
      "soon", "soup", "speak", "speech", "spice", "split", "spot", "squeeze", "stair", "staple",
      "station", "steal", "stem", "stir", "storage", "straight", "stress", "strip", "student", "style",
      "succeed", "sugar", "summit", "supply", "surface", "survey", "swallow", "sweet", "switch", "tackle",
      "talent", "target", "teacher", "tenant", "tent", "text", "theater", "there", "thing", "thorough",
      "threat", "throw", "tide", "timber", "title", "told", "tonight", "total", "toward", "trade",
      "transit", "treaty", "tribute", "triumph", "true", "tune", "twenty", "typical", "under", "unit",
      "unless", "upgrade", "urge", "utility", "value", "vegetable", "verdict", "veteran", "village", "vision",
      "vivid", "voyage", "walk", "warn", "wave", "weather", "weekend", "welfare", "wheel", "while",
      "whose", "will", "winner", "wish", "wolf", "wool", "worry", "would", "writer", "yesterday",
      "zero",
  };
  return words;
}

}  // namespace pbd
