// Writes the bundled training corpus: grammar-generated prose, arithmetic
// question/answer pairs and worked-arithmetic CoT records, one per line.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blockdiff/rng.hpp"

namespace {

using blockdiff::Rng;
using Words = std::vector<std::string>;

const Words kNames = {"the miller", "a sailor", "the old clerk", "my neighbour", "the baker",
                      "a young scholar", "the keeper", "her brother", "the farmer", "a traveller",
                      "the captain", "the weaver", "our teacher", "the smith", "a stranger"};
const Words kVerbs = {"carried", "found", "mended", "painted", "sold", "watched", "opened",
                      "counted", "lost", "cleaned", "borrowed", "measured", "packed", "noticed"};
const Words kAdjs = {"small", "heavy", "green", "broken", "quiet", "bright", "narrow", "wooden",
                     "cold", "round", "dusty", "silver", "tall", "gentle", "plain"};
const Words kNouns = {"lamp", "boat", "letter", "basket", "window", "garden", "ladder", "clock",
                      "bridge", "kettle", "map", "door", "bell", "wagon", "field", "coat"};
const Words kPlaces = {"by the river", "near the market", "in the morning", "at the mill",
                       "after the rain", "before supper", "on the hill", "under the old tree",
                       "in the square", "along the road"};
const Words kEndings = {"and went home", "without a word", "for the second time",
                        "while the bells rang", "as the light faded", "with great care",
                        "and smiled", "before anyone noticed"};

const std::string& pick(Rng& rng, const Words& w) { return w[rng.below(w.size())]; }

std::string capitalized(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') {
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
  }
  return s;
}

std::string sentence(Rng& rng) {
  std::string s = capitalized(pick(rng, kNames)) + " " + pick(rng, kVerbs) + " the " +
                  pick(rng, kAdjs) + " " + pick(rng, kNouns);
  if (rng.bernoulli(0.6)) {
    s += " " + pick(rng, kPlaces);
  }
  if (rng.bernoulli(0.3)) {
    s += " " + pick(rng, kEndings);
  }
  return s + ".";
}

std::string prose(Rng& rng) {
  std::string line = sentence(rng);
  if (rng.bernoulli(0.5)) {
    line += " " + sentence(rng);
  }
  return line.size() > 110 ? sentence(rng) : line;
}

std::string qa(Rng& rng) {
  const auto a = rng.below(50);
  const auto b = rng.below(50);
  return "Q: " + std::to_string(a) + "+" + std::to_string(b) + "?\tA: " + std::to_string(a + b);
}

std::string cot(Rng& rng) {
  const auto a = 10 + rng.below(40);
  const auto b = 10 + rng.below(40);
  const auto tens = (a / 10 + b / 10) * 10;
  const auto ones = a % 10 + b % 10;
  return "COT\tQ: " + std::to_string(a) + "+" + std::to_string(b) + "?\t" + std::to_string(tens) +
         " and " + std::to_string(ones) + " make " + std::to_string(tens + ones) + "\tA: " +
         std::to_string(a + b);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the bundled text corpus"};
  std::string out = "corpus.txt";
  std::size_t bytes = 1 << 20;
  std::uint64_t seed = 20251;
  app.add_option("-o,--out", out, "Output path");
  app.add_option("--bytes", bytes, "Approximate size in bytes");
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);

  Rng rng(blockdiff::derive_seed(seed, {0xc0}));
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) {
    std::cerr << "cannot write " << out << "\n";
    return 1;
  }
  std::size_t written = 0;
  while (written < bytes) {
    const double u = rng.uniform01();
    const std::string line = u < 0.75 ? prose(rng) : u < 0.9 ? qa(rng) : cot(rng);
    f << line << "\n";
    written += line.size() + 1;
  }
  return 0;
}
