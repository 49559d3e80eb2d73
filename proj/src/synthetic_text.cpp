#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "patchlm/data.hpp"

namespace patchlm {

namespace {

class Lexicon {
 public:
  Lexicon(std::mt19937_64& rng, std::size_t size, int min_syllables, int max_syllables) {
    static constexpr std::array<const char*, 18> onsets = {"b", "c", "d", "f", "g", "h",  "l",
                                                           "m", "n", "p", "r", "s", "t",  "v",
                                                           "st", "tr", "ch", "br"};
    static constexpr std::array<const char*, 8> nuclei = {"a", "e", "i", "o", "u", "ea", "ou", "ai"};
    static constexpr std::array<const char*, 8> codas = {"", "", "n", "r", "s", "l", "nd", "t"};
    std::uniform_int_distribution<int> syl(min_syllables, max_syllables);
    while (words_.size() < size) {
      std::string w;
      const int n = syl(rng);
      for (int i = 0; i < n; ++i) {
        w += onsets[rng() % onsets.size()];
        w += nuclei[rng() % nuclei.size()];
        if (i + 1 == n || rng() % 3 == 0) w += codas[rng() % codas.size()];
      }
      words_.push_back(std::move(w));
    }
    // Zipf(1.1) over rank.
    double total = 0;
    for (std::size_t r = 0; r < size; ++r) {
      total += 1.0 / std::pow(double(r + 1), 1.1);
      cumulative_.push_back(total);
    }
    for (auto& c : cumulative_) c /= total;
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_[i]; }

  std::size_t sample(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::size_t(it - cumulative_.begin()) % words_.size();
  }

 private:
  std::vector<std::string> words_;
  std::vector<double> cumulative_;
};

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = char(w[0] - 'a' + 'A');
  return w;
}

}  // namespace

std::string synthetic_text(std::size_t bytes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Lexicon nouns(rng, 900, 1, 3);
  const Lexicon verbs(rng, 300, 1, 2);
  const Lexicon adjectives(rng, 300, 1, 3);
  static constexpr std::array<const char*, 6> determiners = {"the", "the", "a", "this", "every", "some"};
  static constexpr std::array<const char*, 7> prepositions = {"in", "on", "near", "with", "under", "from", "after"};
  static constexpr std::array<const char*, 4> verb_endings = {"s", "ed", "s", "es"};

  // Each noun prefers a few verbs and adjectives.
  std::vector<std::array<std::size_t, 3>> noun_verbs(nouns.size()), noun_adjs(nouns.size());
  for (std::size_t i = 0; i < nouns.size(); ++i) {
    for (auto& v : noun_verbs[i]) v = verbs.sample(rng);
    for (auto& a : noun_adjs[i]) a = adjectives.sample(rng);
  }

  std::string out;
  out.reserve(bytes + 256);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  while (out.size() < bytes) {
    // Document: a topic anchors a handful of nouns that recur throughout.
    std::array<std::size_t, 6> topic{};
    for (auto& t : topic) t = nouns.sample(rng);
    out += "== " + capitalize(nouns.word(topic[0])) + " " + nouns.word(topic[1]) + " ==\n\n";
    auto pick_noun = [&] { return coin(rng) < 0.45 ? topic[rng() % topic.size()] : nouns.sample(rng); };
    const int paragraphs = 2 + int(rng() % 4);
    for (int p = 0; p < paragraphs; ++p) {
      const int sentences = 3 + int(rng() % 5);
      for (int s = 0; s < sentences; ++s) {
        std::string sent;
        const std::size_t subj = pick_noun();
        sent += capitalize(determiners[rng() % determiners.size()]);
        if (coin(rng) < 0.5) sent += " " + adjectives.word(noun_adjs[subj][rng() % 3]);
        sent += " " + nouns.word(subj);
        const std::size_t verb = coin(rng) < 0.75 ? noun_verbs[subj][rng() % 3] : verbs.sample(rng);
        sent += " " + verbs.word(verb) + verb_endings[verb % verb_endings.size()];
        if (coin(rng) < 0.7) {
          const std::size_t obj = pick_noun();
          sent += std::string(" ") + determiners[rng() % determiners.size()];
          if (coin(rng) < 0.4) sent += " " + adjectives.word(noun_adjs[obj][rng() % 3]);
          sent += " " + nouns.word(obj);
        }
        if (coin(rng) < 0.35) {
          sent += std::string(" ") + prepositions[rng() % prepositions.size()] + " the " +
                  nouns.word(pick_noun());
        }
        if (coin(rng) < 0.08) sent += " in " + std::to_string(1700 + rng() % 320);
        sent += coin(rng) < 0.9 ? ". " : "; ";
        out += sent;
      }
      out += "\n\n";
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace patchlm
