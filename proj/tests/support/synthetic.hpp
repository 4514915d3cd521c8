/* Copyright 2026 The VirAAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VIRAAL_TESTS_SUPPORT_SYNTHETIC_HPP_
#define VIRAAL_TESTS_SUPPORT_SYNTHETIC_HPP_

// Templated toy NLU corpus and tiny model dimensions shared by the test suites.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "viraal/corpus.hpp"
#include "viraal/model.hpp"

namespace viraal::testing {

struct Entity {
  std::vector<std::string> words;
};

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Template pieces: plain words, or "{kind:slot}" placeholders filled from a
/// small gazetteer and tagged B-slot / I-slot.
inline std::vector<Example> synthetic_corpus(std::size_t n, std::uint64_t seed,
                                             Split split = Split::kTrain, int first_id = 0) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kTemplates = {
      {"flight", {"show flights from {city:fromloc} to {city:toloc}",
                  "i need a flight from {city:fromloc} to {city:toloc} on {day:depart_date}",
                  "list flights to {city:toloc} {day:depart_date}"}},
      {"airfare", {"how much is a ticket from {city:fromloc} to {city:toloc}",
                   "cheapest fare to {city:toloc}", "what is the price of flights to {city:toloc}"}},
      {"weather", {"what is the weather in {city:city} {day:date}",
                   "will it rain in {city:city}", "forecast for {city:city} on {day:date}"}},
      {"play_music", {"play {artist:artist} songs", "play some {genre:genre} music",
                      "put on {genre:genre} by {artist:artist}"}},
      {"book_restaurant", {"book a table for {num:party_size} at {restaurant:restaurant}",
                           "reserve {restaurant:restaurant} for {num:party_size} people {day:date}"}},
  };
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kGazetteer = {
      {"city", {"boston", "denver", "new york", "san francisco", "dallas", "atlanta", "salt lake city"}},
      {"day", {"monday", "tuesday", "friday", "tomorrow", "next week"}},
      {"artist", {"madonna", "the beatles", "miles davis", "queen"}},
      {"genre", {"jazz", "rock", "hip hop", "classical"}},
      {"num", {"two", "four", "six"}},
      {"restaurant", {"the olive garden", "chez panisse", "sushi bar"}},
  };
  auto gazetteer = [&](const std::string& kind) -> const std::vector<std::string>& {
    for (const auto& [k, v] : kGazetteer) {
      if (k == kind) return v;
    }
    throw std::logic_error("unknown gazetteer " + kind);
  };

  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [intent, templates] = kTemplates[i % kTemplates.size()];
    const auto& tmpl = templates[std::uniform_int_distribution<std::size_t>(0, templates.size() - 1)(rng)];
    Example ex;
    ex.split = split;
    ex.utterance.id = first_id + static_cast<int>(i);
    Annotation ann;
    ann.intent = intent;
    for (const auto& piece : split_words(tmpl)) {
      if (piece.front() == '{') {
        const auto colon = piece.find(':');
        const std::string kind = piece.substr(1, colon - 1);
        const std::string slot = piece.substr(colon + 1, piece.size() - colon - 2);
        const auto& choices = gazetteer(kind);
        const auto words = split_words(choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)]);
        for (std::size_t w = 0; w < words.size(); ++w) {
          ex.utterance.tokens.push_back(words[w]);
          ann.slots.push_back((w == 0 ? "B-" : "I-") + slot);
        }
      } else {
        ex.utterance.tokens.push_back(piece);
        ann.slots.push_back("O");
      }
    }
    ex.annotation = std::move(ann);
    out.push_back(std::move(ex));
  }
  return out;
}

/// Toy dimensions: a few hundred parameters at most for small vocabularies.
inline ModelDims tiny_dims(int vocab, int intents, int slots) {
  ModelDims d;
  d.vocab = vocab;
  d.word_dim = 3;
  d.hidden = 2;
  d.slot_dim = 2;
  d.attention = 2;
  d.intents = intents;
  d.slots = slots;
  return d;
}

/// Small model suitable for fast training tests.
inline ModelDims small_dims(const Vocabulary& vocab) {
  ModelDims d = dims_for(vocab, 16);
  d.hidden = 16;
  d.slot_dim = 8;
  d.attention = 16;
  return d;
}

}  // namespace viraal::testing

#endif  // VIRAAL_TESTS_SUPPORT_SYNTHETIC_HPP_
