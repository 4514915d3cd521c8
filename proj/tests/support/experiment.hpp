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

#ifndef VIRAAL_TESTS_SUPPORT_EXPERIMENT_HPP_
#define VIRAAL_TESTS_SUPPORT_EXPERIMENT_HPP_

#include <string>

#include "support/synthetic.hpp"
#include "viraal/harness.hpp"

namespace viraal::testing {

inline Dataset synthetic_dataset(const std::string& name, std::size_t train, std::size_t dev,
                                 std::size_t test, std::uint64_t seed = 3) {
  Dataset d;
  d.name = name;
  d.train = synthetic_corpus(train, seed, Split::kTrain, 0);
  d.dev = synthetic_corpus(dev, seed + 1, Split::kDev, static_cast<int>(train));
  d.test = synthetic_corpus(test, seed + 2, Split::kTest, static_cast<int>(train + dev));
  d.content_hash = fnv1a(name + std::to_string(train) + "/" + std::to_string(seed));
  return d;
}

/// A model small enough to train a few epochs in well under a second.
inline RunConfig fast_config() {
  RunConfig c;
  c.embedding_size = 8;
  c.hidden = 8;
  c.slot_embedding = 4;
  c.attention = 8;
  c.epochs = 3;
  c.epochs_vat = 3;
  c.batch_size = 16;
  c.batch_size_vat = 16;
  c.learning_rate = 0.01;
  c.vat.epsilon = 1.0;
  return c;
}

inline ExperimentContext synthetic_context(const std::string& name = "atis-synthetic",
                                           std::size_t train = 200) {
  return make_context(synthetic_dataset(name, train, 30, 40), fast_config());
}

}  // namespace viraal::testing

#endif  // VIRAAL_TESTS_SUPPORT_EXPERIMENT_HPP_
