/*
 * Copyright 2026 The ucfl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// The server side of the federation must compile without any audio or
// feature-extraction code: it only ever sees weight updates.

#include <gtest/gtest.h>

#include "ucfl/cfl_server.hpp"

#if defined(UCFL_FEATURES_HPP) || defined(UCFL_AUDIO_HPP)
#error "cfl_server.hpp pulls in audio or feature code"
#endif

namespace {

struct UpdateOnlyClient {
    std::size_t id() const { return 0; }
    ucfl::WeightDelta train_round(const ucfl::DenseNetwork&, const ucfl::RoundContext&) const { return {}; }
};

struct LeakyClient {
    std::size_t id() const { return 0; }
    std::vector<double> train_round(const ucfl::DenseNetwork&, const ucfl::RoundContext&) const { return {}; }
    std::vector<double> raw_features() const { return {}; }
};

}  // namespace

static_assert(ucfl::FederatedClient<UpdateOnlyClient>);
static_assert(!ucfl::FederatedClient<LeakyClient>);

TEST(PrivacyBoundary, ServerHeaderIsAudioFree) { SUCCEED(); }
