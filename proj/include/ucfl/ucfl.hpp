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

#ifndef UCFL_UCFL_HPP
#define UCFL_UCFL_HPP

#include "ucfl/audio.hpp"
#include "ucfl/autoencoder.hpp"
#include "ucfl/cfl.hpp"
#include "ucfl/cfl_server.hpp"
#include "ucfl/checkpoint.hpp"
#include "ucfl/core.hpp"
#include "ucfl/eval.hpp"
#include "ucfl/experiment.hpp"
#include "ucfl/features.hpp"
#include "ucfl/fft.hpp"
#include "ucfl/membership.hpp"
#include "ucfl/nn.hpp"
#include "ucfl/scene.hpp"

#endif  // UCFL_UCFL_HPP
