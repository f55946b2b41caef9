// Copyright 2026 The UniNL Toolkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UNINL__UNINL_HPP_
#define UNINL__UNINL_HPP_

#include "uninl/numerics.hpp"
#include "uninl/data.hpp"
#include "uninl/encoder.hpp"
#include "uninl/objectives.hpp"
#include "uninl/trainer.hpp"
#include "uninl/detection.hpp"
#include "uninl/eval.hpp"
#include "uninl/serialization.hpp"

#endif  // UNINL__UNINL_HPP_
