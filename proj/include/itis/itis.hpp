// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
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

#ifndef ITIS_ITIS_HPP
#define ITIS_ITIS_HPP

#include "itis/bridge.hpp"
#include "itis/errors.hpp"
#include "itis/evaluation.hpp"
#include "itis/guidance.hpp"
#include "itis/image.hpp"
#include "itis/png_io.hpp"
#include "itis/predictor.hpp"
#include "itis/raster.hpp"
#include "itis/rng.hpp"
#include "itis/sampling.hpp"
#include "itis/service.hpp"
#include "itis/simloop.hpp"

#endif  // ITIS_ITIS_HPP
