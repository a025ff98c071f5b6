// Copyright 2026 The FlashComm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "flashcomm/bitpack.hpp"
#include "flashcomm/codec.hpp"
#include "flashcomm/collectives.hpp"
#include "flashcomm/costmodel.hpp"
#include "flashcomm/errors.hpp"
#include "flashcomm/fabric.hpp"
#include "flashcomm/fp16.hpp"
#include "flashcomm/hadamard.hpp"
#include "flashcomm/manifest.hpp"
#include "flashcomm/minifloat.hpp"
#include "flashcomm/table.hpp"
#include "flashcomm/workload.hpp"
