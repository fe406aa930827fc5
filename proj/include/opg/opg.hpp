// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Convenience header pulling in the whole library.

#pragma once

#include "opg/errors.hpp"
#include "opg/eval.hpp"
#include "opg/geometry.hpp"
#include "opg/io.hpp"
#include "opg/labels.hpp"
#include "opg/mil_head.hpp"
#include "opg/partition.hpp"
#include "opg/random.hpp"
#include "opg/schedule.hpp"
#include "opg/synth.hpp"
#include "opg/trainer.hpp"
