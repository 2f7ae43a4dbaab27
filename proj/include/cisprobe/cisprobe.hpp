// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "cisprobe/parallel.hpp"
#include "cisprobe/taxonomy.hpp"
#include "cisprobe/trajectory.hpp"
#include "cisprobe/backend.hpp"
#include "cisprobe/synthetic_backend.hpp"
#include "cisprobe/remote_backend.hpp"
#include "cisprobe/score.hpp"
#include "cisprobe/http_scorer.hpp"
#include "cisprobe/intervene.hpp"
#include "cisprobe/seedcontrol.hpp"
#include "cisprobe/stats.hpp"
#include "cisprobe/editeval.hpp"
#include "cisprobe/runner/registry.hpp"
#include "cisprobe/runner/manifest.hpp"
#include "cisprobe/runner/store.hpp"
#include "cisprobe/runner/execute.hpp"
#include "cisprobe/runner/report.hpp"
#include "cisprobe/runner/service.hpp"
