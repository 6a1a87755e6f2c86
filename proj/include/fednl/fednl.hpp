/*
 * Copyright 2026 The fednl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "fednl/contribution.hpp"
#include "fednl/dataset.hpp"
#include "fednl/engine.hpp"
#include "fednl/error.hpp"
#include "fednl/experiment.hpp"
#include "fednl/metrics.hpp"
#include "fednl/noise_estimator.hpp"
#include "fednl/noise_model.hpp"
#include "fednl/random.hpp"
#include "fednl/report.hpp"
#include "fednl/round_estimator.hpp"
#include "fednl/server_exchange.hpp"
#include "fednl/trainer.hpp"
