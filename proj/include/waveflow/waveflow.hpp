/* Copyright (c) 2026 The WaveFlow Engine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include "waveflow/autodiff.hpp"
#include "waveflow/conditioner.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/flow.hpp"
#include "waveflow/io.hpp"
#include "waveflow/kernels.hpp"
#include "waveflow/model.hpp"
#include "waveflow/network.hpp"
#include "waveflow/reference.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/synth.hpp"
#include "waveflow/tensor.hpp"
#include "waveflow/train.hpp"
#include "waveflow/verify.hpp"
#include "waveflow/wav.hpp"
