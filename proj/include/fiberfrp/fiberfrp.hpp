// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fiberfrp/types.hpp"
#include "fiberfrp/fft.hpp"
#include "fiberfrp/signal.hpp"
#include "fiberfrp/ssfm.hpp"
#include "fiberfrp/kernels.hpp"
#include "fiberfrp/frp.hpp"
#include "fiberfrp/nbgd.hpp"
#include "fiberfrp/metrics.hpp"
#include "fiberfrp/seed.hpp"
#include "fiberfrp/experiment.hpp"
