#pragma once

#include "steinflow/common.hpp"
#include "steinflow/dataset.hpp"
#include "steinflow/diagnostics.hpp"
#include "steinflow/dynamics.hpp"
#include "steinflow/kernel.hpp"
#include "steinflow/stein.hpp"
#include "steinflow/targets.hpp"
