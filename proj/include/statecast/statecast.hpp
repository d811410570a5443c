#pragma once

// Umbrella header: predictive-state reconstruction, forecasting, and
// simulation for (1+1)D spatio-temporal fields.

#include "statecast/density.hpp"
#include "statecast/dynamics.hpp"
#include "statecast/engine.hpp"
#include "statecast/errors.hpp"
#include "statecast/field.hpp"
#include "statecast/field_io.hpp"
#include "statecast/forecast.hpp"
#include "statecast/model.hpp"
#include "statecast/model_io.hpp"
#include "statecast/rng.hpp"
