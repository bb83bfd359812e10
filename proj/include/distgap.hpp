#pragma once

#include "distgap/error.hpp"
#include "distgap/rng.hpp"
#include "distgap/atoms.hpp"
#include "distgap/quadrature.hpp"
#include "distgap/grid.hpp"
#include "distgap/model.hpp"
#include "distgap/marginal.hpp"
#include "distgap/transport.hpp"
#include "distgap/hjb.hpp"
#include "distgap/oracles.hpp"
#include "distgap/conditional.hpp"
#include "distgap/sde.hpp"
#include "distgap/distributed.hpp"
#include "distgap/fbsde.hpp"
#include "distgap/metrics.hpp"
#include "distgap/bounds.hpp"
#include "distgap/meanfield.hpp"
