#pragma once

#include "spde/config.hpp"
#include "spde/csv.hpp"
#include "spde/errors.hpp"
#include "spde/experiment.hpp"
#include "spde/fem.hpp"
#include "spde/level_set.hpp"
#include "spde/mesh.hpp"
#include "spde/model.hpp"
#include "spde/newton.hpp"
#include "spde/random.hpp"
#include "spde/solver.hpp"
