#pragma once

#include "topo/adaptivity.hpp"
#include "topo/config.hpp"
#include "topo/constraints.hpp"
#include "topo/dofmap.hpp"
#include "topo/fem.hpp"
#include "topo/mechanics.hpp"
#include "topo/mesh.hpp"
#include "topo/mma.hpp"
#include "topo/optimization.hpp"
#include "topo/presets.hpp"
#include "topo/regularization.hpp"
#include "topo/runner.hpp"
#include "topo/vtk.hpp"
