#pragma once

#include "maptree/analysis.hpp"
#include "maptree/config.hpp"
#include "maptree/error.hpp"
#include "maptree/fmap.hpp"
#include "maptree/geodesic.hpp"
#include "maptree/map_tree.hpp"
#include "maptree/mesh.hpp"
#include "maptree/metrics.hpp"
#include "maptree/parallel.hpp"
#include "maptree/refine.hpp"
#include "maptree/run.hpp"
#include "maptree/select.hpp"
#include "maptree/spectral.hpp"
