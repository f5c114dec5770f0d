#pragma once

#include "florain/activation_store.hpp"
#include "florain/error.hpp"
#include "florain/evaluation.hpp"
#include "florain/geometry.hpp"
#include "florain/intervention_map.hpp"
#include "florain/json_io.hpp"
#include "florain/parallel.hpp"
#include "florain/region_estimator.hpp"
#include "florain/trainer.hpp"
