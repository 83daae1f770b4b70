#pragma once

#include "guard/composed.hpp"
#include "guard/constraints.hpp"
#include "guard/context_table.hpp"
#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/gold.hpp"
#include "guard/metrics.hpp"
#include "guard/model.hpp"
#include "guard/policy.hpp"
#include "guard/random.hpp"
#include "guard/samplers.hpp"
#include "guard/sequence.hpp"
#include "guard/serialize.hpp"
#include "guard/training.hpp"
