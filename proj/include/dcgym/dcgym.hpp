#pragma once

#include "dcgym/config.hpp"
#include "dcgym/environment.hpp"
#include "dcgym/eval.hpp"
#include "dcgym/lp.hpp"
#include "dcgym/mpc.hpp"
#include "dcgym/physics.hpp"
#include "dcgym/policies.hpp"
#include "dcgym/types.hpp"
#include "dcgym/workload.hpp"
