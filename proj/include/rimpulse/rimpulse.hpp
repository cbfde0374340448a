#pragma once

#include "rimpulse/builtins.hpp"
#include "rimpulse/config.hpp"
#include "rimpulse/errors.hpp"
#include "rimpulse/hamiltonian.hpp"
#include "rimpulse/impulse_solver.hpp"
#include "rimpulse/parallel.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/problem.hpp"
#include "rimpulse/rbsde.hpp"
#include "rimpulse/regression.hpp"
#include "rimpulse/report.hpp"
#include "rimpulse/rng.hpp"
#include "rimpulse/simulator.hpp"
#include "rimpulse/tree_oracle.hpp"
