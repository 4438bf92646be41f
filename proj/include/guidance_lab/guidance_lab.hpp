#pragma once

#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/cfgig.hpp"
#include "guidance_lab/config.hpp"
#include "guidance_lab/core.hpp"
#include "guidance_lab/experiment.hpp"
#include "guidance_lab/gaussian_mixture.hpp"
#include "guidance_lab/gaussian_theory.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/io.hpp"
#include "guidance_lab/metrics.hpp"
#include "guidance_lab/parallel.hpp"
#include "guidance_lab/particles.hpp"
#include "guidance_lab/presets.hpp"
#include "guidance_lab/quadrature.hpp"
#include "guidance_lab/rng.hpp"
#include "guidance_lab/schedule.hpp"
#include "guidance_lab/smc.hpp"
#include "guidance_lab/solvers.hpp"
