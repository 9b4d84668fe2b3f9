#pragma once

#include "dog/conditions.hpp"
#include "dog/denoiser.hpp"
#include "dog/errors.hpp"
#include "dog/eval.hpp"
#include "dog/guidance.hpp"
#include "dog/mlp.hpp"
#include "dog/perturb.hpp"
#include "dog/rng.hpp"
#include "dog/sampler.hpp"
#include "dog/schedule.hpp"
