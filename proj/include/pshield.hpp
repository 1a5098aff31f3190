#pragma once

#include "pshield/environments.hpp"
#include "pshield/error.hpp"
#include "pshield/geometry.hpp"
#include "pshield/learner.hpp"
#include "pshield/mdp.hpp"
#include "pshield/model_io.hpp"
#include "pshield/random.hpp"
#include "pshield/reach.hpp"
#include "pshield/shield.hpp"
#include "pshield/verifier.hpp"
