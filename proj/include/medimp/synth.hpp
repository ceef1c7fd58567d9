#pragma once

#include "medimp/synth/cohort.hpp"
#include "medimp/synth/pairs.hpp"
