#pragma once

#include "medimp/imaging/augment.hpp"
#include "medimp/imaging/volume.hpp"
