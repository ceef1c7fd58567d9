#pragma once

#include "medimp/encoders/freeze.hpp"
#include "medimp/encoders/image.hpp"
#include "medimp/encoders/inflate.hpp"
#include "medimp/encoders/text.hpp"
