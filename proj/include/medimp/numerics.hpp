#pragma once

#include "medimp/numerics/attention.hpp"
#include "medimp/numerics/gradcheck.hpp"
#include "medimp/numerics/graph.hpp"
#include "medimp/numerics/ops.hpp"
#include "medimp/numerics/random.hpp"
#include "medimp/numerics/tensor.hpp"
