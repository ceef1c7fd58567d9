#pragma once

#include "medimp/downstream/evaluate.hpp"
#include "medimp/downstream/head.hpp"
#include "medimp/downstream/labels.hpp"
#include "medimp/downstream/metrics.hpp"
