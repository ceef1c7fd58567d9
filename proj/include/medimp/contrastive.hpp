#pragma once

#include "medimp/contrastive/loss.hpp"
#include "medimp/contrastive/model.hpp"
#include "medimp/contrastive/optim.hpp"
#include "medimp/contrastive/train.hpp"
