#pragma once

#include "medimp/cli/checkpoint.hpp"
#include "medimp/cli/config.hpp"
#include "medimp/cli/embeddings.hpp"
#include "medimp/cli/gradsuite.hpp"
#include "medimp/cli/pipeline.hpp"
#include "medimp/cli/svg.hpp"
#include "medimp/cli/tsne.hpp"
