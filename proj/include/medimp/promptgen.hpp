#pragma once

#include "medimp/promptgen/prompts.hpp"
#include "medimp/promptgen/record.hpp"
#include "medimp/promptgen/rules.hpp"
#include "medimp/promptgen/vocab.hpp"
