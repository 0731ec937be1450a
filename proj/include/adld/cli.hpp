#pragma once

#include "adld/cli/commands.hpp"
#include "adld/cli/config.hpp"
#include "adld/cli/experiments.hpp"
