#pragma once

#include "adld/envsim/dataset.hpp"
#include "adld/envsim/env.hpp"
