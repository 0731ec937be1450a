#pragma once

#include "adld/causaldiff/model.hpp"
#include "adld/causaldiff/rollout.hpp"
#include "adld/causaldiff/sample.hpp"
#include "adld/causaldiff/schedule.hpp"
#include "adld/causaldiff/train.hpp"
