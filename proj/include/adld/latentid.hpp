#pragma once

#include "adld/latentid/stage1.hpp"
