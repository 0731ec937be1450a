#pragma once

#include "adld/evalprobe/probe.hpp"
