#pragma once

#include "adld/verify/diagnostics.hpp"
