#pragma once

#include "adld/numerics/adam.hpp"
#include "adld/numerics/checkpoint.hpp"
#include "adld/numerics/errors.hpp"
#include "adld/numerics/gaussian.hpp"
#include "adld/numerics/io.hpp"
#include "adld/numerics/kv.hpp"
#include "adld/numerics/layers.hpp"
#include "adld/numerics/rng.hpp"
#include "adld/numerics/tape.hpp"
#include "adld/numerics/tensor.hpp"
