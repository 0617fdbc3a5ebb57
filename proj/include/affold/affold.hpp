#pragma once

#include "affold/bench.hpp"
#include "affold/collapse.hpp"
#include "affold/data_io.hpp"
#include "affold/errors.hpp"
#include "affold/forward.hpp"
#include "affold/layers.hpp"
#include "affold/linalg.hpp"
#include "affold/network.hpp"
#include "affold/train.hpp"
