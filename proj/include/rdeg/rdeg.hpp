#pragma once

#include "rdeg/aggregation.hpp"
#include "rdeg/errors.hpp"
#include "rdeg/geometry.hpp"
#include "rdeg/invariants.hpp"
#include "rdeg/problems.hpp"
#include "rdeg/protocol.hpp"
#include "rdeg/random.hpp"
#include "rdeg/version.hpp"
