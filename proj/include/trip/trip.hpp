#pragma once

// Umbrella header.
#include "trip/core_tensor.hpp"
#include "trip/error.hpp"
#include "trip/fit.hpp"
#include "trip/gradient.hpp"
#include "trip/joint_model.hpp"
#include "trip/oracle.hpp"
#include "trip/tensor_ring.hpp"
#include "trip/trip_model.hpp"
