#pragma once

#include "glim/channel.hpp"
#include "glim/detect.hpp"
#include "glim/error.hpp"
#include "glim/mapper.hpp"
#include "glim/modem.hpp"
#include "glim/select.hpp"
#include "glim/sim.hpp"
