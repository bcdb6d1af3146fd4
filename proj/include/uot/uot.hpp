#pragma once

#include "uot/types.hpp"
#include "uot/core.hpp"
#include "uot/sinkhorn.hpp"
#include "uot/oracle.hpp"
#include "uot/image.hpp"
#include "uot/experiments.hpp"
#include "uot/io.hpp"
