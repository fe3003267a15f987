#pragma once

#include "layoutforge/common.hpp"
#include "layoutforge/pose.hpp"
#include "layoutforge/geometry.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/primitives.hpp"
#include "layoutforge/scene_model.hpp"
#include "layoutforge/sdfgrid.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/optimizer.hpp"
#include "layoutforge/plausibility.hpp"
