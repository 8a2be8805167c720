/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

#include "common.hpp"
#include "dataset.hpp"
#include "gco.hpp"
#include "manifest.hpp"
#include "metrics.hpp"
#include "nifti.hpp"
#include "rasterize.hpp"
#include "scangen.hpp"
#include "vessel_tree.hpp"
#include "volume.hpp"
