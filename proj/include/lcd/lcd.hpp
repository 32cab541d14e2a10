// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "lcd/commands.hpp"
#include "lcd/copt.hpp"
#include "lcd/core.hpp"
#include "lcd/dbci.hpp"
#include "lcd/distill.hpp"
#include "lcd/hessian.hpp"
#include "lcd/io.hpp"
#include "lcd/lutkernel.hpp"
#include "lcd/oracle.hpp"
#include "lcd/smooth.hpp"
