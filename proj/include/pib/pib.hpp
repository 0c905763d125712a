#pragma once

#include "pib/channel.hpp"
#include "pib/codec.hpp"
#include "pib/error.hpp"
#include "pib/harness/checks.hpp"
#include "pib/harness/config.hpp"
#include "pib/harness/records.hpp"
#include "pib/harness/sweeps.hpp"
#include "pib/harness/system.hpp"
#include "pib/ib_loss.hpp"
#include "pib/numerics/autodiff.hpp"
#include "pib/numerics/grad_check.hpp"
#include "pib/numerics/param_set.hpp"
#include "pib/numerics/tensor.hpp"
#include "pib/priority.hpp"
#include "pib/random.hpp"
#include "pib/scene/camera.hpp"
#include "pib/scene/fusion.hpp"
#include "pib/scene/moda.hpp"
#include "pib/scene/world.hpp"
#include "pib/temporal_entropy.hpp"
