#pragma once

#include "dataset.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "metrics.hpp"
#include "mlp.hpp"
#include "probe_io.hpp"
#include "ridge.hpp"
#include "synthetic.hpp"
#include "targets.hpp"
#include "tensor_store.hpp"
#include "version.hpp"
