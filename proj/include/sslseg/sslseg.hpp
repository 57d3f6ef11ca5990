#pragma once

// Umbrella header for the whole toolkit.

#include "sslseg/bundle.hpp"
#include "sslseg/cascade.hpp"
#include "sslseg/crf.hpp"
#include "sslseg/data_io.hpp"
#include "sslseg/entropy_select.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/feature_map.hpp"
#include "sslseg/gbdt.hpp"
#include "sslseg/metrics.hpp"
#include "sslseg/phantom.hpp"
#include "sslseg/pipeline.hpp"
#include "sslseg/saab.hpp"
#include "sslseg/symmetric_eigen.hpp"
#include "sslseg/tensor_ops.hpp"
