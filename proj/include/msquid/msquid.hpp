#pragma once

#include "bounded_queue.hpp"
#include "byte_classes.hpp"
#include "bytes.hpp"
#include "cnn.hpp"
#include "dataset.hpp"
#include "hilbert.hpp"
#include "io.hpp"
#include "labels.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "pcap.hpp"
#include "pipeline.hpp"
#include "png.hpp"
#include "render.hpp"
#include "stream.hpp"
#include "tensor.hpp"
#include "train.hpp"
