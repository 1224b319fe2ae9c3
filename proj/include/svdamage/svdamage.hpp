#pragma once

#include "svdamage/annotation/server.hpp"
#include "svdamage/annotation/store.hpp"
#include "svdamage/backbones/factory.hpp"
#include "svdamage/catalog/catalog.hpp"
#include "svdamage/catalog/pairing.hpp"
#include "svdamage/catalog/split.hpp"
#include "svdamage/data/image_io.hpp"
#include "svdamage/data/synthetic.hpp"
#include "svdamage/data/transforms.hpp"
#include "svdamage/evaluation/metrics.hpp"
#include "svdamage/fusion/model.hpp"
#include "svdamage/interpret/gradcam.hpp"
#include "svdamage/interpret/overlay.hpp"
#include "svdamage/training/checkpoint.hpp"
#include "svdamage/training/config.hpp"
#include "svdamage/training/dataset.hpp"
#include "svdamage/training/experiment.hpp"
#include "svdamage/training/trainer.hpp"
