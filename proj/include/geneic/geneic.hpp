#pragma once

#include "geneic/errors.hpp"
#include "geneic/rng.hpp"
#include "geneic/types.hpp"
#include "geneic/binary_io.hpp"
#include "geneic/sha256.hpp"
#include "geneic/text.hpp"
#include "geneic/backend.hpp"
#include "geneic/toy_backend.hpp"
#include "geneic/clustering.hpp"
#include "geneic/attribute_transfer.hpp"
#include "geneic/prompt.hpp"
#include "geneic/losses.hpp"
#include "geneic/trainer.hpp"
#include "geneic/metrics.hpp"
#include "geneic/interpret.hpp"
#include "geneic/image_io.hpp"
#include "geneic/synthetic.hpp"
#include "geneic/config.hpp"
#include "geneic/app.hpp"
