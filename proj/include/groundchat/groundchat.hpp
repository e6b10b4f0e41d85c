#pragma once

// Umbrella header for the library (everything except the HTTP service,
// which lives in groundchat/service.hpp and needs SQLite).

#include "groundchat/checkpoint.hpp"
#include "groundchat/config.hpp"
#include "groundchat/corpus.hpp"
#include "groundchat/dataset.hpp"
#include "groundchat/decoding.hpp"
#include "groundchat/embedder.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/evaluation.hpp"
#include "groundchat/expansion.hpp"
#include "groundchat/generator.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/model.hpp"
#include "groundchat/optim.hpp"
#include "groundchat/oracle.hpp"
#include "groundchat/pipeline.hpp"
#include "groundchat/sampling.hpp"
#include "groundchat/synthetic.hpp"
#include "groundchat/text.hpp"
#include "groundchat/training.hpp"
#include "groundchat/transformer_lm.hpp"
