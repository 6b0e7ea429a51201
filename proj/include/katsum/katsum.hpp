#pragma once

#include "katsum/checkpoint.hpp"
#include "katsum/common.hpp"
#include "katsum/corpus.hpp"
#include "katsum/kg_embed.hpp"
#include "katsum/nn.hpp"
#include "katsum/pipeline.hpp"
#include "katsum/rouge.hpp"
#include "katsum/seq2seq.hpp"
#include "katsum/synthetic.hpp"
#include "katsum/training.hpp"
#include "katsum/triplet_extract.hpp"
#include "katsum/triplet_select.hpp"
