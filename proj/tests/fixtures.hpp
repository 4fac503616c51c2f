#pragma once

#include "real/protocol.hpp"

namespace real::fixture {

/// Small, fast pipeline: 10 classes, 8 features, a few epochs per stage.
inline PipelineConfig small_config() {
  PipelineConfig c;
  c.synthetic.classes = 10;
  c.synthetic.dim = 8;
  c.synthetic.train_per_class = 20;
  c.synthetic.test_per_class = 10;
  c.hidden = {32};
  c.d_cnn = 16;
  c.sl.epochs = 4;
  c.sl.batch_size = 16;
  c.sscl.epochs = 4;
  c.sscl.batch_size = 16;
  c.red.epochs = 3;
  c.red.sgd.batch_size = 16;
  c.d_b = 64;
  c.phases = 5;
  return c;
}

}  // namespace real::fixture
