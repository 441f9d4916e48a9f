#pragma once

#include <string>

#include "dgdata/trainer.hpp"

namespace dgdata {

/// Binary checkpoint: magic, format version, embedded config, parameter blobs
/// (values + optimizer moments + step counts), running buffers, feature range,
/// pseudo labels, rng state, epoch, end marker. Written atomically.
void save_checkpoint(const std::string& path, Trainer& trainer);

/// Restores state into a trainer freshly constructed with the same config and
/// data. Truncated or mismatched files raise IntegrityError without partial
/// mutation of the trainer.
void load_checkpoint(const std::string& path, Trainer& trainer);

/// Reads just the embedded training config.
TrainConfig checkpoint_config(const std::string& path);

} // namespace dgdata
