#pragma once

#include "consense/model.hpp"

namespace consense {

/// Checkpoint file layout, all little-endian:
///   bytes 0..7   magic "CSNSCKPT"
///   bytes 8..11  uint32 manifest length L
///   bytes 12..12+L-1  JSON manifest (config, session, adapter descriptors,
///                     tensor table with names, shapes and blob offsets)
///   bytes 12+L..      float32 parameter blob, tensors in manifest order
struct Checkpoint {
    ConSenseModel model;
    int session = 0;
};

void save_checkpoint(const std::string& path, const ConSenseModel& model, int session);

/// Rebuilds the model (architecture, adapter stack, freeze flags, parameter
/// bits) from a checkpoint file. Malformed or truncated files raise a format
/// error naming the byte offset.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace consense
