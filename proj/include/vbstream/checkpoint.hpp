#pragma once

#include <string>
#include <vector>

#include "vbstream/config.hpp"
#include "vbstream/stream.hpp"

namespace vbs::io {

// Everything needed to continue a run: config echo, model, codec, optimizer,
// statistics hierarchy, stream index, RNG state, and the report sections of
// the streams already completed. Saved at stream boundaries only.
struct Checkpoint {
    RunConfig config;
    stream::StreamLedger ledger;
    std::vector<std::string> report_lines;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout: magic, version, structured-text header (config, shapes,
// array directory), little-endian f64 arrays in directory order, then a
// 64-bit FNV-1a checksum of all preceding bytes.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace vbs::io
