#ifndef FINNET_CHECKPOINT_HPP
#define FINNET_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "finnet/tensor.hpp"

namespace finnet {

class Network;

/// Serialized parameter set plus the spec that produced it.
/// File layout: magic "FNCK", version byte, spec text, metadata,
/// manifest (name/shape/offset), little-endian float32 payload, CRC-32.
struct Checkpoint {
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset = 0;  // float index into payload
        std::vector<float> data;
    };
    std::uint8_t version = 1;
    std::string spec_text;
    std::map<std::string, std::string> metadata;
    std::vector<Entry> entries;

    const Entry* find(const std::string& name) const;
    std::uint32_t payload_checksum() const;
};

Checkpoint checkpoint_from(Network& net, std::map<std::string, std::string> metadata = {});

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace finnet

#endif
