#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "latref/tensor.hpp"

namespace latref {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

/// Single-file archive of named float arrays plus a JSON manifest string.
/// Writes are atomic (temp file + rename), so a crashed run never leaves a
/// loadable partial checkpoint behind.
class Checkpoint {
public:
    void put(const std::string& name, const Tensor& t);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::map<std::string, Tensor>& arrays() const { return arrays_; }

    void set_manifest(std::string json) { manifest_ = std::move(json); }
    const std::string& manifest() const { return manifest_; }

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    /// Hash of every array's bytes in name order; detects any weight change.
    std::string weights_hash() const;

private:
    std::map<std::string, Tensor> arrays_;
    std::string manifest_;
};

}  // namespace latref
