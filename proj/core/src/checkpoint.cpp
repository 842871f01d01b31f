#include "latref/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <fstream>

namespace latref {

namespace fs = std::filesystem;

std::string sha256_hex(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, data, len);
    EVP_DigestFinal_ex(ctx, digest, &dlen);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(dlen * 2);
    for (unsigned int i = 0; i < dlen; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open for hashing: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

void Checkpoint::put(const std::string& name, const Tensor& t) { arrays_[name] = t; }

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw Error("checkpoint", "missing array: " + name);
    return it->second;
}

bool Checkpoint::has(const std::string& name) const { return arrays_.count(name) > 0; }

namespace {

constexpr char kMagic[8] = {'L', 'R', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("checkpoint", "truncated file");
    return v;
}

}  // namespace

void Checkpoint::save(const fs::path& path) const {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("io", "cannot create " + tmp.string());
        os.write(kMagic, sizeof(kMagic));
        write_pod<uint64_t>(os, manifest_.size());
        os.write(manifest_.data(), static_cast<std::streamsize>(manifest_.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(arrays_.size()));
        for (const auto& [name, t] : arrays_) {
            write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
            for (int i = 0; i < t.ndim(); ++i) write_pod<uint32_t>(os, t.dim(i));
            write_pod<uint64_t>(os, static_cast<uint64_t>(t.numel()));
            os.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!os) throw Error("io", "write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint", "cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw Error("checkpoint", "bad magic in " + path.string());
    Checkpoint ck;
    const uint64_t mlen = read_pod<uint64_t>(is);
    ck.manifest_.resize(mlen);
    is.read(ck.manifest_.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw Error("checkpoint", "truncated manifest in " + path.string());
    const uint32_t count = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const uint32_t ndim = read_pod<uint32_t>(is);
        std::vector<int> shape(ndim);
        for (uint32_t j = 0; j < ndim; ++j) shape[j] = static_cast<int>(read_pod<uint32_t>(is));
        const uint64_t numel = read_pod<uint64_t>(is);
        Tensor t(shape);
        if (static_cast<uint64_t>(t.numel()) != numel)
            throw Error("checkpoint", "shape/count mismatch for " + name);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw Error("checkpoint", "truncated array " + name + " in " + path.string());
        ck.arrays_[name] = std::move(t);
    }
    return ck;
}

std::string Checkpoint::weights_hash() const {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto& [name, t] : arrays_) {
        EVP_DigestUpdate(ctx, name.data(), name.size());
        EVP_DigestUpdate(ctx, t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    EVP_DigestFinal_ex(ctx, digest, &dlen);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < dlen; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace latref
