#include "wid/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wid/common.hpp"

namespace wid {

namespace {

constexpr char kMagic[8] = {'W', 'I', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32" || dtype == "i32") return 4;
    if (dtype == "u8") return 1;
    throw IoError("checkpoint: unknown dtype " + dtype);
}

std::string shape_csv(const std::vector<int>& shape) {
    std::string out;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
    CheckpointEntry e;
    e.dtype = "f32";
    e.shape = t.shape;
    e.f32 = t.data;
    entries_[name] = std::move(e);
}

void Checkpoint::put_i32(const std::string& name, std::vector<int> shape, std::vector<int32_t> data) {
    if (Tensor::numel_of(shape) != data.size()) throw DimError("put_i32: data length");
    CheckpointEntry e;
    e.dtype = "i32";
    e.shape = std::move(shape);
    e.i32 = std::move(data);
    entries_[name] = std::move(e);
}

void Checkpoint::put_u8(const std::string& name, std::vector<int> shape, std::vector<uint8_t> data) {
    if (Tensor::numel_of(shape) != data.size()) throw DimError("put_u8: data length");
    CheckpointEntry e;
    e.dtype = "u8";
    e.shape = std::move(shape);
    e.u8 = std::move(data);
    entries_[name] = std::move(e);
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint: no entry named " + name);
    return it->second;
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    if (e.dtype != "f32") throw IoError("checkpoint: " + name + " is " + e.dtype + ", wanted f32");
    return Tensor(e.shape, e.f32);
}

std::vector<int32_t> Checkpoint::i32(const std::string& name) const {
    const CheckpointEntry& e = entry(name);
    if (e.dtype != "i32") throw IoError("checkpoint: " + name + " is " + e.dtype + ", wanted i32");
    return e.i32;
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

void Checkpoint::save(const std::string& path) const {
    std::string header;
    uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
        const uint64_t bytes = Tensor::numel_of(e.shape) * dtype_size(e.dtype);
        header += name + "|" + e.dtype + "|" + shape_csv(e.shape) + "|" +
                  std::to_string(offset) + "|" + std::to_string(bytes) + "\n";
        offset += bytes;
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write(kMagic, sizeof(kMagic));
        const uint32_t ver = kVersion;
        f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
        const uint64_t hlen = header.size();
        f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const auto& [name, e] : entries_) {
            if (e.dtype == "f32")
                f.write(reinterpret_cast<const char*>(e.f32.data()),
                        static_cast<std::streamsize>(e.f32.size() * 4));
            else if (e.dtype == "i32")
                f.write(reinterpret_cast<const char*>(e.i32.data()),
                        static_cast<std::streamsize>(e.i32.size() * 4));
            else
                f.write(reinterpret_cast<const char*>(e.u8.data()),
                        static_cast<std::streamsize>(e.u8.size()));
        }
        if (!f) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError(path + " is not a checkpoint file");
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!f || ver != kVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(ver));
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen > (1ull << 30)) throw IoError(path + ": bad header length");
    std::string header(hlen, '\0');
    f.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError(path + ": truncated header");

    const std::streampos payload_start = f.tellg();
    f.seekg(0, std::ios::end);
    const uint64_t payload_bytes = static_cast<uint64_t>(f.tellg() - payload_start);

    Checkpoint ck;
    std::istringstream lines(header);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<std::string> parts;
        size_t pos = 0;
        while (true) {
            const size_t bar = line.find('|', pos);
            parts.push_back(line.substr(pos, bar == std::string::npos ? bar : bar - pos));
            if (bar == std::string::npos) break;
            pos = bar + 1;
        }
        if (parts.size() != 5) throw IoError(path + ": malformed header line: " + line);
        CheckpointEntry e;
        e.dtype = parts[1];
        const size_t dsize = dtype_size(e.dtype);
        if (!parts[2].empty()) {
            std::istringstream dims(parts[2]);
            std::string tok;
            while (std::getline(dims, tok, ',')) e.shape.push_back(std::stoi(tok));
        }
        const uint64_t off = std::stoull(parts[3]);
        const uint64_t bytes = std::stoull(parts[4]);
        if (bytes != Tensor::numel_of(e.shape) * dsize)
            throw IoError(path + ": size mismatch for " + parts[0]);
        if (off + bytes > payload_bytes) throw IoError(path + ": entry " + parts[0] + " out of bounds");
        f.seekg(payload_start + static_cast<std::streamoff>(off));
        if (e.dtype == "f32") {
            e.f32.resize(bytes / 4);
            f.read(reinterpret_cast<char*>(e.f32.data()), static_cast<std::streamsize>(bytes));
        } else if (e.dtype == "i32") {
            e.i32.resize(bytes / 4);
            f.read(reinterpret_cast<char*>(e.i32.data()), static_cast<std::streamsize>(bytes));
        } else {
            e.u8.resize(bytes);
            f.read(reinterpret_cast<char*>(e.u8.data()), static_cast<std::streamsize>(bytes));
        }
        if (!f) throw IoError(path + ": truncated payload for " + parts[0]);
        ck.entries_[parts[0]] = std::move(e);
    }
    return ck;
}

void write_model(Checkpoint& ck, const ModelWeights& w, const std::string& prefix) {
    ck.put_i32(prefix + "__config__", {12}, w.cfg.to_words());
    for (const Parameter& p : w.params) ck.put(prefix + p.name, p.value);
}

ModelWeights read_model(const Checkpoint& ck, const std::string& prefix) {
    const ModelConfig cfg = ModelConfig::from_words(ck.i32(prefix + "__config__"));
    ModelWeights w = ModelWeights::shell(cfg);
    for (Parameter& p : w.params) {
        Tensor t = ck.tensor(prefix + p.name);
        if (!t.same_shape(p.value))
            throw IoError("checkpoint: " + p.name + " has shape " + shape_str(t.shape) +
                          ", model wants " + shape_str(p.value.shape));
        p.value = std::move(t);
    }
    return w;
}

void write_optim(Checkpoint& ck, const AdamW& opt) {
    ck.put_i32("opt.step", {2},
               {static_cast<int32_t>(opt.step_count() >> 32),
                static_cast<int32_t>(opt.step_count() & 0xffffffff)});
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        ck.put("opt.m." + params[i]->name, opt.moment1()[i]);
        ck.put("opt.v." + params[i]->name, opt.moment2()[i]);
    }
}

void read_optim(const Checkpoint& ck, AdamW& opt) {
    const std::vector<int32_t> step = ck.i32("opt.step");
    if (step.size() != 2) throw IoError("checkpoint: malformed opt.step");
    opt.set_step_count((static_cast<int64_t>(step[0]) << 32) |
                       static_cast<int64_t>(static_cast<uint32_t>(step[1])));
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor m = ck.tensor("opt.m." + params[i]->name);
        Tensor v = ck.tensor("opt.v." + params[i]->name);
        if (!m.same_shape(opt.moment1()[i]) || !v.same_shape(opt.moment2()[i]))
            throw IoError("checkpoint: optimizer shape mismatch for " + params[i]->name);
        opt.moment1()[i] = std::move(m);
        opt.moment2()[i] = std::move(v);
    }
}

}  // namespace wid
