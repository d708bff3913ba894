// Checkpoint container: a little-endian binary file holding named tensors.
//
//   magic   "WIDCKPT1"
//   u32     format version (1)
//   u64     header byte length
//   header  UTF-8 lines "name|dtype|dim0,dim1,...|byte_offset|byte_length"
//   payload concatenated row-major tensor data
//
// Offsets are relative to the payload start. dtypes are f32, i32 and u8;
// anything else is rejected on load. Files are written to a temp path and
// renamed into place so readers never see a half-written checkpoint.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wid/adamw.hpp"
#include "wid/model.hpp"
#include "wid/tensor.hpp"

namespace wid {

struct CheckpointEntry {
    std::string dtype;
    std::vector<int> shape;
    std::vector<float> f32;
    std::vector<int32_t> i32;
    std::vector<uint8_t> u8;
};

class Checkpoint {
  public:
    void put(const std::string& name, const Tensor& t);
    void put_i32(const std::string& name, std::vector<int> shape, std::vector<int32_t> data);
    void put_u8(const std::string& name, std::vector<int> shape, std::vector<uint8_t> data);

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    const CheckpointEntry& entry(const std::string& name) const;
    Tensor tensor(const std::string& name) const;
    std::vector<int32_t> i32(const std::string& name) const;
    std::vector<std::string> names() const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

  private:
    std::map<std::string, CheckpointEntry> entries_;
};

// model weights plus config
void write_model(Checkpoint& ck, const ModelWeights& w, const std::string& prefix = "");
ModelWeights read_model(const Checkpoint& ck, const std::string& prefix = "");

// optimizer moments and step counter, keyed by parameter name
void write_optim(Checkpoint& ck, const AdamW& opt);
void read_optim(const Checkpoint& ck, AdamW& opt);

}  // namespace wid
