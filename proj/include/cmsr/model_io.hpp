#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmsr/imaging.hpp"
#include "cmsr/network.hpp"

namespace cmsr {

// Little-endian container shared by model files and patch archives:
//   "CMSR" | version u8 (=1) | scale u8 | profile u8 | record count u16
//   per record: name length u16 | UTF-8 name | rank u8 | dims u32 x rank |
//               float32 x prod(dims)
inline constexpr std::uint8_t kFormatVersion = 1;

struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct RecordFile {
  std::uint8_t scale = 0;
  std::uint8_t profile = 0;
  std::vector<Record> records;
};

std::vector<std::uint8_t> encode_records(const RecordFile& file);
// Throws CorruptModel naming the record being parsed when the bytes run out,
// the magic/version is wrong or trailing data is present.
RecordFile decode_records(const std::vector<std::uint8_t>& bytes);

void write_record_file(const std::filesystem::path& path, const RecordFile& file);
RecordFile read_record_file(const std::filesystem::path& path);

void save_model(const NetworkParams& params, const std::filesystem::path& path);
// Validates scale (UnsupportedScale), profile and every record's name and
// shape against the architecture the header describes.
NetworkParams load_model(const std::filesystem::path& path);

RecordFile model_to_records(const NetworkParams& params);
NetworkParams model_from_records(const RecordFile& file);

// Records lr/<i>, hr/<i>, b/<i>/<j>, each [1, h, w].
void save_patch_archive(const std::vector<TrainingTriplet>& triplets, int scale,
                        const std::filesystem::path& path);
std::vector<TrainingTriplet> load_patch_archive(const std::filesystem::path& path, int* scale = nullptr);

}  // namespace cmsr
