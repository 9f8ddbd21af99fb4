#include "cmsr/model_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace cmsr {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'S', 'R'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    u32(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const std::string& record) const {
    if (bytes_.size() - pos_ < n) throw CorruptModel(record, "truncated file");
  }
  std::uint8_t u8(const std::string& record) {
    need(1, record);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const std::string& record) {
    need(2, record);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& record) {
    need(4, record);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const std::string& record) {
    const std::uint32_t bits = u32(record);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string str(std::size_t n, const std::string& record) {
    need(n, record);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
Record make_record(std::string name, const BasicTensor<T>& t) {
  Record r;
  r.name = std::move(name);
  for (int d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.values.assign(t.storage().begin(), t.storage().end());
  return r;
}

Record make_record(std::string name, const std::vector<float>& v) {
  Record r;
  r.name = std::move(name);
  r.dims = {static_cast<std::uint32_t>(v.size())};
  r.values = v;
  return r;
}

std::string dims_str(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// (name, destination) pairs in serialization order.
struct Slot {
  std::string name;
  Tensor* tensor = nullptr;
  std::vector<float>* vec = nullptr;
};

std::vector<Slot> model_slots(NetworkParams& p) {
  std::vector<Slot> slots;
  auto conv = [&](const std::string& name, ConvSpec& c) {
    slots.push_back({name + ".w", &c.kernels, nullptr});
    if (c.has_bias()) slots.push_back({name + ".b", nullptr, &c.bias});
  };
  auto deconv = [&](const std::string& name, DeconvSpec& d) {
    slots.push_back({name + ".w", &d.kernels, nullptr});
    slots.push_back({name + ".b", nullptr, &d.bias});
  };
  for (std::size_t i = 0; i < p.extraction.size(); ++i) {
    conv("extract." + std::to_string(i), p.extraction[i]);
  }
  deconv("interp1", p.interp_boundary);
  deconv("interp2", p.interp_residual);
  conv("bcn.hidden", p.bcn_hidden);
  conv("bcn.out", p.bcn_out);
  conv("rcn.hidden", p.rcn_hidden);
  conv("rcn.out", p.rcn_out);
  conv("fusion", p.fusion);
  return slots;
}

}  // namespace

std::vector<std::uint8_t> encode_records(const RecordFile& file) {
  if (file.records.size() > 0xffff) throw InvalidArgument("too many records for one file");
  Writer w;
  w.bytes(kMagic, 4);
  w.u8(kFormatVersion);
  w.u8(file.scale);
  w.u8(file.profile);
  w.u16(static_cast<std::uint16_t>(file.records.size()));
  for (const Record& r : file.records) {
    if (r.name.size() > 0xffff) throw InvalidArgument("record name too long");
    if (r.dims.size() > 0xff) throw InvalidArgument("record rank too large");
    std::size_t count = 1;
    for (auto d : r.dims) count *= d;
    if (count != r.values.size()) throw InvalidArgument("record " + r.name + " payload/shape mismatch");
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u8(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.u32(d);
    for (float v : r.values) w.f32(v);
  }
  return w.take();
}

RecordFile decode_records(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  const std::string header = "header";
  if (rd.str(4, header) != std::string(kMagic, 4)) throw CorruptModel(header, "bad magic");
  const std::uint8_t version = rd.u8(header);
  if (version != kFormatVersion) {
    throw CorruptModel(header, "unknown version " + std::to_string(version));
  }
  RecordFile file;
  file.scale = rd.u8(header);
  file.profile = rd.u8(header);
  const std::uint16_t count = rd.u16(header);
  file.records.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    Record r;
    const std::uint16_t len = rd.u16(where);
    r.name = rd.str(len, where);
    const std::uint8_t rank = rd.u8(r.name);
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      r.dims.push_back(rd.u32(r.name));
      n *= r.dims.back();
    }
    rd.need(n * 4, r.name);
    r.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) r.values[k] = rd.f32(r.name);
    file.records.push_back(std::move(r));
  }
  if (!rd.done()) throw CorruptModel("trailer", "unexpected bytes after last record");
  return file;
}

void write_record_file(const std::filesystem::path& path, const RecordFile& file) {
  const auto bytes = encode_records(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("failed writing " + path.string());
}

RecordFile read_record_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_records(bytes);
}

RecordFile model_to_records(const NetworkParams& params) {
  RecordFile file;
  file.scale = static_cast<std::uint8_t>(params.scale);
  file.profile = static_cast<std::uint8_t>(params.profile);
  NetworkParams copy = params;
  for (const Slot& s : model_slots(copy)) {
    file.records.push_back(s.tensor ? make_record(s.name, *s.tensor) : make_record(s.name, *s.vec));
  }
  return file;
}

NetworkParams model_from_records(const RecordFile& file) {
  if (file.scale < 2 || file.scale > 4) throw UnsupportedScale(file.scale);
  if (file.profile > 1) throw CorruptModel("header", "unknown profile " + std::to_string(file.profile));
  NetworkConfig cfg;
  cfg.scale = file.scale;
  cfg.profile = static_cast<Profile>(file.profile);
  NetworkParams params = build_network(cfg);
  auto slots = model_slots(params);
  if (file.records.size() != slots.size()) {
    throw CorruptModel("header", "expected " + std::to_string(slots.size()) + " records, found " +
                                     std::to_string(file.records.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Record& r = file.records[i];
    const Slot& s = slots[i];
    if (r.name != s.name) throw CorruptModel(r.name, "expected record " + s.name);
    std::vector<std::uint32_t> expect;
    if (s.tensor) {
      for (int d : s.tensor->shape()) expect.push_back(static_cast<std::uint32_t>(d));
    } else {
      expect = {static_cast<std::uint32_t>(s.vec->size())};
    }
    if (r.dims != expect) {
      throw CorruptModel(r.name, "shape " + dims_str(r.dims) + " != expected " + dims_str(expect));
    }
    if (s.tensor) {
      s.tensor->storage() = r.values;
    } else {
      *s.vec = r.values;
    }
  }
  return params;
}

void save_model(const NetworkParams& params, const std::filesystem::path& path) {
  write_record_file(path, model_to_records(params));
}

NetworkParams load_model(const std::filesystem::path& path) {
  return model_from_records(read_record_file(path));
}

void save_patch_archive(const std::vector<TrainingTriplet>& triplets, int scale,
                        const std::filesystem::path& path) {
  RecordFile file;
  file.scale = static_cast<std::uint8_t>(scale);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    const std::string id = std::to_string(i);
    file.records.push_back(make_record("lr/" + id, t.lr));
    file.records.push_back(make_record("hr/" + id, t.hr));
    for (std::size_t j = 0; j < t.boundaries.size(); ++j) {
      file.records.push_back(make_record("b/" + id + "/" + std::to_string(j), t.boundaries[j]));
    }
  }
  write_record_file(path, file);
}

std::vector<TrainingTriplet> load_patch_archive(const std::filesystem::path& path, int* scale) {
  const RecordFile file = read_record_file(path);
  if (file.scale < 2 || file.scale > 4) throw UnsupportedScale(file.scale);
  if (scale) *scale = file.scale;
  std::vector<TrainingTriplet> out;
  auto to_plane = [](const Record& r) {
    if (r.dims.size() != 3 || r.dims[0] != 1) throw CorruptModel(r.name, "expected a [1,h,w] plane");
    return Tensor({1, static_cast<int>(r.dims[1]), static_cast<int>(r.dims[2])}, r.values);
  };
  for (const Record& r : file.records) {
    const auto slash = r.name.find('/');
    if (slash == std::string::npos) throw CorruptModel(r.name, "unrecognized patch record");
    const std::string kind = r.name.substr(0, slash);
    const std::string rest = r.name.substr(slash + 1);
    std::size_t idx = 0;
    try {
      idx = std::stoul(rest);
    } catch (const std::exception&) {
      throw CorruptModel(r.name, "bad patch index");
    }
    if (kind == "lr") {
      if (idx != out.size()) throw CorruptModel(r.name, "patch records out of order");
      out.push_back({to_plane(r), {}, {}});
    } else if (kind == "hr" || kind == "b") {
      if (out.empty() || idx != out.size() - 1) throw CorruptModel(r.name, "patch records out of order");
      if (kind == "hr") {
        out.back().hr = to_plane(r);
      } else {
        out.back().boundaries.push_back(to_plane(r));
      }
    } else {
      throw CorruptModel(r.name, "unrecognized patch record");
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& t = out[i];
    if (t.hr.empty() || t.boundaries.empty()) {
      throw CorruptModel("lr/" + std::to_string(i), "incomplete triplet");
    }
    if (t.hr.height() != t.lr.height() * file.scale || t.hr.width() != t.lr.width() * file.scale) {
      throw CorruptModel("hr/" + std::to_string(i), "HR size is not scale x LR size");
    }
  }
  return out;
}

}  // namespace cmsr
