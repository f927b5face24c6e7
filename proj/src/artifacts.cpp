#include "sfl/artifacts.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "sfl/codec.hpp"
#include "sfl/error.hpp"

namespace sfl {

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  codec::Bytes out;
  for (const auto& t : tensors) codec::append_tensor(out, t.shape(), t.data());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  const codec::Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::vector<Tensor> out;
  std::size_t off = 0;
  while (off < b.size()) out.push_back(codec::decode_tensor(b, off));
  return out;
}

std::string ledger_csv(const std::map<transport::LedgerKey, transport::LedgerCounts>& entries) {
  std::string s = "entity,peer,direction,type,messages,payload_bytes,value_bytes,framing_bytes\n";
  char buf[256];
  for (const auto& [k, c] : entries) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%llu,%llu,%llu,%llu\n", k.entity.c_str(),
                  k.peer.c_str(), k.direction == transport::Direction::kSent ? "sent" : "received",
                  transport::msg_type_name(k.type), static_cast<unsigned long long>(c.messages),
                  static_cast<unsigned long long>(c.payload_bytes),
                  static_cast<unsigned long long>(c.value_bytes),
                  static_cast<unsigned long long>(c.framing_bytes));
    s += buf;
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace sfl
