#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sfl/tensor.hpp"
#include "sfl/transport.hpp"

namespace sfl {

// A file of back-to-back wire-format tensors.
void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

// entity,peer,direction,type,messages,payload_bytes,value_bytes,framing_bytes
std::string ledger_csv(const std::map<transport::LedgerKey, transport::LedgerCounts>& entries);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sfl
