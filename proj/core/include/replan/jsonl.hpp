#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace replan {

// Append-only JSON-lines writer; each record is flushed immediately.
class JsonlWriter {
 public:
  JsonlWriter() = default;
  explicit JsonlWriter(const std::filesystem::path& path, bool append = true);

  void write(const nlohmann::json& record);
  bool is_open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
};

// Returns parsed records; malformed lines are skipped and counted.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, int* malformed = nullptr);

}  // namespace replan
