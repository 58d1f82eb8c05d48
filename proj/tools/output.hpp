#pragma once
// Dataset files: CSV tables, SHA-256 checksums, atomic writes and the run
// manifest.

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "wgqed/core.hpp"

namespace wgqed::cli {

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256: digest failed");
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (is.bad()) throw IoError("read failed: " + p.string());
  return s;
}

/// Write to a sibling temporary and rename over the target.
inline void write_atomic(const std::filesystem::path& p, const std::string& data) {
  const auto tmp = std::filesystem::path(p.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create " + tmp.string());
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
    os.flush();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto " + p.string());
  }
}

inline std::string number(double v) { return fmt::format("{:.17g}", v); }

struct Column {
  std::string name;
  std::string unit;  // "1" for dimensionless
};

class CsvTable {
 public:
  CsvTable(std::string title, std::vector<Column> columns) : title_(std::move(title)), columns_(std::move(columns)) {}

  void add_note(std::string note) { notes_.push_back(std::move(note)); }

  void add_row(const std::vector<double>& row) {
    if (row.size() != columns_.size()) throw DimensionError("CsvTable: row width does not match the header");
    rows_.push_back(row);
  }

  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::string out = "# " + title_ + "\n";
    for (const auto& n : notes_) out += "# " + n + "\n";
    out += "# units:";
    for (std::size_t i = 0; i < columns_.size(); ++i)
      out += fmt::format("{} {} [{}]", i == 0 ? "" : ",", columns_[i].name, columns_[i].unit);
    out += "\n";
    for (std::size_t i = 0; i < columns_.size(); ++i) out += (i == 0 ? "" : ",") + columns_[i].name;
    out += "\n";
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += number(r[i]);
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::string title_;
  std::vector<Column> columns_;
  std::vector<std::string> notes_;
  std::vector<std::vector<double>> rows_;
};

/// Collects dataset files for one run and writes the manifest last.
class RunOutput {
 public:
  RunOutput(std::filesystem::path dir, std::string name) : dir_(std::move(dir)), name_(std::move(name)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) throw IoError("cannot create output directory " + dir_.string());
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& name() const { return name_; }

  void write(const std::string& file, const std::string& data) {
    write_atomic(dir_ / file, data);
    files_.push_back({file, sha256_hex(data), data.size()});
  }
  void write(const std::string& file, const CsvTable& t) { write(file, t.str()); }

  nlohmann::ordered_json& summary() { return summary_; }

  struct FileRecord {
    std::string file;
    std::string sha256;
    std::size_t bytes;
  };
  const std::vector<FileRecord>& files() const { return files_; }

  std::filesystem::path manifest_path() const { return dir_ / (name_ + ".manifest.json"); }

  void write_manifest(const std::string& command, const std::string& config_path, const std::string& config_text,
                      std::uint64_t seed, std::size_t threads, double wall_seconds) const {
    nlohmann::ordered_json j;
    j["tool"] = "wgqed";
    j["version"] = WGQED_VERSION;
    j["command"] = command;
    j["name"] = name_;
    j["seed"] = seed;
    j["threads"] = threads;
    j["config"] = {{"path", config_path}, {"sha256", sha256_hex(config_text)}, {"text", config_text}};
    j["wall_clock_seconds"] = wall_seconds;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["finished_utc"] = stamp;
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto& f : files_) j["outputs"].push_back({{"file", f.file}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    j["summary"] = summary_.is_null() ? nlohmann::ordered_json::object() : summary_;
    write_atomic(manifest_path(), j.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::string name_;
  std::vector<FileRecord> files_;
  nlohmann::ordered_json summary_;
};

}  // namespace wgqed::cli
