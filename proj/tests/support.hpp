#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "emotrans/util.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("emotrans-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    emotrans::atomic_write(p, content);
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path source_dir() { return EMOTRANS_SOURCE_DIR; }

// Copies the demo inputs (plus the templates and reader prompt they point at)
// under `root` and returns the path of the copied demo.ini.
inline std::filesystem::path copy_demo(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  auto data = source_dir() / "data";
  fs::create_directories(root / "data" / "demo");
  fs::copy(data / "templates", root / "data" / "templates", fs::copy_options::recursive);
  fs::copy(data / "prompts", root / "data" / "prompts", fs::copy_options::recursive);
  for (const auto& entry : fs::directory_iterator(data / "demo")) {
    if (entry.is_regular_file()) fs::copy_file(entry.path(), root / "data" / "demo" / entry.path().filename());
  }
  return root / "data" / "demo" / "demo.ini";
}

}  // namespace testing
