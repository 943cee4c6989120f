#include "mdfm/io.hpp"

#include "mdfm/errors.hpp"

#include <fstream>
#include <sstream>
#include <unistd.h>

namespace mdfm {

namespace fs = std::filesystem;

void atomic_write_binary(const fs::path &path, const void *data, std::size_t bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(bytes));
    out.flush();
    if (!out)
      throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " +
                    ec.message());
  }
}

void atomic_write_text(const fs::path &path, const std::string &content) {
  atomic_write_binary(path, content.data(), content.size());
}

std::string read_text_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace mdfm
