#include "astrack/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "astrack/errors.hpp"

namespace astrack {

void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path dir = target.parent_path();
    if (!dir.empty()) {
        std::error_code ec;
        fs::create_directories(dir, ec);
    }
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(static_cast<unsigned long>(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot open \"" + tmp.string() + "\" for writing");
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw Error("short write to \"" + tmp.string() + "\"");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot rename \"" + tmp.string() + "\" to \"" + path + "\": " + ec.message());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open \"" + path + "\" for reading");
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace astrack
