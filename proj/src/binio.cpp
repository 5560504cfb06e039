#include "binio.hpp"

#include <fstream>
#include <sstream>

namespace shiftadapt::binio {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out.write(data.data(), std::streamsize(data.size()));
    if (!out) throw DataError("short write: " + path);
}

} // namespace shiftadapt::binio
