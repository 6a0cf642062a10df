#include "actsteer/io.hpp"

#include <fstream>
#include <sstream>

namespace actsteer {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw io_error("read failed on " + path);
    return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw io_error("write failed on " + path);
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

json read_json(const std::string& path) {
    const std::string bytes = read_file(path);
    json j = json::parse(bytes, nullptr, false);
    if (j.is_discarded()) throw io_error("malformed JSON in " + path);
    return j;
}

std::string json_bytes(const json& j) {
    return j.dump(2) + "\n";
}

void write_json(const std::string& path, const json& j) {
    write_file(path, json_bytes(j));
}

const json& require_field(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) {
        throw io_error(where + ": missing field '" + key + "'");
    }
    return j.at(key);
}

double require_double(const json& j, const std::string& key, const std::string& where) {
    const json& v = require_field(j, key, where);
    if (!v.is_number()) throw io_error(where + ": field '" + key + "' is not a number");
    return v.get<double>();
}

std::int64_t require_int(const json& j, const std::string& key, const std::string& where) {
    const json& v = require_field(j, key, where);
    if (!v.is_number_integer()) {
        throw io_error(where + ": field '" + key + "' is not an integer");
    }
    return v.get<std::int64_t>();
}

std::string require_string(const json& j, const std::string& key, const std::string& where) {
    const json& v = require_field(j, key, where);
    if (!v.is_string()) throw io_error(where + ": field '" + key + "' is not a string");
    return v.get<std::string>();
}

std::vector<double> require_doubles(const json& j, const std::string& key,
                                    const std::string& where) {
    const json& v = require_field(j, key, where);
    if (!v.is_array()) throw io_error(where + ": field '" + key + "' is not an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        if (!e.is_number()) {
            throw io_error(where + ": field '" + key + "' has a non-numeric entry");
        }
        out.push_back(e.get<double>());
    }
    return out;
}

}  // namespace actsteer
