#include "fedsim/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedsim {

namespace {

const char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(kB64Chars[(v >> 18) & 63]);
        out.push_back(kB64Chars[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Chars[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Chars[v & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    unsigned int buf = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = value_of(c);
        if (v < 0) throw ParseError("invalid base64 character");
        buf = (buf << 6) | static_cast<unsigned int>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
        }
    }
    return out;
}

namespace {

std::string tensor_to_b64(const Tensor& t) {
    return base64_encode(reinterpret_cast<const unsigned char*>(t.data()),
                         t.size() * sizeof(double));
}

Tensor tensor_from_b64(const std::vector<std::size_t>& shape, const std::string& b64) {
    const auto bytes = base64_decode(b64);
    if (bytes.size() != shape_product(shape) * sizeof(double)) {
        throw ParseError("tensor payload size mismatch");
    }
    std::vector<double> data(shape_product(shape));
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor(shape, std::move(data));
}

}  // namespace

std::string checkpoint_to_json(const ModelState& state) {
    nlohmann::json doc;
    doc["format"] = "fedsim-checkpoint";
    doc["version"] = 1;
    doc["arch_id"] = state.arch_id;
    doc["variant"] = variant_name(state.variant);
    doc["seed_lineage"] = state.seed_lineage;
    doc["byte_order"] = "little-endian";
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, entry] : state.entries) {
        nlohmann::json e;
        e["name"] = name;
        e["role"] = param_role_name(entry.role);
        e["shape"] = entry.value.shape();
        e["data"] = tensor_to_b64(entry.value);
        entries.push_back(std::move(e));
    }
    doc["entries"] = std::move(entries);
    return doc.dump(2);
}

ModelState checkpoint_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint json: ") + e.what());
    }
    if (doc.value("format", "") != "fedsim-checkpoint") {
        throw ParseError("not a fedsim checkpoint");
    }
    ModelState state;
    state.arch_id = doc.at("arch_id").get<std::string>();
    state.variant = variant_from_name(doc.at("variant").get<std::string>());
    state.seed_lineage = doc.value("seed_lineage", "");
    for (const auto& e : doc.at("entries")) {
        ModelEntry entry;
        entry.role = param_role_from_name(e.at("role").get<std::string>());
        entry.value = tensor_from_b64(e.at("shape").get<std::vector<std::size_t>>(),
                                      e.at("data").get<std::string>());
        state.entries.emplace(e.at("name").get<std::string>(), std::move(entry));
    }
    return state;
}

void checkpoint_save(const std::filesystem::path& path, const ModelState& state) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << checkpoint_to_json(state) << "\n";
}

ModelState checkpoint_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_json(buf.str());
}

namespace {

constexpr std::uint32_t kShardMagic = 0x46534844;  // "FSHD"

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated shard file");
    return v;
}

}  // namespace

void shard_save(const std::filesystem::path& path, const Shard& shard) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_pod<std::uint32_t>(out, kShardMagic);
    write_pod<std::uint32_t>(out, 1);  // version
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shard.domain_id));
    write_pod<std::uint8_t>(out, shard.split == Split::Train ? 0 : 1);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shard.samples.size()));
    std::uint32_t c = 0, h = 0, w = 0;
    if (!shard.samples.empty()) {
        const auto& shape = shard.samples[0].x.shape();
        c = static_cast<std::uint32_t>(shape[0]);
        h = static_cast<std::uint32_t>(shape[1]);
        w = static_cast<std::uint32_t>(shape[2]);
    }
    write_pod(out, c);
    write_pod(out, h);
    write_pod(out, w);
    for (const auto& s : shard.samples) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.label));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.domain_id));
        out.write(reinterpret_cast<const char*>(s.x.data()),
                  static_cast<std::streamsize>(s.x.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Shard shard_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    if (read_pod<std::uint32_t>(in) != kShardMagic) {
        throw ParseError(path.string() + " is not a shard file");
    }
    if (read_pod<std::uint32_t>(in) != 1) throw ParseError("unsupported shard version");
    Shard shard;
    shard.domain_id = read_pod<std::uint32_t>(in);
    shard.split = read_pod<std::uint8_t>(in) == 0 ? Split::Train : Split::Test;
    const std::uint32_t count = read_pod<std::uint32_t>(in);
    const std::uint32_t c = read_pod<std::uint32_t>(in);
    const std::uint32_t h = read_pod<std::uint32_t>(in);
    const std::uint32_t w = read_pod<std::uint32_t>(in);
    shard.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.label = read_pod<std::uint32_t>(in);
        s.domain_id = read_pod<std::uint32_t>(in);
        std::vector<double> data(static_cast<std::size_t>(c) * h * w);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw ParseError("truncated shard file");
        s.x = Tensor({c, h, w}, std::move(data));
        shard.samples.push_back(std::move(s));
    }
    return shard;
}

void manifest_save(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "# file domain_id split count\n";
    for (const auto& e : entries) {
        out << e.file << " " << e.domain_id << " " << e.split << " " << e.count << "\n";
    }
}

std::vector<ManifestEntry> manifest_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.file >> e.domain_id >> e.split >> e.count)) {
            throw ParseError("malformed manifest line: " + line);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace fedsim
