#include "flow4dsr/container.hpp"
#include "flow4dsr/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

static_assert(std::endian::native == std::endian::little,
              "F4D1 serialization assumes a little-endian host");

namespace flow4dsr {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', '4', 'D', '1'};
constexpr std::size_t kCountPad = 24; // headroom for patching the final count
constexpr std::size_t kMaxHeaderLen = 16u << 20;

std::string serialize_header(const ContainerHeader& h) {
    json j;
    j["version"] = h.version;
    j["kind"] = h.kind;
    j["split"] = h.split;
    j["count"] = h.count;
    j["seed"] = h.seed;
    j["spacing_mm"] = h.spacing_mm;
    if (h.kind == "patch_pair") {
        j["lr_dims"] = h.lr_dims;
        j["hr_dims"] = h.hr_dims;
    } else if (h.kind == "volume") {
        j["dims"] = h.dims;
        j["arrays"] = h.arrays;
    } else {
        throw ValidationError("F4D1: unknown record kind '" + h.kind + "'");
    }
    if (!h.policy_json.empty()) j["policy"] = json::parse(h.policy_json);
    return j.dump();
}

ContainerHeader parse_header(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("F4D1: malformed JSON header: ") + e.what());
    }
    try {
        ContainerHeader h;
        h.version = j.at("version").get<int>();
        if (h.version != 1)
            throw FormatError("F4D1: unsupported format version " +
                              std::to_string(h.version));
        h.kind = j.at("kind").get<std::string>();
        h.split = j.value("split", std::string{});
        h.count = j.at("count").get<std::uint64_t>();
        h.seed = j.value("seed", std::uint64_t{0});
        h.spacing_mm = j.at("spacing_mm").get<Vec3d>();
        if (h.kind == "patch_pair") {
            h.lr_dims = j.at("lr_dims").get<Vec3i>();
            h.hr_dims = j.at("hr_dims").get<Vec3i>();
        } else if (h.kind == "volume") {
            h.dims = j.at("dims").get<Vec3i>();
            h.arrays = j.at("arrays").get<std::vector<std::string>>();
        } else {
            throw FormatError("F4D1: unknown record kind '" + h.kind + "'");
        }
        if (j.contains("policy")) h.policy_json = j["policy"].dump();
        return h;
    } catch (const json::exception& e) {
        throw FormatError(std::string("F4D1: bad header field: ") + e.what());
    }
}

std::int64_t dims_count(const Vec3i& d) {
    return std::int64_t(d[0]) * d[1] * d[2];
}

} // namespace

// ---- writer --------------------------------------------------------------

ContainerWriter::ContainerWriter(const std::filesystem::path& path, ContainerHeader header)
    : path_(path), header_(std::move(header)) {
    if (header_.kind == "patch_pair") {
        if (dims_count(header_.lr_dims) <= 0 || dims_count(header_.hr_dims) <= 0)
            throw ValidationError("F4D1: patch container needs lr_dims and hr_dims");
        for (int a = 0; a < 3; ++a)
            if (header_.hr_dims[a] != 2 * header_.lr_dims[a])
                throw ValidationError("F4D1: hr_dims must be exactly 2x lr_dims");
    } else if (header_.kind == "volume") {
        if (dims_count(header_.dims) <= 0 || header_.arrays.empty())
            throw ValidationError("F4D1: volume container needs dims and arrays");
    }
    header_.count = 0;
    std::string head = serialize_header(header_);
    head.append(kCountPad, ' ');
    header_len_ = std::uint32_t(head.size());

    file_ = std::fopen(path_.string().c_str(), "wb");
    if (!file_)
        throw FormatError("F4D1: cannot open '" + path_.string() + "' for writing");
    std::fwrite(kMagic, 1, 4, file_);
    std::fwrite(&header_len_, 4, 1, file_);
    std::fwrite(head.data(), 1, head.size(), file_);
}

ContainerWriter::~ContainerWriter() {
    try {
        close();
    } catch (...) {
        if (file_) std::fclose(file_);
        file_ = nullptr;
    }
}

void ContainerWriter::write_bytes(const void* data, std::size_t len) {
    if (std::fwrite(data, 1, len, file_) != len)
        throw FormatError("F4D1: short write to '" + path_.string() + "'");
    crc_.update(data, len);
}

void ContainerWriter::append(const PatchPair& pair) {
    if (header_.kind != "patch_pair")
        throw ValidationError("F4D1: patch record in a '" + header_.kind + "' container");
    auto check = [&](const VolumeF& v, const Vec3i& want) {
        if (v.dims() != want)
            throw ValidationError("F4D1: patch volume dims do not match the header");
    };
    for (auto& v : pair.lr_velocity) check(v, header_.lr_dims);
    for (auto& v : pair.lr_magnitude) check(v, header_.lr_dims);
    for (auto& v : pair.hr_velocity) check(v, header_.hr_dims);

    for (auto& v : pair.lr_velocity) write_bytes(v.data(), std::size_t(v.size()) * 4);
    for (auto& v : pair.lr_magnitude) write_bytes(v.data(), std::size_t(v.size()) * 4);
    for (auto& v : pair.hr_velocity) write_bytes(v.data(), std::size_t(v.size()) * 4);
    float meta[4] = {pair.venc[0], pair.venc[1], pair.venc[2], pair.fluid_fraction};
    write_bytes(meta, sizeof meta);
    ++count_;
}

void ContainerWriter::append(const VolumeRecord& record) {
    if (header_.kind != "volume")
        throw ValidationError("F4D1: volume record in a '" + header_.kind + "' container");
    if (record.arrays.size() != header_.arrays.size())
        throw ValidationError("F4D1: volume record array count mismatch");
    for (auto& v : record.arrays)
        if (v.dims() != header_.dims)
            throw ValidationError("F4D1: volume record dims do not match the header");

    for (auto& v : record.arrays) write_bytes(v.data(), std::size_t(v.size()) * 4);
    float meta[4] = {record.meta.venc[0], record.meta.venc[1], record.meta.venc[2],
                     record.meta.aux};
    write_bytes(meta, sizeof meta);
    ++count_;
}

void ContainerWriter::close() {
    if (closed_ || !file_) return;
    std::uint32_t crc = crc_.value();
    if (std::fwrite(&crc, 4, 1, file_) != 1)
        throw FormatError("F4D1: short write of checksum");

    // patch the final count into the (space-padded) header
    header_.count = count_;
    std::string head = serialize_header(header_);
    if (head.size() > header_len_)
        throw FormatError("F4D1: header grew past its reserved length");
    head.append(header_len_ - head.size(), ' ');
    if (std::fseek(file_, 8, SEEK_SET) != 0 ||
        std::fwrite(head.data(), 1, head.size(), file_) != head.size())
        throw FormatError("F4D1: failed to finalize header");

    std::fclose(file_);
    file_ = nullptr;
    closed_ = true;
}

// ---- reader --------------------------------------------------------------

ContainerReader::ContainerReader(const std::filesystem::path& path) : path_(path) {
    file_ = std::fopen(path_.string().c_str(), "rb");
    if (!file_)
        throw FormatError("F4D1: cannot open '" + path_.string() + "'");
    char magic[4];
    if (std::fread(magic, 1, 4, file_) != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("F4D1: bad magic in '" + path_.string() + "'");
    std::uint32_t len = 0;
    if (std::fread(&len, 4, 1, file_) != 1 || len == 0 || len > kMaxHeaderLen)
        throw FormatError("F4D1: bad header length in '" + path_.string() + "'");
    std::string head(len, '\0');
    if (std::fread(head.data(), 1, len, file_) != len)
        throw FormatError("F4D1: truncated header in '" + path_.string() + "'");
    header_ = parse_header(head);
}

ContainerReader::~ContainerReader() {
    if (file_) std::fclose(file_);
}

void ContainerReader::read_bytes(void* data, std::size_t len) {
    if (std::fread(data, 1, len, file_) != len)
        throw FormatError("F4D1: truncated record in '" + path_.string() + "'");
    crc_.update(data, len);
}

PatchPair ContainerReader::read_patch() {
    if (header_.kind != "patch_pair")
        throw FormatError("F4D1: '" + path_.string() + "' is not a patch container");
    if (read_count_ >= header_.count)
        throw FormatError("F4D1: read past declared record count");
    PatchPair p;
    for (auto& v : p.lr_velocity) {
        v = VolumeF(header_.lr_dims);
        read_bytes(v.data(), std::size_t(v.size()) * 4);
    }
    for (auto& v : p.lr_magnitude) {
        v = VolumeF(header_.lr_dims);
        read_bytes(v.data(), std::size_t(v.size()) * 4);
    }
    for (auto& v : p.hr_velocity) {
        v = VolumeF(header_.hr_dims);
        read_bytes(v.data(), std::size_t(v.size()) * 4);
    }
    float meta[4];
    read_bytes(meta, sizeof meta);
    p.venc = {meta[0], meta[1], meta[2]};
    p.fluid_fraction = meta[3];
    ++read_count_;
    return p;
}

VolumeRecord ContainerReader::read_volume() {
    if (header_.kind != "volume")
        throw FormatError("F4D1: '" + path_.string() + "' is not a volume container");
    if (read_count_ >= header_.count)
        throw FormatError("F4D1: read past declared record count");
    VolumeRecord r;
    r.arrays.reserve(header_.arrays.size());
    for (std::size_t i = 0; i < header_.arrays.size(); ++i) {
        VolumeF v(header_.dims);
        read_bytes(v.data(), std::size_t(v.size()) * 4);
        r.arrays.push_back(std::move(v));
    }
    float meta[4];
    read_bytes(meta, sizeof meta);
    r.meta.venc = {meta[0], meta[1], meta[2]};
    r.meta.aux = meta[3];
    ++read_count_;
    return r;
}

void ContainerReader::finish() {
    if (read_count_ != header_.count)
        throw FormatError("F4D1: finish() called after " + std::to_string(read_count_) +
                          " of " + std::to_string(header_.count) + " records");
    std::uint32_t stored = 0;
    if (std::fread(&stored, 4, 1, file_) != 1)
        throw FormatError("F4D1: missing checksum in '" + path_.string() + "'");
    if (stored != crc_.value())
        throw FormatError("F4D1: checksum mismatch in '" + path_.string() + "'");
}

// ---- convenience ----------------------------------------------------------

ContainerHeader write_patch_container(const std::filesystem::path& path,
                                      ContainerHeader header,
                                      const std::vector<PatchPair>& records) {
    ContainerWriter writer(path, std::move(header));
    for (const auto& r : records) writer.append(r);
    writer.close();
    ContainerReader probe(path);
    return probe.header();
}

std::pair<ContainerHeader, std::vector<PatchPair>>
read_patch_container(const std::filesystem::path& path) {
    ContainerReader reader(path);
    std::vector<PatchPair> records;
    records.reserve(std::size_t(reader.header().count));
    for (std::uint64_t i = 0; i < reader.header().count; ++i)
        records.push_back(reader.read_patch());
    reader.finish();
    return {reader.header(), std::move(records)};
}

} // namespace flow4dsr
