#pragma once

#include "flow4dsr/crc32.hpp"
#include "flow4dsr/patch.hpp"
#include "flow4dsr/volume.hpp"

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace flow4dsr {

/// "F4D1" container: 4-byte magic, u32 little-endian header length, UTF-8
/// JSON header, fixed-layout records, trailing CRC32 of the record payload.
///
/// Record kinds (declared in the header):
///   patch_pair — 9 raw float32 arrays (3 LR velocity, 3 LR magnitude at
///                lr_dims; 3 HR velocity at hr_dims) + 16-byte metadata
///                (3 float32 VENCs, float32 fluid fraction).
///   volume     — one float32 array per name in `arrays` (all at `dims`)
///                + 16-byte metadata (3 float32 VENCs, float32 aux; aux
///                carries the frame time for generated frames).
struct ContainerHeader {
    int version = 1;
    std::string kind;  // "patch_pair" | "volume"
    std::string split; // free-form tag: train/val/test/frames/...
    std::uint64_t count = 0;
    std::uint64_t seed = 0;
    Vec3d spacing_mm{0.594, 0.594, 0.594}; // HR spacing for patch containers

    // patch_pair kind
    Vec3i lr_dims{0, 0, 0};
    Vec3i hr_dims{0, 0, 0};

    // volume kind
    Vec3i dims{0, 0, 0};
    std::vector<std::string> arrays;

    std::string policy_json; // optional augmentation-policy snapshot
};

struct VolumeRecordMeta {
    std::array<float, 3> venc{0, 0, 0};
    float aux = 0.0f;
};

struct VolumeRecord {
    std::vector<VolumeF> arrays; // ordered per header
    VolumeRecordMeta meta;
};

class ContainerWriter {
public:
    ContainerWriter(const std::filesystem::path& path, ContainerHeader header);
    ~ContainerWriter();
    ContainerWriter(const ContainerWriter&) = delete;
    ContainerWriter& operator=(const ContainerWriter&) = delete;

    void append(const PatchPair& pair);
    void append(const VolumeRecord& record);

    /// Patch the final record count into the header and write the trailing
    /// CRC32. Called by the destructor if not called explicitly.
    void close();

    std::uint64_t count() const { return count_; }

private:
    void write_bytes(const void* data, std::size_t len);

    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
    ContainerHeader header_;
    std::uint32_t header_len_ = 0;
    std::uint64_t count_ = 0;
    Crc32 crc_;
    bool closed_ = false;
};

class ContainerReader {
public:
    explicit ContainerReader(const std::filesystem::path& path);
    ~ContainerReader();
    ContainerReader(const ContainerReader&) = delete;
    ContainerReader& operator=(const ContainerReader&) = delete;

    const ContainerHeader& header() const { return header_; }

    PatchPair read_patch();
    VolumeRecord read_volume();

    /// Verify the trailing checksum after the last record has been read.
    void finish();

private:
    void read_bytes(void* data, std::size_t len);

    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
    ContainerHeader header_;
    std::uint64_t read_count_ = 0;
    Crc32 crc_;
};

/// Convenience: write all records and return the final header (with count).
ContainerHeader write_patch_container(const std::filesystem::path& path,
                                      ContainerHeader header,
                                      const std::vector<PatchPair>& records);

/// Convenience: read and fully verify a patch container.
std::pair<ContainerHeader, std::vector<PatchPair>>
read_patch_container(const std::filesystem::path& path);

} // namespace flow4dsr
