#include "bigen/checkpoint.hpp"

#include "bigen/binary_io.hpp"

namespace bigen {

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& entries) {
    io::ByteWriter w;
    w.magic("BGCK");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.str(e.name);
        w.u32(static_cast<std::uint32_t>(e.value.rank()));
        for (auto extent : e.value.shape()) w.u32(static_cast<std::uint32_t>(extent));
        for (float v : e.value.values()) w.f32(v);
    }
    return std::move(w.buffer());
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
    io::ByteReader r(bytes, "checkpoint");
    r.expect_magic("BGCK");
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported field 'version' = " + std::to_string(version));
    }
    const auto count = r.u32("entry_count");
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str("name");
        const auto rank = r.u32("rank");
        if (rank == 0 || rank > 8) throw DataError("checkpoint: invalid field 'rank' for entry '" + name + "'");
        Shape shape(rank);
        for (auto& e : shape) e = r.u32("extent");
        std::vector<float> data(shape_numel(shape));
        for (auto& v : data) v = r.f32("values");
        out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
    }
    if (!r.at_end()) throw DataError("checkpoint: trailing bytes after last entry");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
    io::write_file(path, encode_checkpoint(entries));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path));
}

}  // namespace bigen
