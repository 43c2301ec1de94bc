#include "patchail/checkpoint.hpp"

#include "binary_io.hpp"

#include <fstream>
#include <map>

namespace patchail {

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write("PTCK", 4);
    io::put<std::uint32_t>(os, kCheckpointVersion);
    for (const auto& [name, t] : tensors) {
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (Index e : t.shape()) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
    }
    if (!os) throw std::runtime_error("write failed for checkpoint " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    io::expect_magic(is, "PTCK");
    const auto version = io::get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) {
        throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    NamedTensors out;
    while (is.peek() != std::char_traits<char>::eof()) {
        const auto len = io::get<std::uint32_t>(is, "name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw io::FormatError("truncated file while reading name");
        const auto rank = io::get<std::uint32_t>(is, "rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(io::get<std::uint32_t>(is, "extent"));
        Array values(numel(shape));
        if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8))) {
            throw io::FormatError("truncated file while reading values of " + name);
        }
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return out;
}

void restore_checkpoint(const std::filesystem::path& path, const NamedTensors& targets) {
    std::map<std::string, Tensor> stored;
    for (auto& [name, t] : load_checkpoint(path)) stored.emplace(name, t);
    for (const auto& [name, target] : targets) {
        auto it = stored.find(name);
        if (it == stored.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape() != target.shape()) {
            throw std::runtime_error("checkpoint/arch mismatch for '" + name + "': stored " +
                                     to_string(it->second.shape()) + ", expected " + to_string(target.shape()));
        }
        Tensor handle = target;
        handle.data() = it->second.data();
    }
}

}  // namespace patchail
