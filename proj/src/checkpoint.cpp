#include "mhd/checkpoint.hpp"

#include "mhd/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mhd::checkpoint {
namespace {

constexpr char kMagic[8] = {'M', 'H', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        out_.insert(out_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    template <class T>
    T get() {
        T v{};
        read(&v, sizeof(T));
        return v;
    }
    void read(void* dst, std::size_t n) {
        if (pos_ + n > in_.size()) throw InputError("checkpoint: truncated data");
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const nn::ClientModel& model) {
    Writer w;
    w.put_bytes(kMagic, sizeof kMagic);
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::int64_t>(model.client_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.backbone.layers.size()));
    for (const auto& layer : model.backbone.layers)
        w.put<std::uint8_t>(layer.activation == nn::Activation::relu ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.num_heads()));
    const auto ts = nn::tensors(model);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
        w.put_bytes(t.name.data(), t.name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) w.put<std::uint64_t>(d);
        w.put_bytes(t.values.data(), t.values.size() * sizeof(double));
    }
    return w.take();
}

nn::ClientModel deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    char magic[8];
    r.read(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError("checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));

    nn::ClientModel model;
    model.client_id = static_cast<int>(r.get<std::int64_t>());
    const auto depth = r.get<std::uint32_t>();
    model.backbone.layers.resize(depth);
    for (auto& layer : model.backbone.layers)
        layer.activation = r.get<std::uint8_t>() ? nn::Activation::relu : nn::Activation::identity;
    const auto heads = r.get<std::uint32_t>();
    if (heads == 0) throw InputError("checkpoint: model without heads");
    model.aux_heads.resize(heads - 1);

    const auto count = r.get<std::uint32_t>();
    if (count != 2 * (depth + heads)) throw InputError("checkpoint: tensor count does not match architecture");
    // Shapes come from the file; allocate each tensor before the name-order walk.
    struct Raw {
        std::string name;
        std::vector<std::size_t> shape;
        std::vector<double> values;
    };
    std::vector<Raw> raw(count);
    for (auto& t : raw) {
        const auto len = r.get<std::uint32_t>();
        t.name.resize(len);
        r.read(t.name.data(), len);
        const auto rank = r.get<std::uint32_t>();
        if (rank < 1 || rank > 2) throw InputError("checkpoint: tensor " + t.name + " has unsupported rank");
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
            n *= t.shape.back();
        }
        t.values.resize(n);
        r.read(t.values.data(), n * sizeof(double));
    }
    if (!r.done()) throw InputError("checkpoint: trailing bytes");

    auto place = [&](std::size_t i, nn::Linear& lin) {
        const Raw& w = raw[2 * i];
        const Raw& b = raw[2 * i + 1];
        if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[0])
            throw InputError("checkpoint: inconsistent shapes for " + w.name);
        lin.weight = Matrix(w.shape[0], w.shape[1]);
        lin.weight.data = w.values;
        lin.bias = b.values;
    };
    for (std::size_t i = 0; i < depth; ++i) place(i, model.backbone.layers[i].linear);
    for (std::size_t h = 0; h < heads; ++h) place(depth + h, model.head(h));

    const auto ts = nn::tensors(model);
    for (std::size_t i = 0; i < ts.size(); ++i)
        if (ts[i].name != raw[i].name) throw InputError("checkpoint: unexpected tensor " + raw[i].name);
    try {
        nn::validate(model);
    } catch (const ConfigError& e) {
        throw InputError(std::string("checkpoint: ") + e.what());
    }
    return model;
}

void save(const nn::ClientModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize(model);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("checkpoint: write failed for " + path.string());
}

nn::ClientModel load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace mhd::checkpoint
