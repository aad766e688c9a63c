#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/trainer/trainer.hpp"

namespace nsdesk::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'S', 'H', 'D'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    template <typename U>
    void put(U v) {
        char b[sizeof(U)];
        std::memcpy(b, &v, sizeof(U));
        out.append(b, sizeof(U));
    }
    void put_string(std::string_view s) {
        put<std::uint64_t>(s.size());
        out.append(s);
    }
    std::string out;
};

class Reader {
public:
    Reader(std::string_view bytes, std::string_view source) : in_(bytes), source_(source) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, in_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        const std::string_view s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string get_string(const char* what) {
        const auto n = get<std::uint64_t>(what);
        return std::string(bytes(static_cast<std::size_t>(n), what));
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }
    [[noreturn]] void fail(const std::string& why) const {
        throw CheckpointError(std::string(source_) + ": corrupt checkpoint: " + why);
    }

private:
    void need(std::size_t n, const char* what) const {
        if (n > remaining()) fail(std::string("truncated while reading ") + what);
    }
    std::string_view in_;
    std::string_view source_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint Checkpoint::capture(const TrainConfig& config, const net::Model<float>& model, std::size_t epoch,
                               std::vector<double> w, const Rng& rng) {
    Checkpoint c;
    c.config = config;
    c.epoch = epoch;
    c.w = std::move(w);
    c.rng_state = rng.state();
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        c.names.push_back(model.param_info()[i].name);
        c.tensors.push_back(model.params()[i].cast<double>());
    }
    const auto bnames = model.buffer_names();
    for (std::size_t i = 0; i < model.buffers().size(); ++i) {
        c.names.push_back(bnames[i]);
        c.tensors.push_back(model.buffers()[i].cast<double>());
    }
    return c;
}

void Checkpoint::load_into(net::Model<float>& model) const {
    std::vector<std::string> want;
    std::vector<Tensor<float>*> dst;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        want.push_back(model.param_info()[i].name);
        dst.push_back(&model.params()[i]);
    }
    const auto bnames = model.buffer_names();
    for (std::size_t i = 0; i < model.buffers().size(); ++i) {
        want.push_back(bnames[i]);
        dst.push_back(&model.buffers()[i]);
    }
    for (std::size_t i = 0; i < std::max(want.size(), names.size()); ++i) {
        if (i >= names.size()) throw ShapeError("checkpoint: missing tensor '" + want[i] + "'");
        if (i >= want.size()) throw ShapeError("checkpoint: unexpected tensor '" + names[i] + "'");
        if (names[i] != want[i]) {
            throw ShapeError("checkpoint: tensor '" + names[i] + "' where the model expects '" + want[i] + "'");
        }
        if (tensors[i].shape() != dst[i]->shape()) {
            throw ShapeError("checkpoint: tensor '" + names[i] + "' has shape " + shape_str(tensors[i].shape()) +
                             ", model expects " + shape_str(dst[i]->shape()));
        }
    }
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = tensors[i].cast<float>();
}

net::Model<float> Checkpoint::model() const {
    net::Model<float> m(config.model, 0);
    load_into(m);
    return m;
}

std::string serialize(const Checkpoint& c) {
    if (c.names.size() != c.tensors.size()) throw CheckpointError("checkpoint: names and tensors differ in count");
    Writer w;
    w.out.append(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put_string(to_text(c.config));
    w.put<std::uint64_t>(c.epoch);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.w.size()));
    for (double v : c.w) w.put<double>(v);
    w.put_string(c.rng_state);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.names.size()));
    for (std::size_t i = 0; i < c.names.size(); ++i) {
        w.put_string(c.names[i]);
        const Shape& s = c.tensors[i].shape();
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        for (std::size_t d : s) w.put<std::uint64_t>(d);
    }
    const std::size_t payload_start = w.out.size();
    for (const auto& t : c.tensors) {
        w.out.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
    }
    w.put<std::uint64_t>(fnv1a(w.out.data() + payload_start, w.out.size() - payload_start));
    return std::move(w.out);
}

Checkpoint deserialize(std::string_view bytes, std::string_view source) {
    Reader r(bytes, source);
    if (r.remaining() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) r.fail("bad magic (expected NSHD)");
    r.bytes(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(std::string(source) + ": unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint c;
    const std::string text = r.get_string("config");
    try {
        c.config = parse_train_config(text, std::string(source) + " config");
    } catch (const Error& e) {
        r.fail(std::string("config block: ") + e.what());
    }
    c.epoch = static_cast<std::size_t>(r.get<std::uint64_t>("epoch"));
    const auto nw = r.get<std::uint32_t>("weight count");
    if (nw > r.remaining() / sizeof(double)) r.fail("weight count out of range");
    for (std::uint32_t i = 0; i < nw; ++i) c.w.push_back(r.get<double>("weights"));
    c.rng_state = r.get_string("rng state");
    const auto nt = r.get<std::uint32_t>("tensor count");
    std::vector<Shape> shapes;
    std::size_t total = 0;
    for (std::uint32_t i = 0; i < nt; ++i) {
        c.names.push_back(r.get_string("tensor name"));
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) r.fail("tensor '" + c.names.back() + "' has rank " + std::to_string(rank));
        Shape s;
        for (std::uint32_t k = 0; k < rank; ++k) s.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
        total += numel(s);
        if (total > bytes.size()) r.fail("shape table larger than the file");
        shapes.push_back(std::move(s));
    }

    // The shape table must describe exactly the model of the config.
    try {
        const net::Model<float> probe(c.config.model, 0);
        std::vector<std::pair<std::string, Shape>> want;
        for (const auto& pi : probe.param_info()) want.emplace_back(pi.name, pi.shape);
        const auto bn = probe.buffer_names();
        for (std::size_t i = 0; i < bn.size(); ++i) want.emplace_back(bn[i], probe.buffers()[i].shape());
        if (want.size() != c.names.size()) {
            r.fail("shape table has " + std::to_string(c.names.size()) + " tensors, config implies " +
                   std::to_string(want.size()));
        }
        for (std::size_t i = 0; i < want.size(); ++i) {
            if (want[i].first != c.names[i] || want[i].second != shapes[i]) {
                r.fail("shape table entry '" + c.names[i] + "' " + shape_str(shapes[i]) + " does not match config (" +
                       want[i].first + " " + shape_str(want[i].second) + ")");
            }
        }
    } catch (const ConfigError& e) {
        r.fail(std::string("config does not describe a valid model: ") + e.what());
    }

    const std::size_t payload_start = r.pos();
    for (const Shape& s : shapes) {
        const std::string_view raw = r.bytes(numel(s) * sizeof(double), "payload");
        Tensor<double> t = Tensor<double>::uninitialized(s);
        std::memcpy(t.ptr(), raw.data(), raw.size());
        c.tensors.push_back(std::move(t));
    }
    const std::uint64_t expect = fnv1a(bytes.data() + payload_start, r.pos() - payload_start);
    if (r.get<std::uint64_t>("checksum") != expect) r.fail("payload checksum mismatch");
    if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str(), path.string());
}

}  // namespace nsdesk::train
