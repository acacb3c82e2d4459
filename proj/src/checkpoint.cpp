#include "crackseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "crackseg/errors.hpp"

namespace fs = std::filesystem;

namespace crackseg {
namespace {

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    void tensor(const Tensor& t) {
        put<std::int32_t>(t.n());
        put<std::int32_t>(t.c());
        put<std::int32_t>(t.h());
        put<std::int32_t>(t.w());
        const auto* p = reinterpret_cast<const char*>(t.data());
        buf_.insert(buf_.end(), p, p + t.size() * sizeof(double));
    }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const std::vector<char>& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::string string() { return bytes(get<std::uint32_t>()); }
    Tensor tensor() {
        const auto n = get<std::int32_t>(), c = get<std::int32_t>(), h = get<std::int32_t>(), w = get<std::int32_t>();
        if (n < 0 || c < 0 || h < 0 || w < 0) fail("negative tensor dimension");
        const std::size_t count = static_cast<std::size_t>(n) * c * h * w;
        need(count * sizeof(double));
        Tensor t(n, c, h, w);
        std::memcpy(t.data(), buf_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
        return t;
    }
    bool at_end() const { return pos_ == buf_.size(); }
    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError("corrupt checkpoint " + origin_ + ": " + what);
    }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
    }

    const std::vector<char>& buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::vector<char> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_checkpoint(const fs::path& path, const CheckpointData& data) {
    Writer w;
    w.bytes(data.magic);
    w.string(data.header.dump());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.params.size()));
    for (const NamedTensor& p : data.params) {
        w.string(p.name);
        w.tensor(p.value);
    }
    w.put<std::int64_t>(data.optimizer.step);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.optimizer.m.size()));
    for (std::size_t i = 0; i < data.optimizer.m.size(); ++i) {
        w.tensor(data.optimizer.m[i]);
        w.tensor(data.optimizer.v[i]);
    }
    w.put<std::uint64_t>(data.history.size());
    for (const HistoryRow& r : data.history) {
        w.put<std::int64_t>(r.iter);
        w.put<double>(r.loss);
        w.put<double>(r.lr);
    }

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write checkpoint: " + tmp.string());
        out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!out) throw InputError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string peek_magic(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint: " + path.string());
    std::string magic(kSegMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (in.gcount() != static_cast<std::streamsize>(magic.size())) return {};
    return magic;
}

CheckpointData read_checkpoint(const fs::path& path, std::string_view expected_magic) {
    const std::vector<char> buf = slurp(path);
    Reader r(buf, path.string());
    CheckpointData data;
    data.magic = buf.size() >= expected_magic.size() ? std::string(buf.data(), expected_magic.size()) : std::string{};
    if (data.magic != expected_magic)
        throw FormatError("checkpoint " + path.string() + ": expected magic " + std::string(expected_magic) +
                          ", found '" + data.magic + "'");
    r.bytes(expected_magic.size());
    try {
        data.header = nlohmann::ordered_json::parse(r.string());
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad header: ") + e.what());
    }
    const auto nparams = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nparams; ++i) {
        NamedTensor p;
        p.name = r.string();
        p.value = r.tensor();
        data.params.push_back(std::move(p));
    }
    data.optimizer.step = r.get<std::int64_t>();
    const auto nmoments = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nmoments; ++i) {
        data.optimizer.m.push_back(r.tensor());
        data.optimizer.v.push_back(r.tensor());
    }
    const auto rows = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < rows; ++i) {
        HistoryRow row;
        row.iter = r.get<std::int64_t>();
        row.loss = r.get<double>();
        row.lr = r.get<double>();
        data.history.push_back(row);
    }
    if (!r.at_end()) r.fail("trailing bytes");
    return data;
}

std::vector<NamedTensor> snapshot(const nn::ParamList& params) {
    std::vector<NamedTensor> out;
    out.reserve(params.size());
    for (const nn::Param* p : params) out.push_back({p->name, p->value});
    return out;
}

void restore(const nn::ParamList& params, const std::vector<NamedTensor>& saved) {
    if (saved.size() != params.size())
        throw FormatError("checkpoint has " + std::to_string(saved.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (saved[i].name != params[i]->name || !saved[i].value.same_shape(params[i]->value))
            throw FormatError("checkpoint tensor '" + saved[i].name + "' " + saved[i].value.shape_string() +
                              " does not match model tensor '" + params[i]->name + "' " +
                              params[i]->value.shape_string());
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i].value;
}

void write_history_csv(const fs::path& path, const std::vector<HistoryRow>& history) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write history: " + path.string());
    out << "iter,loss,lr\n";
    out.precision(17);
    for (const HistoryRow& r : history) out << r.iter << ',' << r.loss << ',' << r.lr << '\n';
}

}  // namespace crackseg
