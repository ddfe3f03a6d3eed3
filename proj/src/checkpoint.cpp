#include "mmflow/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mmflow/error.hpp"

namespace mmflow {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'L', 'O', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* p;
    size_t n;
    size_t at = 0;

    void need(size_t k) const {
        if (at + k > n) throw UsageError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[at + i]) << (8 * i);
        at += 8;
        return v;
    }
    std::string bytes(size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + at), k);
        at += k;
        return s;
    }
};

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

void Checkpoint::append(const std::string& name, const std::vector<int>& shape,
                        const float* data) {
    if (find(name)) throw UsageError("checkpoint: duplicate entry '" + name + "'");
    CheckpointEntry e;
    e.name = name;
    e.shape = shape;
    e.offset = payload.size() * sizeof(float);
    e.nbytes = static_cast<uint64_t>(shape_numel(shape)) * sizeof(float);
    entries.push_back(e);
    payload.insert(payload.end(), data, data + shape_numel(shape));
}

Checkpoint make_checkpoint(const VelocityModel& model, const std::vector<Tensor>& ema,
                           uint64_t config_digest, uint64_t step) {
    const auto& named = model.named_parameters();
    if (!ema.empty() && ema.size() != named.size())
        throw UsageError("checkpoint: ema size != parameter count");

    Checkpoint ckpt;
    ckpt.config_digest = config_digest;
    ckpt.step = step;
    for (const auto& [name, p] : named) ckpt.append(name, p.shape(), p.data().data());
    if (!ema.empty()) {
        ckpt.flags |= 1u;
        for (size_t i = 0; i < named.size(); ++i) {
            if (ema[i].shape() != named[i].second.shape())
                throw UsageError("checkpoint: ema shape mismatch at '" + named[i].first + "'");
            ckpt.append("ema." + named[i].first, ema[i].shape(), ema[i].data().data());
        }
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, ckpt.version);
    put_u32(out, ckpt.flags);
    put_u64(out, ckpt.config_digest);
    put_u64(out, ckpt.step);
    put_u32(out, static_cast<uint32_t>(ckpt.entries.size()));

    uint64_t offset = 0;
    for (const auto& e : ckpt.entries) {
        if (static_cast<int64_t>(e.nbytes) != shape_numel(e.shape) * 4)
            throw UsageError("checkpoint: entry '" + e.name + "' size disagrees with its shape");
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out += e.name;
        put_u32(out, static_cast<uint32_t>(e.shape.size()));
        for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
        put_u64(out, offset);
        put_u64(out, e.nbytes);
        offset += e.nbytes;
    }
    if (offset != ckpt.payload.size() * sizeof(float))
        throw UsageError("checkpoint: directory does not cover the payload");

    put_u64(out, offset);
    for (float f : ckpt.payload) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }

    std::ofstream file(path, std::ios::binary);
    if (!file) throw UsageError("checkpoint: cannot write '" + path + "'");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw UsageError("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw UsageError("checkpoint: cannot open '" + path + "'");
    std::string blob((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    Reader r{reinterpret_cast<const unsigned char*>(blob.data()), blob.size()};
    if (r.bytes(8) != std::string(kMagic, sizeof(kMagic)))
        throw UsageError("checkpoint: '" + path + "' is not a checkpoint file");

    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != kVersion)
        throw UsageError("checkpoint: unsupported version " + std::to_string(ckpt.version));
    ckpt.flags = r.u32();
    ckpt.config_digest = r.u64();
    ckpt.step = r.u64();

    const uint32_t count = r.u32();
    uint64_t expect_offset = 0;
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.bytes(r.u32());
        const uint32_t rank = r.u32();
        if (rank == 0 || rank > 3) throw UsageError("checkpoint: bad rank for '" + e.name + "'");
        for (uint32_t k = 0; k < rank; ++k) {
            uint32_t d = r.u32();
            if (d == 0 || d > (1u << 28)) throw UsageError("checkpoint: bad dim in '" + e.name +
                                                           "'");
            e.shape.push_back(static_cast<int>(d));
        }
        e.offset = r.u64();
        e.nbytes = r.u64();
        if (e.offset != expect_offset ||
            static_cast<int64_t>(e.nbytes) != shape_numel(e.shape) * 4)
            throw UsageError("checkpoint: entry '" + e.name + "' has an inconsistent extent");
        expect_offset += e.nbytes;
        ckpt.entries.push_back(std::move(e));
    }

    const uint64_t payload_bytes = r.u64();
    if (payload_bytes != expect_offset || payload_bytes % 4 != 0)
        throw UsageError("checkpoint: payload size does not match the directory");
    ckpt.payload.resize(payload_bytes / 4);
    for (auto& f : ckpt.payload) {
        uint32_t bits = r.u32();
        std::memcpy(&f, &bits, 4);
    }
    if (r.at != r.n) throw UsageError("checkpoint: trailing bytes in '" + path + "'");
    return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, VelocityModel& model, const std::string& prefix) {
    for (const auto& [name, p] : model.named_parameters()) {
        const CheckpointEntry* e = ckpt.find(prefix + name);
        if (!e) throw UsageError("checkpoint: missing entry '" + prefix + name + "'");
        if (e->shape != p.shape())
            throw UsageError("checkpoint: entry '" + e->name + "' is " + shape_str(e->shape) +
                             ", model wants " + shape_str(p.shape()));
        Tensor dst = p;
        std::memcpy(dst.data().data(), ckpt.payload.data() + e->offset / 4, e->nbytes);
    }
}

Checkpoint merge_checkpoints(const Checkpoint& a, const Checkpoint& b,
                             const std::string& shared_name) {
    const std::string needle = "." + shared_name + ".";
    auto mentions = [&](const Checkpoint& c) {
        for (const auto& e : c.entries)
            if (e.name.find(needle) != std::string::npos) return true;
        return false;
    };
    if (!mentions(a) || !mentions(b))
        throw UsageError("merge: modality '" + shared_name + "' is not present in both "
                         "checkpoints");

    std::string offenders;
    for (const auto& ea : a.entries) {
        const CheckpointEntry* eb = b.find(ea.name);
        if (eb && eb->shape != ea.shape)
            offenders += (offenders.empty() ? "" : ", ") + ea.name + " " + shape_str(ea.shape) +
                         " vs " + shape_str(eb->shape);
    }
    if (!offenders.empty()) throw UsageError("merge: shape mismatch on " + offenders);

    Checkpoint out;
    out.config_digest = a.config_digest == b.config_digest ? a.config_digest : 0;
    out.step = std::max(a.step, b.step);

    auto values = [](const Checkpoint& c, const CheckpointEntry& e) {
        return c.payload.data() + e.offset / 4;
    };
    for (const auto& ea : a.entries) {
        const CheckpointEntry* eb = b.find(ea.name);
        if (!eb) {
            out.append(ea.name, ea.shape, values(a, ea));
            continue;
        }
        std::vector<float> mean(static_cast<size_t>(shape_numel(ea.shape)));
        const float* pa = values(a, ea);
        const float* pb = values(b, *eb);
        for (size_t i = 0; i < mean.size(); ++i)
            mean[i] = static_cast<float>(0.5 * (static_cast<double>(pa[i]) +
                                                static_cast<double>(pb[i])));
        out.append(ea.name, ea.shape, mean.data());
    }
    for (const auto& eb : b.entries)
        if (!a.find(eb.name)) out.append(eb.name, eb.shape, values(b, eb));

    for (const auto& e : out.entries)
        if (e.name.rfind("ema.", 0) == 0) {
            out.flags |= 1u;
            break;
        }
    return out;
}

}  // namespace mmflow
