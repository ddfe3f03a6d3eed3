#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mmflow/checkpoint.hpp"
#include "mmflow/error.hpp"
#include "mmflow/models.hpp"

using namespace mmflow;

namespace {

// Byte builder written against the documented layout, independent of the
// library's serializer.
struct BlobBuilder {
    std::string bytes;

    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void raw(const std::string& s) { bytes += s; }
};

std::filesystem::path scratch_dir() {
    auto p = std::filesystem::temp_directory_path() / "mmflow_ckpt_test";
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Two entries, w [2,2] and b [2], with distinctive header fields. Also
// reports where entry b's offset field sits, for corruption tests.
std::string reference_blob(size_t* b_offset_pos = nullptr) {
    BlobBuilder bb;
    bb.raw("MMFLOWCK");
    bb.u32(1);                     // version
    bb.u32(0);                     // flags
    bb.u64(0x1122334455667788ull); // config digest
    bb.u64(9);                     // step
    bb.u32(2);                     // entries

    bb.u32(1);
    bb.raw("w");
    bb.u32(2);
    bb.u32(2);
    bb.u32(2);
    bb.u64(0);
    bb.u64(16);

    bb.u32(1);
    bb.raw("b");
    bb.u32(1);
    bb.u32(2);
    if (b_offset_pos) *b_offset_pos = bb.bytes.size();
    bb.u64(16);
    bb.u64(8);

    bb.u64(24);
    for (float v : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) bb.f32(v);
    return bb.bytes;
}

template <typename Fn>
std::string error_text(Fn&& fn) {
    try {
        fn();
    } catch (const UsageError& e) {
        return e.what();
    }
    return "";
}

std::vector<ModalitySpec> two_specs() { return {{"a", 2, 1}, {"b", 3, 1}}; }

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("append keeps offsets contiguous and names unique") {
    Checkpoint ckpt;
    const float w[4] = {1, 2, 3, 4};
    const float b[2] = {5, 6};
    ckpt.append("w", {2, 2}, w);
    ckpt.append("b", {2}, b);

    REQUIRE(ckpt.entries.size() == 2);
    CHECK(ckpt.entries[0].offset == 0);
    CHECK(ckpt.entries[0].nbytes == 16);
    CHECK(ckpt.entries[1].offset == 16);
    CHECK(ckpt.entries[1].nbytes == 8);
    CHECK(ckpt.payload.size() == 6);
    CHECK(ckpt.find("w") == &ckpt.entries[0]);
    CHECK(ckpt.find("nope") == nullptr);
    CHECK_THROWS_AS(ckpt.append("w", {1}, b), UsageError);
}

TEST_CASE("saved bytes match the documented layout") {
    Checkpoint ckpt;
    ckpt.config_digest = 0x1122334455667788ull;
    ckpt.step = 9;
    const float w[4] = {1, 2, 3, 4};
    const float b[2] = {5, 6};
    ckpt.append("w", {2, 2}, w);
    ckpt.append("b", {2}, b);

    auto path = (scratch_dir() / "layout.ckpt").string();
    save_checkpoint(path, ckpt);
    CHECK(slurp(path) == reference_blob());
}

TEST_CASE("load then save reproduces the bytes") {
    auto dir = scratch_dir();
    auto p1 = (dir / "rt1.ckpt").string();
    auto p2 = (dir / "rt2.ckpt").string();
    spit(p1, reference_blob());

    Checkpoint ckpt = load_checkpoint(p1);
    CHECK(ckpt.version == 1);
    CHECK(ckpt.flags == 0);
    CHECK(!ckpt.has_ema());
    CHECK(ckpt.config_digest == 0x1122334455667788ull);
    CHECK(ckpt.step == 9);
    REQUIRE(ckpt.entries.size() == 2);
    CHECK(ckpt.entries[0].name == "w");
    CHECK(ckpt.entries[0].shape == std::vector<int>{2, 2});
    CHECK(ckpt.entries[1].name == "b");
    CHECK(ckpt.payload == std::vector<float>{1, 2, 3, 4, 5, 6});

    save_checkpoint(p2, ckpt);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("load rejects corrupted files") {
    auto dir = scratch_dir();
    auto path = (dir / "bad.ckpt").string();

    size_t b_offset_pos = 0;
    const std::string good = reference_blob(&b_offset_pos);

    std::string wrong_magic = good;
    wrong_magic[0] = 'X';
    spit(path, wrong_magic);
    CHECK(error_text([&] { load_checkpoint(path); }).find("not a checkpoint") !=
          std::string::npos);

    std::string wrong_version = good;
    wrong_version[8] = 2;
    spit(path, wrong_version);
    CHECK(error_text([&] { load_checkpoint(path); }).find("version") != std::string::npos);

    spit(path, good.substr(0, good.size() - 4));
    CHECK(error_text([&] { load_checkpoint(path); }).find("truncated") != std::string::npos);

    spit(path, good + "x");
    CHECK(error_text([&] { load_checkpoint(path); }).find("trailing") != std::string::npos);

    std::string wrong_offset = good;
    wrong_offset[b_offset_pos] = 17;
    spit(path, wrong_offset);
    CHECK(error_text([&] { load_checkpoint(path); }).find("inconsistent") != std::string::npos);

    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), UsageError);

    // rank 4 directory entry
    BlobBuilder bb;
    bb.raw("MMFLOWCK");
    bb.u32(1);
    bb.u32(0);
    bb.u64(0);
    bb.u64(0);
    bb.u32(1);
    bb.u32(1);
    bb.raw("w");
    bb.u32(4);
    for (int i = 0; i < 4; ++i) bb.u32(1);
    bb.u64(0);
    bb.u64(4);
    bb.u64(4);
    bb.f32(1.0f);
    spit(path, bb.bytes);
    CHECK(error_text([&] { load_checkpoint(path); }).find("rank") != std::string::npos);
}

TEST_CASE("model round-trip through a checkpoint file") {
    auto dir = scratch_dir();
    MlpConfig mc;
    mc.width = 16;
    mc.depth = 2;
    mc.time_dim = 8;
    MlpVelocityNet src(two_specs(), mc, 41);
    MlpVelocityNet dst(two_specs(), mc, 99);

    // shifted copies standing in for an EMA shadow
    std::vector<Tensor> ema;
    for (const auto& [name, p] : src.named_parameters()) {
        Tensor e = p.detached_copy();
        for (auto& v : e.data()) v += 0.25f;
        ema.push_back(e);
    }

    Checkpoint ckpt = make_checkpoint(src, ema, 0xabcd, 123);
    CHECK(ckpt.has_ema());
    CHECK(ckpt.step == 123);
    CHECK(ckpt.entries.size() == 2 * src.named_parameters().size());

    auto p1 = (dir / "model1.ckpt").string();
    auto p2 = (dir / "model2.ckpt").string();
    save_checkpoint(p1, ckpt);
    Checkpoint back = load_checkpoint(p1);
    save_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));

    apply_checkpoint(back, dst);
    for (size_t i = 0; i < src.named_parameters().size(); ++i)
        CHECK(dst.named_parameters()[i].second.data() == src.named_parameters()[i].second.data());

    apply_checkpoint(back, dst, "ema.");
    for (size_t i = 0; i < ema.size(); ++i)
        CHECK(dst.named_parameters()[i].second.data() == ema[i].data());

    // a raw-only checkpoint has no "ema." names to apply
    Checkpoint raw = make_checkpoint(src, {}, 0, 1);
    CHECK(!raw.has_ema());
    auto msg = error_text([&] { apply_checkpoint(raw, dst, "ema."); });
    CHECK(msg.find("ema.") != std::string::npos);

    // shape disagreement names both sides
    MlpConfig other = mc;
    other.width = 24;
    MlpVelocityNet odd(two_specs(), other, 7);
    CHECK_THROWS_AS(apply_checkpoint(raw, odd), UsageError);
}

TEST_CASE("merge averages shared entries and unions the rest") {
    Checkpoint a, b;
    a.config_digest = 77;
    a.step = 5;
    b.config_digest = 77;
    b.step = 11;
    const float wa[4] = {1, 2, 3, 4};
    const float wb[4] = {3, 2, 1, 0};
    const float ha[3] = {9, 9, 9};
    const float hb[2] = {7, 7};
    a.append("enc.shared.w", {2, 2}, wa);
    a.append("head.img.w", {3}, ha);
    b.append("enc.shared.w", {2, 2}, wb);
    b.append("head.txt.w", {2}, hb);

    Checkpoint m = merge_checkpoints(a, b, "shared");
    REQUIRE(m.entries.size() == 3);
    CHECK(m.entries[0].name == "enc.shared.w");
    CHECK(m.entries[1].name == "head.img.w");
    CHECK(m.entries[2].name == "head.txt.w");
    CHECK(m.step == 11);
    CHECK(m.config_digest == 77);
    CHECK(std::vector<float>(m.payload.begin(), m.payload.begin() + 4) ==
          std::vector<float>{2, 2, 2, 2});
    CHECK(std::vector<float>(m.payload.begin() + 4, m.payload.end()) ==
          std::vector<float>{9, 9, 9, 7, 7});
    CHECK(!m.has_ema());

    b.config_digest = 78;
    CHECK(merge_checkpoints(a, b, "shared").config_digest == 0);

    // self-merge leaves the payload untouched
    Checkpoint self = merge_checkpoints(a, a, "shared");
    CHECK(self.payload == a.payload);
    CHECK(self.entries.size() == a.entries.size());

    auto msg = error_text([&] { merge_checkpoints(a, b, "img"); });
    CHECK(msg.find("img") != std::string::npos);

    Checkpoint c = b;
    c.entries[0].shape = {4, 1};
    msg = error_text([&] { merge_checkpoints(a, c, "shared"); });
    CHECK(msg.find("enc.shared.w") != std::string::npos);

    // an ema entry on either side marks the merged flags
    Checkpoint d = a;
    const float ev[3] = {1, 1, 1};
    d.append("ema.head.img.w", {3}, ev);
    d.flags |= 1u;
    CHECK(merge_checkpoints(d, b, "shared").has_ema());
}

TEST_SUITE_END();
