#include <bit>
#include <cstring>
#include <fstream>

#include "vorvq/kernels.hpp"
#include "vorvq/quantizer.hpp"

namespace vorvq {

namespace {

const char kMagic[8] = {'V', 'O', 'R', 'V', 'Q', '1', '\0', '\0'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

void put_f64(std::vector<uint8_t>& out, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xFF));
}

void put_mat(std::vector<uint8_t>& out, const Mat& m) {
    for (double v : m.data) put_f64(out, v);
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    uint32_t u32() {
        VORVQ_CHECK(pos + 4 <= bytes.size(), "bundle: truncated file");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        VORVQ_CHECK(pos + 8 <= bytes.size(), "bundle: truncated file");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
    Mat mat(int rows, int cols) {
        Mat m(rows, cols);
        for (double& x : m.data) x = f64();
        return m;
    }
};

}  // namespace

std::vector<uint8_t> serialize_codebook_bundle(const VorvqConfig& cfg, const Projections& proj,
                                               const std::vector<Codebook>& codebooks) {
    cfg.validate();
    VORVQ_CHECK(static_cast<int>(codebooks.size()) == cfg.n_stages,
                "bundle: codebook count != N");
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, static_cast<uint32_t>(cfg.n_stages));
    put_u32(out, static_cast<uint32_t>(cfg.n_enhanced));
    put_u32(out, static_cast<uint32_t>(cfg.d_latent));
    put_u32(out, static_cast<uint32_t>(cfg.d_full));
    for (int i = 0; i < cfg.n_stages; ++i) {
        put_u32(out, static_cast<uint32_t>(cfg.d_sched[i]));
        put_u32(out, static_cast<uint32_t>(cfg.codebook_sizes[i]));
    }
    put_mat(out, proj.in_weight);
    for (double v : proj.in_bias) put_f64(out, v);
    put_mat(out, proj.out_weight);
    for (double v : proj.out_bias) put_f64(out, v);
    for (const Codebook& cb : codebooks) put_mat(out, cb.vectors);
    put_u32(out, kernels::crc32(out.data(), out.size()));
    return out;
}

CodebookBundle deserialize_codebook_bundle(const std::vector<uint8_t>& bytes) {
    VORVQ_CHECK(bytes.size() >= 8 + 16 + 4, "bundle: file too small");
    VORVQ_CHECK(std::memcmp(bytes.data(), kMagic, 8) == 0, "bundle: bad magic");
    const uint32_t stored_crc = [&] {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
        return v;
    }();
    const uint32_t actual_crc = kernels::crc32(bytes.data(), bytes.size() - 4);
    VORVQ_CHECK(stored_crc == actual_crc, "bundle: CRC32 mismatch");

    Reader r{bytes, 8};
    CodebookBundle b;
    b.cfg.n_stages = static_cast<int>(r.u32());
    b.cfg.n_enhanced = static_cast<int>(r.u32());
    b.cfg.n_noise = b.cfg.n_stages - b.cfg.n_enhanced;
    b.cfg.d_latent = static_cast<int>(r.u32());
    b.cfg.d_full = static_cast<int>(r.u32());
    for (int i = 0; i < b.cfg.n_stages; ++i) {
        b.cfg.d_sched.push_back(static_cast<int>(r.u32()));
        b.cfg.codebook_sizes.push_back(static_cast<int>(r.u32()));
    }
    b.cfg.validate();
    b.proj.in_weight = r.mat(b.cfg.d_latent, b.cfg.d_full);
    b.proj.in_bias.resize(b.cfg.d_full);
    for (double& v : b.proj.in_bias) v = r.f64();
    b.proj.out_weight = r.mat(b.cfg.d_full, b.cfg.d_latent);
    b.proj.out_bias.resize(b.cfg.d_latent);
    for (double& v : b.proj.out_bias) v = r.f64();
    for (int i = 0; i < b.cfg.n_stages; ++i) {
        Codebook cb;
        cb.stage_index = i + 1;
        cb.vectors = r.mat(b.cfg.codebook_sizes[i], b.cfg.d_sched[i]);
        cb.usage_counts.assign(cb.size(), 0);
        cb.unused_steps.assign(cb.size(), 0);
        b.codebooks.push_back(std::move(cb));
    }
    VORVQ_CHECK(r.pos == bytes.size() - 4, "bundle: trailing bytes before CRC");
    return b;
}

void save_codebook_bundle(const std::string& path, const VorvqConfig& cfg,
                          const Projections& proj, const std::vector<Codebook>& codebooks) {
    const std::vector<uint8_t> bytes = serialize_codebook_bundle(cfg, proj, codebooks);
    std::ofstream out(path, std::ios::binary);
    VORVQ_CHECK(out.good(), "bundle: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    VORVQ_CHECK(out.good(), "bundle: write failed for '" + path + "'");
}

CodebookBundle load_codebook_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    VORVQ_CHECK(in.good(), "bundle: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return deserialize_codebook_bundle(bytes);
}

}  // namespace vorvq
