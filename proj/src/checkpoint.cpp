#include "slic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "slic/config.hpp"

namespace slic {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'L', 'I', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Fnv {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void add(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    }
    std::string hex() const {
        std::ostringstream os;
        os << std::hex;
        os.width(16);
        os.fill('0');
        os << h;
        return os.str();
    }
};

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
    Fnv f;
    f.add(bytes.data(), bytes.size());
    return f.hex();
}

std::string checkpoint_id(const Seq2SeqModel& model) {
    Fnv f;
    for (const auto& [name, t] : model.params()) {
        f.add(name.data(), name.size());
        for (auto d : t.shape()) {
            const std::uint64_t d64 = d;
            f.add(&d64, sizeof d64);
        }
        f.add(t.data().data(), t.numel() * sizeof(double));
    }
    return f.hex();
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
    json header;
    header["format"] = "slic-checkpoint";
    header["config"] = to_json(ckpt.model.config());
    header["step"] = ckpt.step;
    header["val_perplexity"] = ckpt.val_perplexity;
    header["val_rouge"] = ckpt.val_rouge ? json{{"r1", ckpt.val_rouge->rouge1},
                                                {"r2", ckpt.val_rouge->rouge2},
                                                {"rl", ckpt.val_rouge->rougeL}}
                                         : json(nullptr);
    header["checkpoint_id"] = checkpoint_id(ckpt.model);
    header["adam_step"] = ckpt.optimizer ? json(ckpt.optimizer->step) : json(nullptr);

    std::vector<std::pair<std::string, std::span<const double>>> blobs;
    json dir = json::array();
    for (const auto& [name, t] : ckpt.model.params()) {
        dir.push_back({{"name", name}, {"shape", t.shape()}, {"section", "param"}});
        blobs.emplace_back(name, t.data());
    }
    if (ckpt.optimizer) {
        for (const auto* section : {"adam_m", "adam_v"}) {
            const auto& moments = std::string(section) == "adam_m" ? ckpt.optimizer->first : ckpt.optimizer->second;
            for (const auto& [name, values] : moments) {
                dir.push_back({{"name", name}, {"shape", {values.size()}}, {"section", section}});
                blobs.emplace_back(name, values);
            }
        }
    }
    header["tensors"] = dir;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, values] : blobs)
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error(path.string() + " is not a checkpoint file");
    if (const auto v = read_pod<std::uint32_t>(in); v != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
    const auto header_len = read_pod<std::uint64_t>(in);
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    const json header = json::parse(text);

    const ModelConfig config = model_config_from_json(header.at("config"));
    ParamMap params;
    AdamState adam;
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const auto section = entry.at("section").get<std::string>();
        std::vector<double> values(numel_of(shape));
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
        if (section == "param") {
            params.emplace(name, Tensor::from(shape, std::move(values), true));
        } else if (section == "adam_m") {
            adam.first.emplace(name, std::move(values));
        } else if (section == "adam_v") {
            adam.second.emplace(name, std::move(values));
        } else {
            throw std::runtime_error("checkpoint: unknown section " + section);
        }
    }

    ModelCheckpoint ckpt;
    ckpt.model = Seq2SeqModel(config, std::move(params));
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.val_perplexity = header.at("val_perplexity").get<double>();
    if (const auto& r = header.at("val_rouge"); !r.is_null())
        ckpt.val_rouge = MetricTriple{r.at("r1").get<double>(), r.at("r2").get<double>(), r.at("rl").get<double>()};
    if (const auto& a = header.at("adam_step"); !a.is_null()) {
        adam.step = a.get<std::uint64_t>();
        ckpt.optimizer = std::move(adam);
    }
    if (header.at("checkpoint_id").get<std::string>() != checkpoint_id(ckpt.model))
        throw std::runtime_error("checkpoint: parameter hash does not match header in " + path.string());
    return ckpt;
}

}  // namespace slic
