#include "namex/tensor_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "namex/errors.hpp"

namespace namex {

namespace {

using nlohmann::json;

struct TensorRecord {
    std::string name;
    std::vector<int64_t> shape;
    uint64_t offset = 0;
    uint64_t length = 0;
};

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t s : shape) n *= s;
    return n;
}

TensorRecord parse_record(const json& j) {
    TensorRecord rec;
    rec.name = j.at("name").get<std::string>();
    for (const auto& s : j.at("shape")) {
        const int64_t dim = s.get<int64_t>();
        if (dim <= 0) throw IoError("tensor '" + rec.name + "': non-positive dimension");
        rec.shape.push_back(dim);
    }
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype != "f32") throw IoError("tensor '" + rec.name + "': unsupported dtype '" + dtype + "'");
    rec.offset = j.at("offset").get<uint64_t>();
    rec.length = j.at("length").get<uint64_t>();
    if (rec.length != uint64_t(4 * shape_numel(rec.shape)))
        throw IoError("tensor '" + rec.name + "': length does not match shape");
    return rec;
}

json record_json(const Tensor& t, uint64_t offset) {
    json j;
    j["name"] = t.name;
    j["shape"] = t.shape;
    j["dtype"] = "f32";
    j["offset"] = offset;
    j["length"] = uint64_t(4 * t.numel());
    return j;
}

Tensor load_tensor(const TensorRecord& rec, const std::vector<char>& blob) {
    if (rec.offset + rec.length > blob.size())
        throw IoError("tensor '" + rec.name + "': offset past end of weights.bin");
    Tensor t;
    t.name = rec.name;
    t.shape = rec.shape;
    t.data.resize(size_t(rec.length / 4));
    std::memcpy(t.data.data(), blob.data() + rec.offset, rec.length);
    return t;
}

void check_no_overlap(std::vector<std::pair<uint64_t, uint64_t>>& extents) {
    std::sort(extents.begin(), extents.end());
    for (size_t i = 1; i < extents.size(); ++i) {
        if (extents[i].first < extents[i - 1].first + extents[i - 1].second)
            throw IoError("manifest: overlapping tensor offsets");
    }
}

void stage_file(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.string() + ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
}

void commit_file(const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

}  // namespace

void ExpertStack::validate() const {
    for (const auto& layer : layers) {
        const std::string where = "layer " + std::to_string(layer.index);
        for (size_t a = 0; a < layer.experts.size(); ++a)
            for (size_t b = a + 1; b < layer.experts.size(); ++b)
                if (layer.experts[a].name == layer.experts[b].name)
                    throw std::runtime_error(where + ": duplicate expert name '" +
                                             layer.experts[a].name + "'");
        for (const auto& expert : layer.experts) {
            if (expert.tensors.size() != layer.base.size())
                throw std::runtime_error(where + ", expert '" + expert.name +
                                         "': shape/name mismatch with base (tensor count)");
            for (size_t t = 0; t < layer.base.size(); ++t) {
                if (expert.tensors[t].name != layer.base[t].name ||
                    expert.tensors[t].shape != layer.base[t].shape)
                    throw std::runtime_error(where + ", expert '" + expert.name +
                                             "': shape/name mismatch with base at tensor '" +
                                             layer.base[t].name + "'");
            }
        }
        if (!layer.routing.empty()) {
            if (layer.routing.size() != layer.experts.size())
                throw std::runtime_error(where + ": routing length != expert count");
            double sum = 0.0;
            for (double s : layer.routing) {
                if (s < 0.0) throw std::runtime_error(where + ": negative routing weight");
                sum += s;
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw std::runtime_error(where + ": routing weights sum to " + std::to_string(sum));
        }
        for (const auto& [ename, per_tensor] : layer.curvature) {
            const Expert* owner = nullptr;
            for (const auto& e : layer.experts)
                if (e.name == ename) owner = &e;
            if (!owner) throw std::runtime_error(where + ": curvature for unknown expert '" + ename + "'");
            for (const auto& [tname, diag] : per_tensor) {
                const Tensor* tensor = nullptr;
                for (const auto& t : owner->tensors)
                    if (t.name == tname) tensor = &t;
                if (!tensor)
                    throw std::runtime_error(where + ": curvature for unknown tensor '" + tname + "'");
                if (int64_t(diag.size()) != tensor->numel())
                    throw std::runtime_error(where + ": curvature length mismatch for '" + tname + "'");
                for (float v : diag)
                    if (!(v >= 0.0f))
                        throw std::runtime_error(where + ": negative curvature entry in '" + tname + "'");
            }
        }
        for (const auto& t : layer.base)
            if (t.numel() != int64_t(t.data.size()))
                throw std::runtime_error(where + ": tensor '" + t.name + "' data/shape mismatch");
        for (const auto& e : layer.experts)
            for (const auto& t : e.tensors)
                if (t.numel() != int64_t(t.data.size()))
                    throw std::runtime_error(where + ": tensor '" + t.name + "' data/shape mismatch");
    }
}

ExpertStack read_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const auto weights_path = dir / "weights.bin";

    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw IoError("malformed manifest: " + std::string(e.what()));
    }

    std::vector<char> blob;
    {
        std::ifstream wf(weights_path, std::ios::binary | std::ios::ate);
        if (!wf) throw IoError("cannot open " + weights_path.string());
        blob.resize(size_t(wf.tellg()));
        wf.seekg(0);
        wf.read(blob.data(), std::streamsize(blob.size()));
        if (!wf) throw IoError("short read from " + weights_path.string());
    }

    ExpertStack stack;
    try {
        if (manifest.at("version").get<int>() != 1) throw IoError("unsupported manifest version");
        std::vector<std::pair<uint64_t, uint64_t>> extents;
        for (const auto& jl : manifest.at("layers")) {
            Layer layer;
            layer.index = jl.at("index").get<int>();
            for (const auto& jt : jl.at("base")) {
                const auto rec = parse_record(jt);
                extents.emplace_back(rec.offset, rec.length);
                layer.base.push_back(load_tensor(rec, blob));
            }
            for (const auto& je : jl.at("experts")) {
                Expert e;
                e.name = je.at("name").get<std::string>();
                for (const auto& jt : je.at("tensors")) {
                    const auto rec = parse_record(jt);
                    extents.emplace_back(rec.offset, rec.length);
                    e.tensors.push_back(load_tensor(rec, blob));
                }
                layer.experts.push_back(std::move(e));
            }
            if (jl.contains("routing")) layer.routing = jl.at("routing").get<std::vector<double>>();
            if (jl.contains("curvature")) {
                for (const auto& [ename, per_tensor] : jl.at("curvature").items())
                    for (const auto& [tname, diag] : per_tensor.items())
                        layer.curvature[ename][tname] = diag.get<std::vector<float>>();
            }
            stack.layers.push_back(std::move(layer));
        }
        check_no_overlap(extents);
    } catch (const json::exception& e) {
        throw IoError("malformed manifest: " + std::string(e.what()));
    }

    try {
        stack.validate();
    } catch (const std::runtime_error& e) {
        throw IoError(std::string("invalid checkpoint: ") + e.what());
    }
    return stack;
}

void write_checkpoint(const ExpertStack& stack, const std::filesystem::path& dir) {
    stack.validate();

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::string blob;
    uint64_t offset = 0;
    const auto append = [&](const Tensor& t) {
        json rec = record_json(t, offset);
        blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
        offset += uint64_t(t.data.size() * 4);
        return rec;
    };

    json manifest;
    manifest["version"] = 1;
    manifest["layers"] = json::array();
    for (const auto& layer : stack.layers) {
        json jl;
        jl["index"] = layer.index;
        jl["base"] = json::array();
        for (const auto& t : layer.base) jl["base"].push_back(append(t));
        jl["experts"] = json::array();
        for (const auto& e : layer.experts) {
            json je;
            je["name"] = e.name;
            je["tensors"] = json::array();
            for (const auto& t : e.tensors) je["tensors"].push_back(append(t));
            jl["experts"].push_back(std::move(je));
        }
        if (!layer.routing.empty()) jl["routing"] = layer.routing;
        if (!layer.curvature.empty()) {
            json jc = json::object();
            for (const auto& [ename, per_tensor] : layer.curvature) {
                json jt = json::object();
                for (const auto& [tname, diag] : per_tensor) jt[tname] = diag;
                jc[ename] = std::move(jt);
            }
            jl["curvature"] = std::move(jc);
        }
        manifest["layers"].push_back(std::move(jl));
    }

    // stage both files fully before renaming either, so a failed write never
    // leaves half a checkpoint behind
    stage_file(dir / "manifest.json", manifest.dump(2) + "\n");
    stage_file(dir / "weights.bin", blob);
    commit_file(dir / "manifest.json");
    commit_file(dir / "weights.bin");
}

DomainMatrix read_problem_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw IoError(file.string() + ": cannot parse '" + cell + "'");
            }
            if (!std::isfinite(v)) throw IoError(file.string() + ": non-finite value '" + cell + "'");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw IoError(file.string() + ": ragged row " + std::to_string(rows.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().empty()) throw IoError(file.string() + ": empty problem");

    DomainMatrix g;
    g.d = int64_t(rows.size());
    g.n = int64_t(rows.front().size());
    g.cols.resize(size_t(g.d * g.n));
    for (int64_t k = 0; k < g.d; ++k)
        for (int64_t i = 0; i < g.n; ++i) g.cols[size_t(i * g.d + k)] = rows[size_t(k)][size_t(i)];
    return g;
}

}  // namespace namex
