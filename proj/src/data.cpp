#include "dsdg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dsdg/error.hpp"
#include "dsdg/rng.hpp"

namespace dsdg {

namespace fs = std::filesystem;

std::string to_string(Label label) { return label == Label::live ? "live" : "spoof"; }

Label parse_label(const std::string& text) {
    if (text == "live") return Label::live;
    if (text == "spoof") return Label::spoof;
    throw ParseError("unknown label '" + text + "'");
}

Pairing parse_pairing(const std::string& text) {
    if (text == "by_identity") return Pairing::by_identity;
    if (text == "none") return Pairing::none;
    throw ConfigError("unknown pairing '" + text + "' (expected by_identity or none)");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

fs::path manifest_base(const fs::path& manifest) { return fs::absolute(manifest).parent_path(); }

// Reads the next header token of a netpbm file, skipping comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok += c;
    }
    return tok;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<SampleRecord> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ResolutionError("cannot open manifest " + path.string());
    const fs::path base = manifest_base(path);
    std::vector<SampleRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 5)
            throw ParseError("expected 5 tab-separated fields, found " + std::to_string(fields.size()), line_no);
        for (const auto& f : fields)
            if (f.empty()) throw ParseError("empty field", line_no);

        SampleRecord r;
        try {
            r.label = parse_label(fields[1]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no);
        }
        r.image_path = (base / fields[0]).lexically_normal();
        r.identity_id = fields[2];
        if (r.label == Label::live) {
            if (fields[3] != "-")
                throw ParseError("live record carries spoof type '" + fields[3] + "'", line_no);
        } else {
            r.spoof_type = fields[3] == "-" ? std::string(kUnknownSpoofType) : fields[3];
        }
        if (fields[4] != "-") r.depth_path = (base / fields[4]).lexically_normal();

        if (!fs::exists(r.image_path))
            throw ResolutionError("line " + std::to_string(line_no) + ": image not found: " + r.image_path.string());
        if (r.depth_path && !fs::exists(*r.depth_path))
            throw ResolutionError("line " + std::to_string(line_no) + ": depth file not found: " +
                                  r.depth_path->string());
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path base = manifest_base(path);
    auto rel = [&](const fs::path& p) {
        fs::path r = fs::absolute(p).lexically_normal().lexically_relative(base);
        return (r.empty() ? p : r).generic_string();
    };
    std::ofstream out(path);
    if (!out) throw ResolutionError("cannot write manifest " + path.string());
    for (const auto& r : records) {
        if (r.label == Label::live && r.spoof_type) throw DomainError("live record with spoof type");
        out << rel(r.image_path) << '\t' << to_string(r.label) << '\t' << r.identity_id << '\t'
            << (r.spoof_type ? *r.spoof_type : "-") << '\t' << (r.depth_path ? rel(*r.depth_path) : "-") << '\n';
    }
}

Image read_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ResolutionError("cannot open image " + path.string());
    const std::string magic = pnm_token(in);
    if (magic != "P6" && magic != "P5") throw ParseError(path.string() + ": unsupported image format " + magic);
    const int w = std::stoi(pnm_token(in));
    const int h = std::stoi(pnm_token(in));
    const int maxval = std::stoi(pnm_token(in));
    if (maxval != 255) throw ParseError(path.string() + ": only 8-bit images are supported");
    const int channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw ParseError(path.string() + ": truncated pixel data");
    Image img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = channels == 3 ? c : 0;
                img[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    raw[(static_cast<std::size_t>(y) * w + x) * channels + src] / 255.0;
            }
    return img;
}

void write_ppm(const fs::path& path, const Image& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm expects 3xHxW, got " + to_string(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ResolutionError("cannot write " + path.string());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image[(static_cast<std::size_t>(c) * h + y) * w + x]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const fs::path& path, const Tensor& grid) {
    if (grid.rank() != 2) throw ShapeError("write_pgm expects a 2-D grid");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ResolutionError("cannot write " + path.string());
    out << "P5\n" << grid.dim(1) << ' ' << grid.dim(0) << "\n255\n";
    std::vector<std::uint8_t> raw(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) raw[i] = to_byte(grid[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

DepthMap load_depth(const fs::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".pgm") {
        Image img = read_image(path);
        const int h = img.dim(1), w = img.dim(2);
        Tensor grid({h, w});
        std::copy_n(img.data(), grid.size(), grid.data());
        return {grid};
    }
    std::ifstream in(path);
    if (!in) throw ResolutionError("cannot open depth file " + path.string());
    std::vector<double> values;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": not a number: '" + tok + "'");
        }
    }
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(values.size()))));
    if (side == 0 || static_cast<std::size_t>(side) * side != values.size())
        throw ParseError(path.string() + ": " + std::to_string(values.size()) + " values do not form a square grid");
    return {Tensor({side, side}, std::move(values))};
}

void write_depth_text(const fs::path& path, const DepthMap& depth) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ResolutionError("cannot write " + path.string());
    out.precision(17);
    for (int r = 0; r < depth.rows(); ++r) {
        for (int c = 0; c < depth.cols(); ++c) out << (c ? " " : "") << depth.grid[static_cast<std::size_t>(r) * depth.cols() + c];
        out << '\n';
    }
}

void validate_ground_truth(const DepthMap& depth, const std::string& what) {
    if (depth.grid.rank() != 2 || depth.rows() != kDepthSize || depth.cols() != kDepthSize)
        throw ShapeError(what + ": depth grid must be 32x32, got " + to_string(depth.grid.shape()));
    for (double v : depth.grid.values())
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DomainError(what + ": depth values must lie in [0, 1]");
}

DepthMap resample_depth(const DepthMap& depth, int size) {
    const int rows = depth.rows(), cols = depth.cols();
    if (rows == size && cols == size) return depth;
    Tensor out({size, size});
    if (rows % size == 0 && cols % size == 0) {
        const int fy = rows / size, fx = cols / size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double acc = 0.0;
                for (int i = 0; i < fy; ++i)
                    for (int j = 0; j < fx; ++j) acc += depth.grid[static_cast<std::size_t>(y * fy + i) * cols + x * fx + j];
                out[static_cast<std::size_t>(y) * size + x] = acc / (fy * fx);
            }
    } else {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                out[static_cast<std::size_t>(y) * size + x] =
                    depth.grid[static_cast<std::size_t>(y * rows / size) * cols + x * cols / size];
    }
    return {out};
}

std::vector<PairIndex> pair_indices(const std::vector<SampleRecord>& records, Pairing pairing) {
    std::map<std::string, std::size_t> first_live;
    std::vector<std::size_t> lives;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label != Label::live) continue;
        first_live.emplace(records[i].identity_id, i);
        lives.push_back(i);
    }
    std::vector<PairIndex> out;
    std::size_t rr = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label != Label::spoof) continue;
        if (pairing == Pairing::by_identity) {
            auto it = first_live.find(records[i].identity_id);
            if (it == first_live.end())
                throw PairingError("spoof record '" + records[i].image_path.string() + "' has no live record for identity '" +
                                   records[i].identity_id + "'");
            out.push_back({i, it->second});
        } else {
            if (lives.empty()) throw PairingError("corpus has no live records");
            out.push_back({i, lives[rr++ % lives.size()]});
        }
    }
    return out;
}

namespace {

DepthMap record_depth(const SampleRecord& r) {
    if (r.label == Label::spoof) return DepthMap::zeros();
    if (!r.depth_path) throw ResolutionError("live record '" + r.image_path.string() + "' lacks a depth map");
    DepthMap d = load_depth(*r.depth_path);
    validate_ground_truth(d, r.depth_path->string());
    return d;
}

}  // namespace

std::vector<PairedSample> build_pairs(const std::vector<SampleRecord>& records, Pairing pairing) {
    const auto idx = pair_indices(records, pairing);
    std::map<std::size_t, Image> images;
    auto image_of = [&](std::size_t i) -> const Image& {
        auto it = images.find(i);
        if (it == images.end()) it = images.emplace(i, read_image(records[i].image_path)).first;
        return it->second;
    };
    std::vector<PairedSample> out;
    out.reserve(idx.size());
    for (const auto& [s, l] : idx) {
        PairedSample p;
        p.live = image_of(l);
        p.spoof = image_of(s);
        if (p.live.shape() != p.spoof.shape())
            throw ShapeError("paired images differ in size: " + records[l].image_path.string() + " vs " +
                             records[s].image_path.string());
        p.identity_id = records[s].identity_id;
        p.spoof_type = records[s].spoof_type.value_or(kUnknownSpoofType);
        p.live_depth = record_depth(records[l]);
        p.spoof_depth = DepthMap::zeros();
        p.paired = pairing == Pairing::by_identity;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<LabeledImage> load_labeled(const std::vector<SampleRecord>& records) {
    std::vector<LabeledImage> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        LabeledImage li;
        li.image = read_image(r.image_path);
        li.depth = record_depth(r);
        li.label = r.label;
        li.identity_id = r.identity_id;
        li.spoof_type = r.spoof_type.value_or("");
        li.source = r.image_path.string();
        out.push_back(std::move(li));
    }
    return out;
}

std::vector<LabeledImage> unpair(const std::vector<PairedSample>& pairs) {
    std::vector<LabeledImage> out;
    std::vector<const Image*> seen_live;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const bool dup = std::any_of(seen_live.begin(), seen_live.end(), [&](const Image* im) { return *im == p.live; });
        if (!dup) {
            seen_live.push_back(&p.live);
            out.push_back({p.live, p.live_depth, Label::live, p.identity_id, "", "pair" + std::to_string(i) + "/live"});
        }
        out.push_back({p.spoof, p.spoof_depth, Label::spoof, p.identity_id, p.spoof_type,
                       "pair" + std::to_string(i) + "/spoof"});
    }
    return out;
}

DepthMap toy_live_depth(int size) {
    Tensor g({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (2.0 * x + 1.0) / size - 1.0;
            const double v = (2.0 * y + 1.0) / size - 1.0;
            g[static_cast<std::size_t>(y) * size + x] = std::clamp(1.0 - 0.5 * (u * u + v * v), 0.0, 1.0);
        }
    return {g};
}

DepthMap mean_live_depth(const std::vector<PairedSample>& pairs) {
    if (pairs.empty()) return toy_live_depth();
    Tensor acc(pairs.front().live_depth.grid.shape(), 0.0);
    for (const auto& p : pairs)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.live_depth.grid[i];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= static_cast<double>(pairs.size());
    return {acc};
}

namespace {

struct FaceParams {
    double skin[3];
    double background[3];
    double cx, cy, rx, ry;
    double eye_dx, eye_y, eye_r, eye_dark;
    double mouth_y, mouth_w;
};

FaceParams draw_face(Rng& rng) {
    FaceParams f{};
    for (int c = 0; c < 3; ++c) {
        f.skin[c] = 0.45 + 0.4 * rng.uniform();
        f.background[c] = 0.1 + 0.3 * rng.uniform();
    }
    f.cx = 0.5 + 0.06 * (rng.uniform() - 0.5);
    f.cy = 0.5 + 0.06 * (rng.uniform() - 0.5);
    f.rx = 0.28 + 0.08 * rng.uniform();
    f.ry = 0.36 + 0.06 * rng.uniform();
    f.eye_dx = 0.10 + 0.06 * rng.uniform();
    f.eye_y = -0.10 - 0.06 * rng.uniform();
    f.eye_r = 0.035 + 0.025 * rng.uniform();
    f.eye_dark = 0.15 + 0.25 * rng.uniform();
    f.mouth_y = 0.14 + 0.06 * rng.uniform();
    f.mouth_w = 0.08 + 0.08 * rng.uniform();
    return f;
}

Image render_face(const FaceParams& f, int size) {
    Image img({3, size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size, v = (y + 0.5) / size;
            const double dx = (u - f.cx) / f.rx, dy = (v - f.cy) / f.ry;
            const double r2 = dx * dx + dy * dy;
            double px[3];
            if (r2 <= 1.0) {
                const double shade = 0.75 + 0.25 * std::sqrt(1.0 - r2);
                for (int c = 0; c < 3; ++c) px[c] = f.skin[c] * shade;
                const double ex = u - f.cx, ey = v - f.cy;
                for (int side : {-1, 1}) {
                    const double ddx = ex - side * f.eye_dx, ddy = ey - f.eye_y;
                    if (ddx * ddx + ddy * ddy <= f.eye_r * f.eye_r)
                        for (double& p : px) p = f.eye_dark;
                }
                if (std::abs(ey - f.mouth_y) < 0.02 && std::abs(ex) < f.mouth_w)
                    for (int c = 0; c < 3; ++c) px[c] = 0.5 * f.skin[c];
            } else {
                const double grad = 0.85 + 0.3 * v;
                for (int c = 0; c < 3; ++c) px[c] = f.background[c] * grad;
            }
            for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(c) * size + y) * size + x] = std::clamp(px[c], 0.0, 1.0);
        }
    return img;
}

// Spoof perturbation for type index t. Three texture families, each
// parameterized by t / 3 so every type stays distinct.
Image apply_spoof(const Image& live, int type_index, double phase) {
    const int size = live.dim(1);
    const int family = type_index % 3;
    const int level = type_index / 3;
    const double scale = size / 64.0;
    const double amp = 0.14;
    Image out = live;
    double mean[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < size * size; ++i) mean[c] += live[static_cast<std::size_t>(c) * size * size + i];
        mean[c] /= size * size;
    }
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const std::size_t i = (static_cast<std::size_t>(c) * size + y) * size + x;
                double v = live[i];
                switch (family) {
                    case 0: {  // moire-like horizontal banding
                        const double period = (3.0 + level) * scale;
                        v += amp * std::sin(2.0 * std::numbers::pi * y / period + phase);
                        break;
                    }
                    case 1: {  // print dot lattice
                        const int cell = std::max(1, static_cast<int>(std::lround((2 + level) * scale)));
                        v += ((x / cell + y / cell) % 2 == 0 ? amp : -amp);
                        break;
                    }
                    default: {  // washed-out contrast with diagonal streaks
                        const double period = (4.0 + level) * scale;
                        v = mean[c] + 0.6 * (v - mean[c]) + amp * std::sin(2.0 * std::numbers::pi * (x + y) / period + phase);
                        break;
                    }
                }
                out[i] = std::clamp(v, 0.0, 1.0);
            }
    return out;
}

}  // namespace

std::vector<PairedSample> synth_toy_dataset(int n_identities, const std::vector<std::string>& spoof_types, int image_size,
                                            std::uint64_t seed) {
    if (n_identities < 1) throw ConfigError("n_identities must be >= 1");
    if (spoof_types.empty()) throw ConfigError("at least one spoof type is required");
    if (image_size < 32 || image_size % 32 != 0) throw ConfigError("image_size must be >= 32 and divisible by 32");
    Rng rng(seed);
    const DepthMap live_depth = toy_live_depth();
    std::vector<PairedSample> out;
    out.reserve(static_cast<std::size_t>(n_identities) * spoof_types.size());
    for (int id = 0; id < n_identities; ++id) {
        const FaceParams face = draw_face(rng);
        const Image live = render_face(face, image_size);
        char name[32];
        std::snprintf(name, sizeof name, "toy-%04d", id);
        for (std::size_t t = 0; t < spoof_types.size(); ++t) {
            PairedSample p;
            p.live = live;
            p.spoof = apply_spoof(live, static_cast<int>(t), 2.0 * std::numbers::pi * rng.uniform());
            p.identity_id = name;
            p.spoof_type = spoof_types[t];
            p.live_depth = live_depth;
            p.spoof_depth = DepthMap::zeros();
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<SampleRecord> export_pairs(const fs::path& dir, const std::vector<PairedSample>& pairs) {
    fs::create_directories(dir);
    std::vector<SampleRecord> records;
    std::map<std::string, std::size_t> live_written;  // identity -> pair index
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06zu", i);
        auto it = live_written.find(p.identity_id);
        if (it == live_written.end() || !p.paired || !(pairs[it->second].live == p.live)) {
            SampleRecord live;
            live.image_path = fs::absolute(dir / "live" / (std::string(stem) + ".ppm"));
            live.label = Label::live;
            live.identity_id = p.identity_id;
            live.depth_path = fs::absolute(dir / "depth" / (std::string(stem) + ".txt"));
            write_ppm(live.image_path, p.live);
            write_depth_text(*live.depth_path, p.live_depth);
            live_written[p.identity_id] = i;
            records.push_back(std::move(live));
        }
        SampleRecord spoof;
        spoof.image_path = fs::absolute(dir / "spoof" / (std::string(stem) + ".ppm"));
        spoof.label = Label::spoof;
        spoof.identity_id = p.identity_id;
        spoof.spoof_type = p.spoof_type.empty() ? std::string(kUnknownSpoofType) : p.spoof_type;
        write_ppm(spoof.image_path, p.spoof);
        records.push_back(std::move(spoof));
    }
    write_manifest(dir / "manifest.tsv", records);
    return records;
}

Image blur_region(const Image& image, double fraction, int radius) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int rh = static_cast<int>(std::lround(h * fraction)), rw = static_cast<int>(std::lround(w * fraction));
    const int y0 = (h - rh) / 2, x0 = (w - rw) / 2;
    Image out = image;
    for (int ch = 0; ch < c; ++ch)
        for (int y = y0; y < y0 + rh; ++y)
            for (int x = x0; x < x0 + rw; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
                        acc += image[(static_cast<std::size_t>(ch) * h + yy) * w + xx];
                        ++cnt;
                    }
                out[(static_cast<std::size_t>(ch) * h + y) * w + x] = acc / cnt;
            }
    return out;
}

}  // namespace dsdg
