#include "cellgraph/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"

namespace cellgraph {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::uint32_t> LabelMask::cell_ids() const {
    std::vector<std::uint32_t> ids;
    std::vector<std::uint32_t> sorted(labels);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] == 0) continue;
        if (ids.empty() || ids.back() != sorted[i]) ids.push_back(sorted[i]);
    }
    return ids;
}

std::string to_string(Diagnosis d) { return d == Diagnosis::melanoma ? "melanoma" : "healthy"; }

Diagnosis diagnosis_from_string(const std::string& s) {
    if (s == "melanoma") return Diagnosis::melanoma;
    if (s == "healthy") return Diagnosis::healthy;
    throw Error("unknown diagnosis '" + s + "' (expected melanoma or healthy)");
}

void CellTable::check() const {
    std::set<std::pair<std::string, std::uint32_t>> seen;
    for (const auto& row : rows) {
        if (row.features.size() != feature_names.size()) {
            throw Error("cell " + std::to_string(row.cell_id) + " of sample " + row.sample_id + " has " +
                        std::to_string(row.features.size()) + " features, expected " +
                        std::to_string(feature_names.size()));
        }
        if (!seen.emplace(row.sample_id, row.cell_id).second) {
            throw Error("duplicate cell " + std::to_string(row.cell_id) + " in sample " + row.sample_id);
        }
    }
}

void CellTable::sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const CellRow& a, const CellRow& b) {
        if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
        return a.cell_id < b.cell_id;
    });
}

int label_of(const std::vector<CellLabel>& labels, std::uint32_t cell_id) {
    auto it = std::find_if(labels.begin(), labels.end(), [&](const CellLabel& l) { return l.cell_id == cell_id; });
    return it == labels.end() ? kUnlabeled : it->class_label;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw Error(where + ": expected a JSON object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw Error(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw Error(where + ": missing key '" + std::string(key) + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(where + ": bad value for '" + std::string(key) + "': " + e.what());
    }
}

}  // namespace

DatasetManifest parse_manifest(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("manifest is not valid JSON: ") + e.what());
    }
    reject_unknown_keys(doc, {"pixel_spacing_um", "samples"}, "manifest");
    DatasetManifest m;
    m.pixel_spacing_um = required<double>(doc, "pixel_spacing_um", "manifest");
    if (!doc.contains("samples") || !doc["samples"].is_array()) throw Error("manifest: 'samples' must be an array");
    for (std::size_t i = 0; i < doc["samples"].size(); ++i) {
        const json& s = doc["samples"][i];
        const std::string where = "manifest.samples[" + std::to_string(i) + "]";
        reject_unknown_keys(s, {"sample_id", "channels", "mask", "labels", "diagnosis"}, where);
        ManifestSample ms;
        ms.sample_id = required<std::string>(s, "sample_id", where);
        ms.mask = required<std::string>(s, "mask", where);
        ms.labels = required<std::string>(s, "labels", where);
        ms.diagnosis = diagnosis_from_string(required<std::string>(s, "diagnosis", where));
        if (!s.contains("channels") || !s["channels"].is_array()) throw Error(where + ": 'channels' must be an array");
        for (std::size_t c = 0; c < s["channels"].size(); ++c) {
            const json& ch = s["channels"][c];
            const std::string cw = where + ".channels[" + std::to_string(c) + "]";
            reject_unknown_keys(ch, {"antigen", "path"}, cw);
            ms.channels.push_back({required<std::string>(ch, "antigen", cw), required<std::string>(ch, "path", cw)});
        }
        m.samples.push_back(std::move(ms));
    }
    if (m.samples.empty()) throw Error("manifest: at least one sample is required");
    return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
    json doc;
    doc["pixel_spacing_um"] = m.pixel_spacing_um;
    doc["samples"] = json::array();
    for (const auto& s : m.samples) {
        json js;
        js["sample_id"] = s.sample_id;
        js["diagnosis"] = to_string(s.diagnosis);
        js["mask"] = s.mask;
        js["labels"] = s.labels;
        js["channels"] = json::array();
        for (const auto& c : s.channels) js["channels"].push_back({{"antigen", c.antigen}, {"path", c.path}});
        doc["samples"].push_back(std::move(js));
    }
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// PGM

namespace {

class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : b_(bytes) {}

    void skip_space_and_comments() {
        for (;;) {
            while (pos_ < b_.size() && std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
            if (pos_ < b_.size() && b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                return;
            }
        }
    }

    std::uint64_t number() {
        skip_space_and_comments();
        if (pos_ >= b_.size() || !std::isdigit(static_cast<unsigned char>(b_[pos_]))) throw Error("malformed PGM header");
        std::uint64_t v = 0;
        while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
            v = v * 10 + static_cast<std::uint64_t>(b_[pos_] - '0');
            if (v > 0xFFFFFFFFULL) throw Error("malformed PGM header: value too large");
            ++pos_;
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace

ChannelImage read_pgm(const fs::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw Error("malformed PGM header: missing P5 magic");
    HeaderReader hr(bytes);
    hr.advance(2);
    const auto w = hr.number();
    const auto h = hr.number();
    const auto maxval = hr.number();
    if (w == 0 || h == 0) throw Error("malformed PGM header: zero dimension");
    if (maxval == 0 || maxval > 65535) throw Error("malformed PGM header: maxval out of range");
    if (hr.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[hr.pos()])))
        throw Error("malformed PGM header: missing separator before raster");
    hr.advance(1);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    if (bytes.size() - hr.pos() != n * bpp) throw Error("PGM raster size does not match header");
    ChannelImage img(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hr.pos());
    for (std::size_t i = 0; i < n; ++i) {
        img.values[i] = bpp == 1 ? p[i] : static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
    }
    return img;
}

std::string encode_pgm(const ChannelImage& image) {
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
    const std::size_t header = out.size();
    out.resize(header + image.values.size() * 2);
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        out[header + 2 * i] = static_cast<char>(image.values[i] >> 8);
        out[header + 2 * i + 1] = static_cast<char>(image.values[i] & 0xFF);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mask

LabelMask read_mask(const fs::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 8 || bytes.compare(0, 4, "CGMK") != 0) throw Error("malformed mask header: missing CGMK magic");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t w = p[4] | (p[5] << 8);
    const std::uint32_t h = p[6] | (p[7] << 8);
    if (w == 0 || h == 0) throw Error("malformed mask header: zero dimension");
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() != 8 + 4 * n) throw Error("mask payload size does not match header");
    LabelMask mask(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* q = p + 8 + 4 * i;
        mask.labels[i] = std::uint32_t(q[0]) | (std::uint32_t(q[1]) << 8) | (std::uint32_t(q[2]) << 16) |
                         (std::uint32_t(q[3]) << 24);
    }
    return mask;
}

std::string encode_mask(const LabelMask& mask) {
    if (mask.width > 0xFFFF || mask.height > 0xFFFF) throw Error("mask dimensions exceed the 16-bit header fields");
    std::string out(8 + 4 * mask.labels.size(), '\0');
    out[0] = 'C';
    out[1] = 'G';
    out[2] = 'M';
    out[3] = 'K';
    out[4] = static_cast<char>(mask.width & 0xFF);
    out[5] = static_cast<char>(mask.width >> 8);
    out[6] = static_cast<char>(mask.height & 0xFF);
    out[7] = static_cast<char>(mask.height >> 8);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        const std::uint32_t v = mask.labels[i];
        for (int b = 0; b < 4; ++b) out[8 + 4 * i + b] = static_cast<char>((v >> (8 * b)) & 0xFF);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Labels CSV

std::vector<CellLabel> read_labels_csv(const fs::path& path) {
    const auto lines = io::split_lines(io::read_file(path));
    if (lines.empty() || lines[0] != "cell_id,class_label") throw Error("malformed labels header (expected cell_id,class_label)");
    std::vector<CellLabel> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split_csv_line(lines[i]);
        if (f.size() != 2) throw Error("labels line " + std::to_string(i + 1) + ": expected 2 fields");
        try {
            const long id = std::stol(f[0]);
            const int label = std::stoi(f[1]);
            if (id <= 0 || id > 0xFFFFFFFFL) throw Error("cell id out of range");
            if (label < -1 || label > 1) throw Error("class label must be 0, 1 or -1");
            out.push_back({static_cast<std::uint32_t>(id), label});
        } catch (const std::logic_error&) {
            throw Error("labels line " + std::to_string(i + 1) + ": not an integer");
        } catch (const Error& e) {
            throw Error("labels line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

std::string encode_labels_csv(const std::vector<CellLabel>& labels) {
    std::string out = "cell_id,class_label\n";
    for (const auto& l : labels) out += std::to_string(l.cell_id) + "," + std::to_string(l.class_label) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Load / save

namespace {

template <typename F>
auto with_context(const std::string& sample, const fs::path& path, F&& f) {
    if (!fs::exists(path)) throw DatasetError(sample, path.string(), "missing file");
    try {
        return f();
    } catch (const DatasetError&) {
        throw;
    } catch (const std::exception& e) {
        throw DatasetError(sample, path.string(), e.what());
    }
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
    fs::path mpath = manifest_path;
    if (fs::is_directory(mpath)) mpath /= "manifest.json";
    const DatasetManifest manifest =
        with_context("", mpath, [&] { return parse_manifest(io::read_file(mpath)); });
    const fs::path root = mpath.parent_path();

    Dataset ds;
    ds.pixel_spacing_um = manifest.pixel_spacing_um;
    ds.samples.resize(manifest.samples.size());

    parallel_for(manifest.samples.size(), [&](std::size_t i) {
        const ManifestSample& ms = manifest.samples[i];
        Sample& s = ds.samples[i];
        s.diagnosis = ms.diagnosis;
        s.stack.sample_id = ms.sample_id;
        s.stack.pixel_spacing_um = manifest.pixel_spacing_um;
        for (const auto& ch : ms.channels) {
            const fs::path p = root / ch.path;
            s.stack.channels.push_back({ch.antigen, with_context(ms.sample_id, p, [&] { return read_pgm(p); })});
            const auto& first = s.stack.channels.front().image;
            const auto& last = s.stack.channels.back().image;
            if (first.width != last.width || first.height != last.height) {
                throw DatasetError(ms.sample_id, p.string(), "dimension mismatch between channels");
            }
        }
        const fs::path mp = root / ms.mask;
        s.mask = with_context(ms.sample_id, mp, [&] { return read_mask(mp); });
        if (!s.stack.channels.empty() && (s.mask.width != s.stack.width() || s.mask.height != s.stack.height())) {
            throw DatasetError(ms.sample_id, mp.string(), "dimension mismatch between mask and channels");
        }
        const fs::path lp = root / ms.labels;
        s.labels = with_context(ms.sample_id, lp, [&] { return read_labels_csv(lp); });
    });

    const auto report = validate_dataset(ds);
    if (!report.empty()) {
        const auto& v = report.front();
        fs::path where = mpath;
        for (const auto& ms : manifest.samples) {
            if (ms.sample_id == v.sample_id) where = root / ms.labels;
        }
        throw DatasetError(v.sample_id, where.string(), "validation failed (" + v.check + "): " + v.message);
    }
    return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
    DatasetManifest m;
    m.pixel_spacing_um = ds.pixel_spacing_um;
    for (const auto& s : ds.samples) {
        ManifestSample ms;
        ms.sample_id = s.stack.sample_id;
        ms.diagnosis = s.diagnosis;
        for (const auto& ch : s.stack.channels) {
            const std::string rel = s.stack.sample_id + "/" + ch.antigen + ".pgm";
            io::write_file_atomic(dir / rel, encode_pgm(ch.image));
            ms.channels.push_back({ch.antigen, rel});
        }
        ms.mask = s.stack.sample_id + "/mask.cgmk";
        io::write_file_atomic(dir / ms.mask, encode_mask(s.mask));
        ms.labels = s.stack.sample_id + "/labels.csv";
        io::write_file_atomic(dir / ms.labels, encode_labels_csv(s.labels));
        m.samples.push_back(std::move(ms));
    }
    const fs::path mpath = dir / "manifest.json";
    io::write_file_atomic(mpath, manifest_to_json(m));
    return mpath;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool valid_identifier(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (c == ',' || c == '/' || c == '\\' || std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

ValidationReport validate_dataset(const Dataset& ds) {
    ValidationReport report;
    auto add = [&](const std::string& sample, std::string check, std::string msg) {
        report.push_back({sample, std::move(check), std::move(msg)});
    };

    if (ds.samples.empty()) add("", "D01-no-samples", "dataset has no samples");
    if (!(ds.pixel_spacing_um > 0.0)) add("", "D03-pixel-spacing", "pixel spacing must be > 0");
    {
        std::set<std::string> ids;
        for (const auto& s : ds.samples) {
            if (!ids.insert(s.stack.sample_id).second) {
                add("", "D02-duplicate-sample", "sample id '" + s.stack.sample_id + "' appears more than once");
            }
        }
    }

    for (const auto& s : ds.samples) {
        const std::string& sid = s.stack.sample_id;
        ValidationReport local;
        auto lad = [&](std::string check, std::string msg) { local.push_back({sid, std::move(check), std::move(msg)}); };

        if (!valid_identifier(sid)) lad("S00-sample-id", "sample id must be non-empty without commas, slashes or spaces");
        if (s.stack.channels.empty()) lad("S01-no-channels", "stain stack has no channels");
        if (!(s.stack.pixel_spacing_um > 0.0)) lad("S12-pixel-spacing", "pixel spacing must be > 0");

        std::set<std::string> antigens;
        bool channel_sizes_ok = true;
        for (const auto& ch : s.stack.channels) {
            const auto& im = ch.image;
            if (im.width == 0 || im.height == 0 || im.values.size() != std::size_t(im.width) * im.height) {
                lad("S02-channel-size", "channel '" + ch.antigen + "' has inconsistent size");
                channel_sizes_ok = false;
            }
            if (im.width != s.stack.width() || im.height != s.stack.height()) {
                lad("S03-channel-dimension-mismatch", "channel '" + ch.antigen + "' is " + std::to_string(im.width) +
                                                          "x" + std::to_string(im.height) + ", first channel is " +
                                                          std::to_string(s.stack.width()) + "x" +
                                                          std::to_string(s.stack.height()));
                channel_sizes_ok = false;
            }
            if (!antigens.insert(ch.antigen).second) lad("S04-duplicate-antigen", "antigen '" + ch.antigen + "' repeated");
            if (!valid_identifier(ch.antigen)) lad("S04-antigen-name", "antigen name '" + ch.antigen + "' is not usable");
        }

        const bool mask_ok = s.mask.width > 0 && s.mask.height > 0 &&
                             s.mask.labels.size() == std::size_t(s.mask.width) * s.mask.height;
        if (!mask_ok) lad("S06-mask-size", "mask has inconsistent size");
        if (channel_sizes_ok && !s.stack.channels.empty() &&
            (s.mask.width != s.stack.width() || s.mask.height != s.stack.height())) {
            lad("S05-mask-dimension-mismatch", "mask is " + std::to_string(s.mask.width) + "x" +
                                                   std::to_string(s.mask.height) + ", channels are " +
                                                   std::to_string(s.stack.width()) + "x" +
                                                   std::to_string(s.stack.height()));
        }

        const auto cells = mask_ok ? s.mask.cell_ids() : std::vector<std::uint32_t>{};
        if (mask_ok && cells.empty()) lad("S13-empty-mask", "mask contains no cells");
        std::set<std::uint32_t> cell_set(cells.begin(), cells.end());
        std::set<std::uint32_t> labelled;
        for (const auto& l : s.labels) {
            if (l.class_label < -1 || l.class_label > 1) {
                lad("S07-invalid-class-label", "cell " + std::to_string(l.cell_id) + " has class label " +
                                                   std::to_string(l.class_label));
            }
            if (!labelled.insert(l.cell_id).second) {
                lad("S08-duplicate-label", "cell " + std::to_string(l.cell_id) + " appears twice in labels");
            }
            if (mask_ok && !cell_set.count(l.cell_id)) {
                lad("S09-orphan-label", "cell " + std::to_string(l.cell_id) + " is labelled but has no mask pixels");
            }
        }
        for (auto id : cells) {
            if (!labelled.count(id)) lad("S10-missing-label", "cell " + std::to_string(id) + " has no labels row");
        }
        std::stable_sort(local.begin(), local.end(), [](const Violation& a, const Violation& b) { return a.check < b.check; });
        report.insert(report.end(), local.begin(), local.end());
    }
    return report;
}

}  // namespace cellgraph
