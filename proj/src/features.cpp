#include "cellgraph/features.hpp"

#include <algorithm>
#include <unordered_map>

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"

namespace cellgraph {

namespace {

// Pixel indices per cell, row-major order within each cell.
struct CellIndex {
    std::vector<std::uint32_t> ids;
    std::vector<std::vector<std::size_t>> pixels;
};

CellIndex index_cells(const LabelMask& mask) {
    CellIndex ix;
    ix.ids = mask.cell_ids();
    std::unordered_map<std::uint32_t, std::size_t> slot;
    for (std::size_t i = 0; i < ix.ids.size(); ++i) slot[ix.ids[i]] = i;
    ix.pixels.resize(ix.ids.size());
    for (std::size_t p = 0; p < mask.labels.size(); ++p) {
        if (mask.labels[p] != 0) ix.pixels[slot[mask.labels[p]]].push_back(p);
    }
    return ix;
}

}  // namespace

CellTable expression_profile(const StainStack& stack, const LabelMask& mask, Pooling pooling) {
    if (stack.channels.empty()) throw Error("expression_profile: stack has no channels");
    if (mask.width != stack.width() || mask.height != stack.height()) {
        throw Error("expression_profile: mask and stack dimensions differ for sample " + stack.sample_id);
    }
    const CellIndex ix = index_cells(mask);
    if (ix.ids.empty()) throw Error("expression_profile: mask of sample " + stack.sample_id + " contains no cells");

    CellTable table;
    for (const auto& ch : stack.channels) table.feature_names.push_back(ch.antigen);
    table.rows.resize(ix.ids.size());

    parallel_for(ix.ids.size(), [&](std::size_t c) {
        CellRow& row = table.rows[c];
        const auto& px = ix.pixels[c];
        row.cell_id = ix.ids[c];
        row.sample_id = stack.sample_id;
        double sr = 0.0, sc = 0.0;
        for (std::size_t p : px) {
            sr += static_cast<double>(p / mask.width);
            sc += static_cast<double>(p % mask.width);
        }
        row.cy = sr / double(px.size());
        row.cx = sc / double(px.size());
        row.features.resize(stack.channels.size());
        std::vector<double> buf;
        for (std::size_t k = 0; k < stack.channels.size(); ++k) {
            const auto& values = stack.channels[k].image.values;
            if (pooling == Pooling::mean) {
                double sum = 0.0;
                for (std::size_t p : px) sum += values[p];
                row.features[k] = sum / double(px.size());
            } else {
                buf.clear();
                for (std::size_t p : px) buf.push_back(values[p]);
                std::sort(buf.begin(), buf.end());
                const std::size_t m = buf.size() / 2;
                row.features[k] = buf.size() % 2 ? buf[m] : 0.5 * (buf[m - 1] + buf[m]);
            }
        }
    });
    return table;
}

CellTable expression_profile(const Sample& sample, Pooling pooling) {
    CellTable t = expression_profile(sample.stack, sample.mask, pooling);
    for (auto& row : t.rows) row.label = label_of(sample.labels, row.cell_id);
    return t;
}

CellTable concat_tables(const std::vector<CellTable>& tables) {
    CellTable out;
    if (tables.empty()) return out;
    out.feature_names = tables.front().feature_names;
    for (const auto& t : tables) {
        if (t.feature_names != out.feature_names) throw Error("concat_tables: feature columns differ between tables");
        out.rows.insert(out.rows.end(), t.rows.begin(), t.rows.end());
    }
    out.sort();
    out.check();
    return out;
}

std::string encode_cell_table_csv(const CellTable& table) {
    std::string out = "cell_id,sample_id,cx,cy,label";
    for (const auto& name : table.feature_names) out += "," + name;
    out += "\n";
    for (const auto& r : table.rows) {
        out += std::to_string(r.cell_id) + "," + r.sample_id + "," + io::format_double(r.cx) + "," +
               io::format_double(r.cy) + "," + std::to_string(r.label);
        for (double v : r.features) out += "," + io::format_double(v);
        out += "\n";
    }
    return out;
}

CellTable parse_cell_table_csv(const std::string& text) {
    const auto lines = io::split_lines(text);
    if (lines.empty()) throw Error("feature table is empty");
    const auto header = io::split_csv_line(lines[0]);
    const std::vector<std::string> fixed = {"cell_id", "sample_id", "cx", "cy", "label"};
    if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
        throw Error("feature table header must start with cell_id,sample_id,cx,cy,label");
    }
    CellTable t;
    t.feature_names.assign(header.begin() + 5, header.end());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split_csv_line(lines[i]);
        if (f.size() != header.size()) {
            throw Error("feature table line " + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
        }
        CellRow r;
        try {
            r.cell_id = static_cast<std::uint32_t>(std::stoul(f[0]));
            r.label = std::stoi(f[4]);
        } catch (const std::logic_error&) {
            throw Error("feature table line " + std::to_string(i + 1) + ": bad integer field");
        }
        r.sample_id = f[1];
        r.cx = io::parse_double(f[2]);
        r.cy = io::parse_double(f[3]);
        r.features.reserve(f.size() - 5);
        for (std::size_t j = 5; j < f.size(); ++j) r.features.push_back(io::parse_double(f[j]));
        t.rows.push_back(std::move(r));
    }
    t.check();
    return t;
}

CellTable read_cell_table_csv(const std::filesystem::path& path) {
    try {
        return parse_cell_table_csv(io::read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

}  // namespace cellgraph
