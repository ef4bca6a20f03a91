#include "batcher/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "batcher/rng.hpp"

namespace batcher {

std::string to_string(MatchLabel label) {
    return label == MatchLabel::Matching ? "matching" : "non-matching";
}

std::optional<MatchLabel> match_label_from_string(const std::string& text) {
    if (text == "matching") return MatchLabel::Matching;
    if (text == "non-matching") return MatchLabel::NonMatching;
    return std::nullopt;
}

bool schema_consistent(const EntityPair& pair) {
    if (pair.left.attrs.size() != pair.right.attrs.size()) return false;
    for (std::size_t i = 0; i < pair.left.attrs.size(); ++i) {
        if (pair.left.attrs[i].first != pair.right.attrs[i].first) return false;
    }
    return true;
}

std::size_t Dataset::match_count() const {
    std::size_t n = 0;
    for (const auto& p : pairs) {
        if (p.gold && *p.gold == MatchLabel::Matching) ++n;
    }
    return n;
}

namespace {

// Minimal RFC-4180 reader: quoted fields, escaped quotes, embedded commas
// and newlines. Tracks line numbers for error messages.
class CsvReader {
public:
    CsvReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw Error("cannot open " + path);
    }

    // Reads one record; returns false at EOF. `line` reports the line the
    // record started on.
    bool next(std::vector<std::string>& fields, std::size_t& line) {
        fields.clear();
        int c = in_.get();
        while (c == '\r' || c == '\n') {
            if (c == '\n') ++line_no_;
            c = in_.get();
        }
        if (c == EOF) return false;
        line = line_no_;

        std::string field;
        bool quoted = false;
        while (true) {
            if (quoted) {
                if (c == EOF) throw Error(path_ + ":" + std::to_string(line) + ": unterminated quoted field");
                if (c == '"') {
                    const int peek = in_.get();
                    if (peek == '"') {
                        field.push_back('"');
                    } else {
                        quoted = false;
                        c = peek;
                        continue;
                    }
                } else {
                    if (c == '\n') ++line_no_;
                    field.push_back(static_cast<char>(c));
                }
            } else {
                if (c == EOF || c == '\n' || c == '\r') {
                    fields.push_back(std::move(field));
                    if (c == '\r' && in_.peek() == '\n') in_.get();
                    if (c != EOF) ++line_no_;
                    return true;
                }
                if (c == ',') {
                    fields.push_back(std::move(field));
                    field.clear();
                } else if (c == '"' && field.empty()) {
                    quoted = true;
                } else {
                    field.push_back(static_cast<char>(c));
                }
            }
            c = in_.get();
        }
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t line_no_ = 1;
};

struct Table {
    std::vector<std::string> schema;  // attribute names, id column excluded
    std::unordered_map<std::string, EntityRecord> records;
};

Table load_table(const std::string& path) {
    CsvReader reader(path);
    std::vector<std::string> fields;
    std::size_t line = 0;

    if (!reader.next(fields, line)) throw Error(path + ": empty file, header row required");
    if (fields.empty() || fields[0] != "id") {
        throw Error(path + ":" + std::to_string(line) + ": first header column must be \"id\"");
    }
    Table table;
    table.schema.assign(fields.begin() + 1, fields.end());
    if (table.schema.empty()) throw Error(path + ":" + std::to_string(line) + ": table needs at least one attribute");
    for (std::size_t i = 0; i < table.schema.size(); ++i) {
        for (std::size_t j = i + 1; j < table.schema.size(); ++j) {
            if (table.schema[i] == table.schema[j]) {
                throw Error(path + ":" + std::to_string(line) + ": duplicate attribute \"" +
                            table.schema[i] + "\"");
            }
        }
    }

    const std::size_t width = fields.size();
    while (reader.next(fields, line)) {
        if (fields.size() != width) {
            throw Error(path + ":" + std::to_string(line) + ": expected " + std::to_string(width) +
                        " fields, got " + std::to_string(fields.size()));
        }
        EntityRecord rec;
        rec.id = fields[0];
        rec.attrs.reserve(table.schema.size());
        for (std::size_t i = 0; i < table.schema.size(); ++i) {
            rec.attrs.emplace_back(table.schema[i], fields[i + 1]);
        }
        if (!table.records.emplace(rec.id, std::move(rec)).second) {
            throw Error(path + ":" + std::to_string(line) + ": duplicate id \"" + fields[0] + "\"");
        }
    }
    return table;
}

}  // namespace

Dataset load_dataset(const std::string& table_a_path,
                     const std::string& table_b_path,
                     const std::string& pairs_path) {
    Table a = load_table(table_a_path);
    Table b = load_table(table_b_path);
    if (a.schema != b.schema) {
        throw Error("schema mismatch between " + table_a_path + " and " + table_b_path);
    }

    Dataset ds;
    ds.schema = a.schema;
    ds.name = pairs_path;

    CsvReader reader(pairs_path);
    std::vector<std::string> fields;
    std::size_t line = 0;
    if (!reader.next(fields, line)) throw Error(pairs_path + ": empty file, header row required");
    if (fields.size() != 3) {
        throw Error(pairs_path + ":" + std::to_string(line) + ": pairs header must have 3 columns (left id, right id, label)");
    }
    while (reader.next(fields, line)) {
        if (fields.size() != 3) {
            throw Error(pairs_path + ":" + std::to_string(line) + ": expected 3 fields, got " +
                        std::to_string(fields.size()));
        }
        const auto ita = a.records.find(fields[0]);
        if (ita == a.records.end()) {
            throw Error(pairs_path + ":" + std::to_string(line) + ": unknown left id \"" + fields[0] + "\"");
        }
        const auto itb = b.records.find(fields[1]);
        if (itb == b.records.end()) {
            throw Error(pairs_path + ":" + std::to_string(line) + ": unknown right id \"" + fields[1] + "\"");
        }
        MatchLabel label;
        if (fields[2] == "1") {
            label = MatchLabel::Matching;
        } else if (fields[2] == "0") {
            label = MatchLabel::NonMatching;
        } else {
            throw Error(pairs_path + ":" + std::to_string(line) + ": label must be 0 or 1, got \"" + fields[2] + "\"");
        }
        ds.pairs.push_back(EntityPair{ita->second, itb->second, label});
    }
    return ds;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) throw Error("split ratios must sum to 1");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * ratios[i];
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return remainder[l] > remainder[r]; });
    for (std::size_t i = 0; assigned < n; ++i) {
        ++sizes[order[i % 3]];
        ++assigned;
    }
    return sizes;
}

SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec) {
    if (ds.pairs.empty()) throw Error("cannot split an empty dataset");

    const auto sizes = split_sizes(ds.pairs.size(), spec.ratios);

    std::vector<std::size_t> idx(ds.pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(spec.seed);
    rng.shuffle(idx);

    SplitResult out;
    Dataset* parts[3] = {&out.train, &out.valid, &out.test};
    const char* suffix[3] = {".train", ".valid", ".test"};
    std::size_t cursor = 0;
    for (std::size_t part = 0; part < 3; ++part) {
        parts[part]->name = ds.name + suffix[part];
        parts[part]->schema = ds.schema;
        parts[part]->pairs.reserve(sizes[part]);
        for (std::size_t i = 0; i < sizes[part]; ++i) {
            parts[part]->pairs.push_back(ds.pairs[idx[cursor++]]);
        }
    }
    return out;
}

}  // namespace batcher
