#include "nsdesk/rulebase/rulebase.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"

namespace nsdesk::rules {
namespace {

const std::vector<std::string> kDefaultEquivalence = {"shape", "fill_color", "border_color", "category"};

std::string at_line(std::string_view source, std::size_t line) {
    return std::string(source) + ":" + std::to_string(line) + ": ";
}

}  // namespace

std::size_t AttributeSchema::index_of(std::string_view name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
        throw ConfigError("unknown attribute '" + std::string(name) + "'");
    }
    return static_cast<std::size_t>(it - names.begin());
}

std::size_t AttributeSchema::find_value(std::size_t attr, std::string_view value) const {
    const auto& v = vocab.at(attr);
    const auto it = std::find(v.begin(), v.end(), value);
    return it == v.end() ? npos : static_cast<std::size_t>(it - v.begin());
}

AttributeSchema default_schema() {
    AttributeSchema s;
    s.names = {"shape", "fill_color", "border_color", "icon", "category"};
    s.vocab = {
        {"circle", "triangle_up", "triangle_down", "octagon", "diamond"},
        {"white", "red", "blue", "yellow", "black", "orange"},
        {"red", "white", "black", "blue"},
        {"blank", "stop_text", "num_30", "num_50", "num_70", "bar", "exclamation", "person", "cross",
         "arrow_up", "arrow_left", "arrow_right"},
        {"prohibitory", "priority", "warning", "mandatory"},
    };
    return s;
}

RuleBase::RuleBase(AttributeSchema schema, std::vector<AttributeProfile> profiles,
                   std::vector<std::size_t> equivalence_attrs)
    : schema_(std::move(schema)), profiles_(std::move(profiles)), equivalence_(std::move(equivalence_attrs)) {
    if (schema_.names.empty() || schema_.names.size() != schema_.vocab.size()) {
        throw ConfigError("rule base: schema needs one vocabulary per attribute");
    }
    for (std::size_t j = 0; j < schema_.size(); ++j) {
        if (std::count(schema_.names.begin(), schema_.names.end(), schema_.names[j]) != 1) {
            throw ConfigError("rule base: duplicate attribute '" + schema_.names[j] + "'");
        }
        const auto& v = schema_.vocab[j];
        if (v.empty()) {
            throw ConfigError("rule base: empty vocabulary for '" + schema_.names[j] + "'");
        }
        for (const auto& value : v) {
            if (std::count(v.begin(), v.end(), value) != 1) {
                throw ConfigError("rule base: duplicate value '" + value + "' in vocabulary of '" +
                                  schema_.names[j] + "'");
            }
        }
    }
    if (profiles_.empty()) {
        throw ConfigError("no classes defined");
    }
    std::sort(profiles_.begin(), profiles_.end(),
              [](const AttributeProfile& a, const AttributeProfile& b) { return a.class_id < b.class_id; });
    for (std::size_t i = 0; i < profiles_.size(); ++i) {
        const AttributeProfile& p = profiles_[i];
        if (i > 0 && p.class_id == profiles_[i - 1].class_id) {
            throw ConfigError("duplicate class id " + std::to_string(p.class_id));
        }
        if (p.class_id != i) {
            throw ConfigError("class ids must be 0.." + std::to_string(profiles_.size() - 1) +
                              " without gaps; missing " + std::to_string(i));
        }
        if (p.values.size() != schema_.size()) {
            throw ConfigError("class " + std::to_string(i) + " has " + std::to_string(p.values.size()) +
                              " attribute values, schema has " + std::to_string(schema_.size()));
        }
        for (std::size_t j = 0; j < schema_.size(); ++j) {
            if (p.values[j] >= schema_.cardinality(j)) {
                throw ConfigError("class " + std::to_string(i) + " (" + p.class_name + "): value index " +
                                  std::to_string(p.values[j]) + " out of range for attribute '" +
                                  schema_.names[j] + "'");
            }
        }
    }
    for (std::size_t e : equivalence_) {
        if (e >= schema_.size()) {
            throw ConfigError("equivalence attribute index " + std::to_string(e) + " out of range");
        }
    }
    std::sort(equivalence_.begin(), equivalence_.end());
    equivalence_.erase(std::unique(equivalence_.begin(), equivalence_.end()), equivalence_.end());

    groups_.resize(profiles_.size());
    for (std::size_t y = 0; y < profiles_.size(); ++y) {
        for (std::size_t i = 0; i < profiles_.size(); ++i) {
            const bool agree = std::all_of(equivalence_.begin(), equivalence_.end(), [&](std::size_t e) {
                return profiles_[i].values[e] == profiles_[y].values[e];
            });
            if (agree) {
                groups_[y].push_back(i);
            }
        }
    }
}

void RuleBase::check_class(std::size_t y, std::string_view what) const {
    if (y >= profiles_.size()) {
        throw ConfigError(std::string(what) + ": class id " + std::to_string(y) + " out of range [0," +
                          std::to_string(profiles_.size()) + ")");
    }
}

const AttributeProfile& RuleBase::profile(std::size_t y) const {
    check_class(y, "profile");
    return profiles_[y];
}

std::size_t RuleBase::expected_value(std::size_t y, std::size_t attr) const {
    check_class(y, "expected_value");
    return profiles_[y].values.at(attr);
}

const std::vector<std::size_t>& RuleBase::equivalence_set(std::size_t y) const {
    check_class(y, "equivalence_set");
    return groups_[y];
}

bool RuleBase::same_group(std::size_t a, std::size_t b) const {
    const auto& g = equivalence_set(a);
    return std::binary_search(g.begin(), g.end(), b);
}

std::vector<double> RuleBase::soft_target(std::size_t y, std::size_t num_classes) const {
    check_class(y, "soft_target");
    if (num_classes != profiles_.size()) {
        throw ConfigError("soft_target: " + std::to_string(num_classes) + " classes requested, rule base has " +
                          std::to_string(profiles_.size()));
    }
    std::vector<double> q(num_classes, 0.0);
    const double mass = 1.0 / static_cast<double>(groups_[y].size());
    for (std::size_t i : groups_[y]) {
        q[i] = mass;
    }
    return q;
}

ConsistencyReport RuleBase::verify_prediction(std::size_t predicted_class,
                                              const std::vector<std::string>& predicted_values) const {
    if (predicted_values.size() != schema_.size()) {
        throw ConfigError("verify_prediction: expected " + std::to_string(schema_.size()) +
                          " attribute values, got " + std::to_string(predicted_values.size()));
    }
    std::vector<std::size_t> idx(schema_.size());
    for (std::size_t j = 0; j < schema_.size(); ++j) {
        idx[j] = schema_.find_value(j, predicted_values[j]);
        if (idx[j] == AttributeSchema::npos) {
            throw ConfigError("verify_prediction: unknown value '" + predicted_values[j] + "' for attribute '" +
                              schema_.names[j] + "'");
        }
    }
    return verify_prediction(predicted_class, idx);
}

ConsistencyReport RuleBase::verify_prediction(std::size_t predicted_class,
                                              const std::vector<std::size_t>& predicted_values) const {
    check_class(predicted_class, "verify_prediction");
    if (predicted_values.size() != schema_.size()) {
        throw ConfigError("verify_prediction: expected " + std::to_string(schema_.size()) +
                          " attribute values, got " + std::to_string(predicted_values.size()));
    }
    ConsistencyReport report;
    report.predicted_class = predicted_class;
    for (std::size_t j = 0; j < schema_.size(); ++j) {
        if (predicted_values[j] >= schema_.cardinality(j)) {
            throw ConfigError("verify_prediction: value index " + std::to_string(predicted_values[j]) +
                              " out of range for attribute '" + schema_.names[j] + "'");
        }
        AttributeCheck c;
        c.attribute = schema_.names[j];
        c.expected = schema_.vocab[j][profiles_[predicted_class].values[j]];
        c.predicted = schema_.vocab[j][predicted_values[j]];
        c.match = c.expected == c.predicted;
        report.violations += c.match ? 0 : 1;
        report.checks.push_back(std::move(c));
    }
    return report;
}

std::string RuleBase::to_text() const {
    std::ostringstream out;
    out << "class_id,class_name," << text::join(schema_.names, ",") << "\n";
    for (std::size_t j = 0; j < schema_.size(); ++j) {
        out << "!vocab." << schema_.names[j] << "=" << text::join(schema_.vocab[j], ",") << "\n";
    }
    for (const AttributeProfile& p : profiles_) {
        out << p.class_id << "," << p.class_name;
        for (std::size_t j = 0; j < schema_.size(); ++j) {
            out << "," << schema_.vocab[j][p.values[j]];
        }
        out << "\n";
    }
    std::vector<std::string> eq;
    for (std::size_t e : equivalence_) {
        eq.push_back(schema_.names[e]);
    }
    out << "!equivalence=" << text::join(eq, ",") << "\n";
    return out.str();
}

RuleBase parse_rules(std::string_view text, std::string_view source) {
    std::vector<std::string> header;
    std::map<std::string, std::vector<std::string>> vocab_directives;
    std::vector<std::string> equivalence_names;
    bool have_equivalence = false;
    struct Row {
        std::size_t line;
        std::vector<std::string> cells;
    };
    std::vector<Row> rows;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string_view line = text::trim(raw);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        if (header.empty()) {
            for (auto& cell : text::split(line, ',')) {
                header.emplace_back(text::trim(cell));
            }
            if (header.size() < 3 || header[0] != "class_id" || header[1] != "class_name") {
                throw ParseError(at_line(source, line_no) +
                                 "header must start with class_id,class_name followed by attribute columns");
            }
            continue;
        }
        if (line.front() == '!') {
            const std::size_t eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ParseError(at_line(source, line_no) + "directive without '='");
            }
            const std::string key(text::trim(line.substr(1, eq - 1)));
            std::vector<std::string> values;
            for (auto& v : text::split(line.substr(eq + 1), ',')) {
                values.emplace_back(text::trim(v));
            }
            if (key == "equivalence") {
                equivalence_names = std::move(values);
                have_equivalence = true;
            } else if (key.rfind("vocab.", 0) == 0) {
                vocab_directives[key.substr(6)] = std::move(values);
            } else {
                throw ParseError(at_line(source, line_no) + "unknown directive '!" + key + "'");
            }
            continue;
        }
        Row row{line_no, {}};
        for (auto& cell : text::split(line, ',')) {
            row.cells.emplace_back(text::trim(cell));
        }
        if (row.cells.size() != header.size()) {
            throw ParseError(at_line(source, line_no) + "expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(row.cells.size()));
        }
        rows.push_back(std::move(row));
    }
    if (header.empty()) {
        throw ParseError(std::string(source) + ": missing header line");
    }

    AttributeSchema schema;
    const AttributeSchema defaults = default_schema();
    for (std::size_t c = 2; c < header.size(); ++c) {
        const std::string& name = header[c];
        schema.names.push_back(name);
        if (auto it = vocab_directives.find(name); it != vocab_directives.end()) {
            schema.vocab.push_back(it->second);
            vocab_directives.erase(it);
        } else if (auto d = std::find(defaults.names.begin(), defaults.names.end(), name); d != defaults.names.end()) {
            schema.vocab.push_back(defaults.vocab[static_cast<std::size_t>(d - defaults.names.begin())]);
        } else {
            throw ParseError(std::string(source) + ": no vocabulary for attribute '" + name +
                             "' (add a !vocab." + name + "= directive)");
        }
    }
    if (!vocab_directives.empty()) {
        throw ParseError(std::string(source) + ": vocabulary given for unknown attribute '" +
                         vocab_directives.begin()->first + "'");
    }
    if (rows.empty()) {
        throw ConfigError(std::string(source) + ": no classes defined");
    }

    std::vector<AttributeProfile> profiles;
    std::map<std::size_t, std::size_t> seen;
    for (const Row& row : rows) {
        AttributeProfile p;
        long long id = 0;
        try {
            id = text::parse_int(row.cells[0], "class_id");
        } catch (const ParseError& e) {
            throw ParseError(at_line(source, row.line) + e.what());
        }
        if (id < 0) {
            throw ParseError(at_line(source, row.line) + "negative class id " + std::to_string(id));
        }
        p.class_id = static_cast<std::size_t>(id);
        if (auto [it, inserted] = seen.emplace(p.class_id, row.line); !inserted) {
            throw ConfigError(at_line(source, row.line) + "duplicate class id " + std::to_string(id) +
                              " (first defined on line " + std::to_string(it->second) + ")");
        }
        p.class_name = row.cells[1];
        for (std::size_t j = 0; j < schema.size(); ++j) {
            const std::size_t v = schema.find_value(j, row.cells[j + 2]);
            if (v == AttributeSchema::npos) {
                throw ConfigError(at_line(source, row.line) + "class " + std::to_string(id) + " (" + p.class_name +
                                  "): value '" + row.cells[j + 2] + "' not in vocabulary of attribute '" +
                                  schema.names[j] + "'");
            }
            p.values.push_back(v);
        }
        profiles.push_back(std::move(p));
    }

    if (!have_equivalence) {
        equivalence_names = kDefaultEquivalence;
    }
    std::vector<std::size_t> equivalence;
    for (const std::string& name : equivalence_names) {
        const auto it = std::find(schema.names.begin(), schema.names.end(), name);
        if (it == schema.names.end()) {
            throw ConfigError(std::string(source) + ": equivalence attribute '" + name + "' is not a column");
        }
        equivalence.push_back(static_cast<std::size_t>(it - schema.names.begin()));
    }
    try {
        return RuleBase(std::move(schema), std::move(profiles), std::move(equivalence));
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(source) + ": " + e.what());
    }
}

RuleBase load_rules(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open rule file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_rules(buf.str(), path.string());
}

}  // namespace nsdesk::rules
