#pragma once

// Per-class symbolic attribute profiles and the equivalence structure built on
// them. A RuleBase is immutable after construction.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nsdesk::rules {

struct AttributeSchema {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> vocab;  // admissible values per attribute

    std::size_t size() const { return names.size(); }
    std::size_t cardinality(std::size_t attr) const { return vocab.at(attr).size(); }

    // Throws ConfigError for an unknown attribute name.
    std::size_t index_of(std::string_view name) const;
    // Index of `value` in the vocabulary of `attr`, or npos.
    std::size_t find_value(std::size_t attr, std::string_view value) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Attribute names and vocabularies of the shipped sign taxonomy.
AttributeSchema default_schema();

struct AttributeProfile {
    std::size_t class_id = 0;
    std::string class_name;
    std::vector<std::size_t> values;  // vocabulary index per schema attribute
};

struct AttributeCheck {
    std::string attribute;
    std::string expected;
    std::string predicted;
    bool match = false;
};

struct ConsistencyReport {
    std::size_t predicted_class = 0;
    std::vector<AttributeCheck> checks;  // one per schema attribute
    std::size_t violations = 0;
    bool consistent() const { return violations == 0; }
};

class RuleBase {
public:
    // Validates ids 0..C-1, value indices and the equivalence subset.
    RuleBase(AttributeSchema schema, std::vector<AttributeProfile> profiles,
             std::vector<std::size_t> equivalence_attrs);

    const AttributeSchema& schema() const { return schema_; }
    std::size_t num_classes() const { return profiles_.size(); }
    std::size_t num_attributes() const { return schema_.size(); }
    const AttributeProfile& profile(std::size_t y) const;
    const std::vector<std::size_t>& equivalence_attrs() const { return equivalence_; }

    // Vocabulary index the rules expect for attribute `attr` of class `y`.
    std::size_t expected_value(std::size_t y, std::size_t attr) const;

    // Sorted ids of classes agreeing with y on every equivalence attribute.
    const std::vector<std::size_t>& equivalence_set(std::size_t y) const;
    bool same_group(std::size_t a, std::size_t b) const;

    // Uniform distribution over S(y); `num_classes` must equal C.
    std::vector<double> soft_target(std::size_t y, std::size_t num_classes) const;

    // Compares predicted attribute values against the profile of the
    // predicted class. Unknown values throw ConfigError.
    ConsistencyReport verify_prediction(std::size_t predicted_class,
                                        const std::vector<std::string>& predicted_values) const;
    ConsistencyReport verify_prediction(std::size_t predicted_class,
                                        const std::vector<std::size_t>& predicted_values) const;

    // Text in the rule-file format that parses back to an equal RuleBase.
    std::string to_text() const;

private:
    void check_class(std::size_t y, std::string_view what) const;

    AttributeSchema schema_;
    std::vector<AttributeProfile> profiles_;
    std::vector<std::size_t> equivalence_;
    std::vector<std::vector<std::size_t>> groups_;
};

// Rule-file parsing. Errors carry `source` and the 1-based line number.
RuleBase parse_rules(std::string_view text, std::string_view source = "<rules>");
RuleBase load_rules(const std::filesystem::path& path);

}  // namespace nsdesk::rules
