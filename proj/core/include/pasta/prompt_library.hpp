// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pasta {

enum class TemplateId {
    SpatialGen,
    TemporalGen,
    CrossframeGen,
    Filter,
    AdversarialQaGen,
    AdversarialQaEval,
    TargetingAudit,
};

inline constexpr std::array<TemplateId, 7> kAllTemplates = {
    TemplateId::SpatialGen,       TemplateId::TemporalGen,       TemplateId::CrossframeGen,
    TemplateId::Filter,           TemplateId::AdversarialQaGen,  TemplateId::AdversarialQaEval,
    TemplateId::TargetingAudit};

std::string_view to_string(TemplateId id) noexcept;
/// Throws Error(UnknownTemplate).
TemplateId parse_template_id(std::string_view text);

struct PromptTemplate {
    TemplateId id;
    std::string body;
    /// Slot names in first-appearance order.
    std::vector<std::string> slots;
};

/// Names of every `{{slot}}` marker in `body`, deduplicated, in order of appearance.
std::vector<std::string> extract_slots(std::string_view body);

using SlotBindings = std::map<std::string, std::string, std::less<>>;

/// Read-only after load; safe for concurrent rendering.
///
/// Layout on disk: `index.tsv` with rows `template_id <TAB> file <TAB> slots`
/// (comma-separated, "-" for none) plus one body file per template.
class PromptLibrary {
public:
    static PromptLibrary load(const std::filesystem::path& dir);
    /// $PASTA_TEMPLATES if set, else the source tree or install location.
    static PromptLibrary load_default();

    const PromptTemplate& get(TemplateId id) const;
    const std::filesystem::path& directory() const noexcept { return dir_; }

    /// Literal `{{slot}}` substitution. Throws Error(MissingSlot) listing every
    /// unbound slot. Extra bindings are ignored.
    std::string render(TemplateId id, const SlotBindings& bindings) const;
    /// As above, by string id; throws Error(UnknownTemplate) for an unknown id.
    std::string render(std::string_view id, const SlotBindings& bindings) const;

private:
    std::filesystem::path dir_;
    std::array<PromptTemplate, kAllTemplates.size()> templates_{};
};

std::filesystem::path default_template_dir();

}  // namespace pasta
