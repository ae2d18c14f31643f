// SPDX-License-Identifier: Apache-2.0
#include "pasta/prompt_library.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pasta/error.hpp"
#include "pasta/hashing.hpp"

namespace pasta {

namespace {

constexpr std::string_view kOpen = "{{";
constexpr std::string_view kClose = "}}";

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot read template file " + path.string());
    }
    return normalize_newlines(
        std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

std::vector<std::string> split_slots(const std::string& field) {
    std::vector<std::string> out;
    if (field == "-" || field.empty()) return out;
    std::stringstream ss(field);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (!name.empty()) out.push_back(name);
    }
    return out;
}

}  // namespace

std::string_view to_string(TemplateId id) noexcept {
    switch (id) {
        case TemplateId::SpatialGen: return "spatial_gen";
        case TemplateId::TemporalGen: return "temporal_gen";
        case TemplateId::CrossframeGen: return "crossframe_gen";
        case TemplateId::Filter: return "filter";
        case TemplateId::AdversarialQaGen: return "adversarial_qa_gen";
        case TemplateId::AdversarialQaEval: return "adversarial_qa_eval";
        case TemplateId::TargetingAudit: return "targeting_audit";
    }
    return "spatial_gen";
}

TemplateId parse_template_id(std::string_view text) {
    for (TemplateId id : kAllTemplates) {
        if (to_string(id) == text) return id;
    }
    throw Error(ErrorCode::UnknownTemplate, "unknown template_id '" + std::string(text) + "'");
}

std::vector<std::string> extract_slots(std::string_view body) {
    std::vector<std::string> slots;
    std::size_t pos = 0;
    while ((pos = body.find(kOpen, pos)) != std::string_view::npos) {
        const auto end = body.find(kClose, pos + kOpen.size());
        if (end == std::string_view::npos) break;
        std::string name(body.substr(pos + kOpen.size(), end - pos - kOpen.size()));
        if (std::find(slots.begin(), slots.end(), name) == slots.end()) {
            slots.push_back(std::move(name));
        }
        pos = end + kClose.size();
    }
    return slots;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
    PromptLibrary lib;
    lib.dir_ = dir;
    std::array<bool, kAllTemplates.size()> seen{};

    std::istringstream index(read_file(dir / "index.tsv"));
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::istringstream row(line);
        std::string id_text, file, slots_field;
        std::getline(row, id_text, '\t');
        std::getline(row, file, '\t');
        std::getline(row, slots_field, '\t');
        const TemplateId id = parse_template_id(id_text);

        PromptTemplate t{id, read_file(dir / file), split_slots(slots_field)};
        auto declared = t.slots;
        auto in_body = extract_slots(t.body);
        std::sort(declared.begin(), declared.end());
        std::sort(in_body.begin(), in_body.end());
        if (declared != in_body) {
            throw Error(ErrorCode::TemplateSlotMismatch,
                        id_text + ": slots declared in index.tsv differ from slots in " + file);
        }
        t.slots = extract_slots(t.body);
        lib.templates_[static_cast<std::size_t>(id)] = std::move(t);
        seen[static_cast<std::size_t>(id)] = true;
    }
    for (TemplateId id : kAllTemplates) {
        if (!seen[static_cast<std::size_t>(id)]) {
            throw Error(ErrorCode::UnknownTemplate,
                        "template directory " + dir.string() + " lacks " +
                            std::string(to_string(id)));
        }
    }
    return lib;
}

std::filesystem::path default_template_dir() {
    if (const char* env = std::getenv("PASTA_TEMPLATES"); env != nullptr && *env != '\0') {
        return env;
    }
    const std::filesystem::path source{PASTA_SOURCE_TEMPLATE_DIR};
    if (std::filesystem::exists(source / "index.tsv")) {
        return source;
    }
    return PASTA_INSTALL_TEMPLATE_DIR;
}

PromptLibrary PromptLibrary::load_default() {
    return load(default_template_dir());
}

const PromptTemplate& PromptLibrary::get(TemplateId id) const {
    return templates_[static_cast<std::size_t>(id)];
}

std::string PromptLibrary::render(TemplateId id, const SlotBindings& bindings) const {
    const PromptTemplate& t = get(id);
    std::vector<std::string> missing;
    for (const auto& slot : t.slots) {
        if (bindings.find(slot) == bindings.end()) missing.push_back(slot);
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& m : missing) {
            if (!names.empty()) names += ", ";
            names += m;
        }
        throw Error(ErrorCode::MissingSlot,
                    std::string(to_string(id)) + " is missing bindings for: " + names);
    }

    std::string out;
    out.reserve(t.body.size());
    const std::string_view body = t.body;
    std::size_t pos = 0;
    while (pos < body.size()) {
        const auto open = body.find(kOpen, pos);
        if (open == std::string_view::npos) {
            out.append(body.substr(pos));
            break;
        }
        const auto close = body.find(kClose, open + kOpen.size());
        if (close == std::string_view::npos) {
            out.append(body.substr(pos));
            break;
        }
        out.append(body.substr(pos, open - pos));
        const auto name = body.substr(open + kOpen.size(), close - open - kOpen.size());
        out.append(bindings.find(name)->second);
        pos = close + kClose.size();
    }
    return out;
}

std::string PromptLibrary::render(std::string_view id, const SlotBindings& bindings) const {
    return render(parse_template_id(id), bindings);
}

}  // namespace pasta
