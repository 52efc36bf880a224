#pragma once

#include <map>
#include <string>
#include <vector>

#include "widin/errors.hpp"

namespace widin {

// Closed word list: special tokens, prompt words, one word per domain and one
// per class. Ids are dense and assigned in construction order, so a
// vocabulary is a pure function of (num_classes, num_domains).
class Vocabulary {
public:
    static constexpr const char* kCls = "<cls>";
    static constexpr const char* kSlot = "<slot>";

    static std::string class_word(int c) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "cname%02d", c);
        return buf;
    }

    static std::string domain_word(int g) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "dname%d", g);
        return buf;
    }

    static Vocabulary build(int num_classes, int num_domains = 0) {
        Vocabulary v;
        v.add(kCls);
        v.add(kSlot);
        for (const char* w : {"the", "image", "photo", "of", "a", "an", "in", "scene"}) v.add(w);
        for (int g = 0; g < num_domains; ++g) v.add(domain_word(g));
        for (int c = 0; c < num_classes; ++c) v.add(class_word(c));
        return v;
    }

    int id_of(const std::string& word) const {
        auto it = ids_.find(word);
        if (it == ids_.end()) throw UnknownToken(word);
        return it->second;
    }

    bool contains(const std::string& word) const { return ids_.count(word) != 0; }
    const std::string& word_of(int id) const { return words_.at(id); }
    int size() const { return static_cast<int>(words_.size()); }
    int cls_id() const { return 0; }
    int slot_id() const { return 1; }

private:
    std::vector<std::string> words_;
    std::map<std::string, int> ids_;

    void add(const std::string& w) {
        if (ids_.count(w)) throw Error("vocabulary: duplicate word " + w);
        ids_[w] = static_cast<int>(words_.size());
        words_.push_back(w);
    }
};

// Ordered token ids with at most one slot position where an external
// embedding replaces the table lookup.
struct TokenSequence {
    std::vector<int> ids;
    int slot_position = -1;

    static constexpr int kMaxLen = 16;

    bool has_slot() const { return slot_position >= 0; }
    int length() const { return static_cast<int>(ids.size()); }
};

// Whitespace-separated lowercase words, all of which must be known. The CLS
// token is prepended; a "<slot>" word marks the slot position.
inline TokenSequence tokenize(const Vocabulary& vocab, const std::string& text) {
    TokenSequence seq;
    seq.ids.push_back(vocab.cls_id());
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) {
            const std::string word = text.substr(i, j - i);
            const int id = vocab.id_of(word);
            if (id == vocab.slot_id()) {
                if (seq.has_slot()) throw Error("tokenize: more than one slot");
                seq.slot_position = seq.length();
            }
            seq.ids.push_back(id);
        }
        i = j;
    }
    if (seq.length() > TokenSequence::kMaxLen)
        throw Error("tokenize: sequence longer than max_len");
    return seq;
}

// Prompt with exactly one placeholder, filled either by the slot token (for
// worded images) or by a class-name word (for class descriptions).
struct PromptTemplate {
    std::string name;
    std::vector<std::string> words;  // exactly one "{}" placeholder

    std::string fill(const std::string& replacement) const {
        std::string out;
        bool filled = false;
        for (const auto& w : words) {
            if (!out.empty()) out += ' ';
            if (w == "{}") {
                out += replacement;
                filled = true;
            } else {
                out += w;
            }
        }
        if (!filled) throw Error("prompt template " + name + " has no placeholder");
        return out;
    }

    std::string with_slot() const { return fill(Vocabulary::kSlot); }
    std::string with_class(const std::string& cname) const { return fill(cname); }

    // The three built-in prompts used throughout.
    static const std::vector<PromptTemplate>& builtins() {
        static const std::vector<PromptTemplate> t = {
            {"image_of", {"the", "image", "of", "a", "{}"}},
            {"photo_of", {"the", "photo", "of", "a", "{}"}},
            {"in_scene", {"{}", "in", "the", "scene"}},
        };
        return t;
    }

    // Bare placeholder: the sequence degenerates to [CLS, <content>].
    static PromptTemplate none() { return {"none", {"{}"}}; }

    // Domain-conditioned variant: the domain word is prepended.
    PromptTemplate with_domain_prefix(const std::string& domain_word) const {
        PromptTemplate out = *this;
        out.name = name + "+" + domain_word;
        out.words.insert(out.words.begin(), domain_word);
        return out;
    }
};

}  // namespace widin
