#include "isd/core_types.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace isd {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << " x ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
        throw std::invalid_argument("tensor data size " + std::to_string(values_.size()) +
                                    " does not match shape " + shape_string(shape_));
    }
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), values_);
}

std::string_view to_string(StimulusClass s) {
    switch (s) {
        case StimulusClass::Melody1: return "melody1";
        case StimulusClass::Melody2: return "melody2";
        case StimulusClass::Poem1: return "poem1";
        case StimulusClass::Poem2: return "poem2";
    }
    return "unknown";
}

StimulusClass stimulus_class_from_string(std::string_view name) {
    for (auto s : kAllStimulusClasses) {
        if (to_string(s) == name) return s;
    }
    throw std::invalid_argument("unknown stimulus class '" + std::string(name) + "'");
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (words_[i].empty()) throw std::invalid_argument("vocabulary contains an empty word");
        if (!index_.emplace(words_[i], i).second) {
            throw std::invalid_argument("duplicate vocabulary word '" + words_[i] + "'");
        }
    }
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const Vocabulary& poem_vocabulary() {
    static const Vocabulary vocab(std::vector<std::string>{
        "night",    "christmas", "house",   "creature", "mouse",    "stockings", "chimney",
        "care",     "hopes",     "children", "beds",    "visions",  "sugar",     "plums",
        "heads",    "mamma",     "kerchief", "cap",     "brains",   "winter",    "nap",
        "lawn",     "clatter",   "bed",     "matter",   "window",   "flash",     "shutters",
        "sash",     "moon",      "breast",  "snow",     "lustre",   "noon",      "objects",
        "eyes",     "sleigh",    "reindeer", "driver",  "saint",    "eagles",    "coursers",
        "name",     "dasher",    "dancer",  "prancer",  "vixen",    "comet",     "cupid",
        "donner",   "blitzen",   "porch",   "wall",     "leaves",   "hurricane", "obstacle",
        "sky",      "toys",      "roof",    "hoof",     "head",     "bound",     "fur",
        "foot",     "clothes",   "ashes",   "soot",     "bundle",   "back",      "peddler",
        "pack",     "dimples",   "nose",    "cherry",   "mouth",    "he"});
    return vocab;
}

std::vector<WordEvent> PairedSession::events_for(StimulusClass s, std::size_t trial) const {
    std::vector<WordEvent> out;
    for (const auto& e : word_events) {
        if (e.stimulus_class == s && e.trial_index == trial) out.push_back(e);
    }
    return out;
}

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

std::vector<std::string> validate_session(const PairedSession& s, const Vocabulary* vocabulary,
                                          double window_post_s) {
    std::vector<std::string> issues;
    const std::size_t n = s.imagined[0].size();
    std::optional<std::size_t> samples;
    std::optional<std::size_t> channels;
    for (auto cls : kAllStimulusClasses) {
        const auto c = index_of(cls);
        const auto name = std::string(to_string(cls));
        if (s.imagined[c].size() != n || s.listened[c].size() != n) {
            issues.push_back("trial count mismatch in " + name + ": imagined " +
                             std::to_string(s.imagined[c].size()) + ", listened " +
                             std::to_string(s.listened[c].size()) + ", expected " + std::to_string(n));
        }
        const std::size_t pairs = std::min(s.imagined[c].size(), s.listened[c].size());
        for (std::size_t i = 0; i < pairs; ++i) {
            const auto& im = s.imagined[c][i];
            const auto& li = s.listened[c][i];
            const auto where = name + " trial " + std::to_string(i);
            if (im.samples() != li.samples()) {
                issues.push_back("alignment length mismatch in " + where + ": imagined T=" +
                                 std::to_string(im.samples()) + ", listened T=" +
                                 std::to_string(li.samples()));
            }
            for (const auto* t : {&im, &li}) {
                const char* kind = (t == &im) ? "imagined" : "listened";
                if (t->channels() == 0 || t->samples() == 0) {
                    issues.push_back(std::string("empty ") + kind + " trial in " + where);
                    continue;
                }
                if (!(t->sample_rate_hz > 0.0)) {
                    issues.push_back(std::string("non-positive sample rate in ") + kind + " " + where);
                }
                if (!all_finite(t->data)) {
                    issues.push_back(std::string("non-finite sample in ") + kind + " " + where);
                }
                if (!samples) samples = t->samples();
                if (!channels) channels = t->channels();
                if (t->samples() != *samples && im.samples() == li.samples()) {
                    issues.push_back(std::string("trial length differs across trials in ") + kind +
                                     " " + where);
                }
                if (t->channels() != *channels) {
                    issues.push_back(std::string("channel count differs in ") + kind + " " + where);
                }
            }
        }
    }
    for (const auto& e : s.word_events) {
        if (!is_poem(e.stimulus_class)) {
            issues.push_back("word event '" + e.word + "' attached to a melody condition");
            continue;
        }
        if (e.onset_s < 0.0) issues.push_back("negative onset for word '" + e.word + "'");
        if (samples && !s.listened[index_of(e.stimulus_class)].empty()) {
            const double duration =
                s.listened[index_of(e.stimulus_class)].front().duration_s();
            if (e.onset_s + window_post_s > duration + 1e-9) {
                issues.push_back("word event '" + e.word + "' at " + std::to_string(e.onset_s) +
                                 " s exceeds trial duration");
            }
        }
        if (e.trial_index >= n) {
            issues.push_back("word event '" + e.word + "' refers to missing trial " +
                             std::to_string(e.trial_index));
        }
        if (vocabulary && !vocabulary->contains(e.word)) {
            issues.push_back("word '" + e.word + "' is not in the vocabulary");
        }
    }
    return issues;
}

std::string_view to_string(EncoderName e) {
    switch (e) {
        case EncoderName::Semantic: return "semantic";
        case EncoderName::Acoustic: return "acoustic";
        case EncoderName::Phonetic: return "phonetic";
        case EncoderName::Combined: return "combined";
    }
    return "unknown";
}

EncoderName encoder_from_string(std::string_view name) {
    for (auto e : {EncoderName::Semantic, EncoderName::Acoustic, EncoderName::Phonetic,
                   EncoderName::Combined}) {
        if (to_string(e) == name) return e;
    }
    throw std::invalid_argument("unknown encoder '" + std::string(name) + "'");
}

EmbeddingTable::EmbeddingTable(EncoderName encoder, std::size_t dim) : encoder_(encoder), dim_(dim) {
    if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
}

void EmbeddingTable::add(const std::string& word, std::vector<double> vec) {
    if (vec.size() != dim_) {
        throw std::invalid_argument("embedding for '" + word + "' has dimension " +
                                    std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
    }
    for (double v : vec) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite embedding value for '" + word + "'");
    }
    if (!vectors_.emplace(word, std::move(vec)).second) {
        throw std::invalid_argument("duplicate embedding row for '" + word + "'");
    }
    order_.push_back(word);
}

bool EmbeddingTable::contains(std::string_view word) const {
    return vectors_.contains(std::string(word));
}

const std::vector<double>& EmbeddingTable::at(std::string_view word) const {
    auto it = vectors_.find(std::string(word));
    if (it == vectors_.end()) {
        throw std::out_of_range("word '" + std::string(word) + "' is not in the embedding table");
    }
    return it->second;
}

std::vector<std::string> EmbeddingTable::validate(const Vocabulary& vocab) const {
    std::vector<std::string> issues;
    if (dim_ == 0) issues.emplace_back("embedding dimension is zero");
    for (const auto& w : vocab.words()) {
        if (!contains(w)) issues.push_back("missing embedding for '" + w + "'");
    }
    return issues;
}

EmbeddingTable EmbeddingTable::concatenate(const EmbeddingTable& first, const EmbeddingTable& second,
                                           EncoderName name) {
    EmbeddingTable out(name, first.dim() + second.dim());
    for (const auto& w : first.words()) {
        auto v = first.at(w);
        const auto& tail = second.at(w);
        v.insert(v.end(), tail.begin(), tail.end());
        out.add(w, std::move(v));
    }
    if (second.size() != first.size()) {
        throw std::invalid_argument("cannot concatenate embedding tables over different words");
    }
    return out;
}

void ParameterStore::insert(const std::string& name, Tensor t) {
    if (!tensors_.emplace(name, std::move(t)).second) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

}  // namespace isd
