#include "bigen/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "bigen/vocab.hpp"

namespace bigen {

void ModelConfig::validate() const {
    if (dim < 1) throw UsageError("model width d must be positive");
    if (input_dim < 1 || bank_dim < 1) throw UsageError("feature widths must be positive");
    if (vocab_size < Vocab::kSpecialCount + 1) throw UsageError("vocabulary is too small");
    if (decoder_layers < 1) throw UsageError("decoder needs at least one layer");
    if (max_len < 1) throw UsageError("max_len must be >= 1");
    encoder.validate(dim);
    retrieval.validate();
}

std::string ModelConfig::to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "dim = " << dim << '\n'
      << "input_dim = " << input_dim << '\n'
      << "bank_dim = " << bank_dim << '\n'
      << "vocab_size = " << vocab_size << '\n'
      << "decoder_layers = " << decoder_layers << '\n'
      << "max_len = " << max_len << '\n'
      << "seed = " << seed << '\n'
      << "layers = " << encoder.layers << '\n'
      << "heads = " << encoder.heads << '\n'
      << "ws = " << encoder.ws << '\n'
      << "wsl = " << encoder.wsl << '\n'
      << "vtca = " << encoder.vtca << '\n'
      << "kr = " << encoder.kr << '\n'
      << "ttca = " << encoder.ttca << '\n'
      << "k = " << retrieval.k << '\n'
      << "m = " << retrieval.m << '\n'
      << "v = " << retrieval.v << '\n';
    return o.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("model config: line without '=': " + line);
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw DataError("model config: missing field '" + key + "'");
        return it->second;
    };
    auto num = [&](const std::string& key) {
        try {
            return std::stoll(get(key));
        } catch (const std::logic_error&) {
            throw DataError("model config: field '" + key + "' is not an integer");
        }
    };
    ModelConfig c;
    c.dim = static_cast<int>(num("dim"));
    c.input_dim = static_cast<int>(num("input_dim"));
    c.bank_dim = static_cast<int>(num("bank_dim"));
    c.vocab_size = static_cast<int>(num("vocab_size"));
    c.decoder_layers = static_cast<int>(num("decoder_layers"));
    c.max_len = static_cast<int>(num("max_len"));
    c.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
    c.encoder.layers = static_cast<int>(num("layers"));
    c.encoder.heads = static_cast<int>(num("heads"));
    c.encoder.ws = num("ws") != 0;
    c.encoder.wsl = num("wsl") != 0;
    c.encoder.vtca = num("vtca") != 0;
    c.encoder.kr = num("kr") != 0;
    c.encoder.ttca = num("ttca") != 0;
    try {
        c.retrieval.k = std::stod(get("k"));
    } catch (const std::logic_error&) {
        throw DataError("model config: field 'k' is not a number");
    }
    c.retrieval.m = static_cast<int>(num("m"));
    c.retrieval.v = static_cast<int>(num("v"));
    return c;
}

void ModelConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write model config '" + path.string() + "'");
    out << to_text();
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read model config '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return from_text(s.str());
}

template <class T>
BiGenModel<T>::BiGenModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    factory_ = std::make_unique<ParamFactory<T>>(config_.seed);
    encoder_ = std::make_unique<BiModalEncoder<T>>(*factory_, config_.encoder, config_.dim, config_.input_dim,
                                                   config_.bank_dim);
    decoder_ = std::make_unique<ReportDecoder<T>>(*factory_, config_.dim, config_.decoder_layers,
                                                  config_.encoder.heads, config_.vocab_size);
    params_ = factory_->created();
}

template <class T>
std::size_t BiGenModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->numel();
    return n;
}

template <class T>
ModelForward<T> BiGenModel<T>::forward(Graph<T>& g, const CaseInput& in, const KnowledgeBank* bank,
                                       std::span<const int> ids) const {
    if (ids.size() < 2) throw DataError("forward: target needs BOS and at least one more token");
    if (ids.front() != Vocab::kBos) throw DataError("forward: target must begin with BOS");
    ModelForward<T> f;
    f.encoded = encoder_->encode(g, in, bank, config_.retrieval);
    f.logits = decoder_->forward(g, f.encoded.memory, ids.first(ids.size() - 1));
    f.loss = ops::cross_entropy(f.logits, ids.subspan(1), Vocab::kPad);
    return f;
}

template <class T>
DecodeLimits BiGenModel<T>::limits() const {
    return {Vocab::kBos, Vocab::kEos, config_.max_len, {Vocab::kPad, Vocab::kBos}};
}

template <class T>
Hypothesis BiGenModel<T>::generate(const CaseInput& in, const KnowledgeBank* bank, int beam) const {
    Graph<T> g(false);
    auto enc = encoder_->encode(g, in, bank, config_.retrieval);
    const Tensor<T>& memory = enc.memory.value();
    return beam == 1 ? decoder_->greedy(memory, limits()) : decoder_->beam(memory, beam, limits());
}

template <class T>
std::vector<NamedTensor> BiGenModel<T>::state() const {
    std::vector<NamedTensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back({p->name, p->value.template cast<float>()});
    return out;
}

template <class T>
void BiGenModel<T>::load_state(const std::vector<NamedTensor>& entries) {
    if (entries.size() != params_.size()) {
        throw DataError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                        std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& p = *params_[i];
        if (entries[i].name != p.name) {
            throw DataError("checkpoint entry " + std::to_string(i) + " is '" + entries[i].name + "', expected '" +
                            p.name + "'");
        }
        if (entries[i].value.shape() != p.value.shape()) {
            throw DataError("checkpoint tensor '" + p.name + "' has shape " + shape_str(entries[i].value.shape()) +
                            ", expected " + shape_str(p.value.shape()));
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) params_[i]->value = entries[i].value.template cast<T>();
}

template class BiGenModel<float>;
template class BiGenModel<double>;

}  // namespace bigen
