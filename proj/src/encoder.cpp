#include "bigen/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace bigen {

void EncoderConfig::validate(int dim) const {
    if (layers < 0) throw UsageError("encoder layers must be >= 0, got " + std::to_string(layers));
    if (heads < 1 || dim < 1 || dim % heads != 0) {
        throw UsageError("width " + std::to_string(dim) + " must be a positive multiple of heads = " +
                         std::to_string(heads));
    }
    if (ttca && !kr) throw UsageError("invalid encoder flags: ttca requires kr");
    if (kr && !vtca) throw UsageError("invalid encoder flags: kr requires vtca (selection uses layer-1 attention)");
    if (ws && !ttca) throw UsageError("invalid encoder flags: ws requires ttca (nothing to share with)");
    if (vtca && layers < 1) throw UsageError("vtca needs at least one layer");
    if (ttca && layers < 2) throw UsageError("ttca runs L-1 layers and needs L >= 2, got L = " + std::to_string(layers));
}

EncoderConfig EncoderConfig::ablation_row(int row) {
    EncoderConfig c;
    c.ws = c.wsl = c.vtca = c.kr = c.ttca = false;
    switch (row) {
        case 6: c.ws = true; [[fallthrough]];
        case 5: c.ttca = true; [[fallthrough]];
        case 4: c.kr = true; [[fallthrough]];
        case 3: c.wsl = true; [[fallthrough]];
        case 2: c.vtca = true; [[fallthrough]];
        case 1: break;
        default: throw UsageError("ablation row must be in 1..6, got " + std::to_string(row));
    }
    return c;
}

std::string EncoderConfig::flags_string() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += '+';
        s += name;
    };
    add(ws, "ws");
    add(wsl, "wsl");
    add(vtca, "vtca");
    add(kr, "kr");
    add(ttca, "ttca");
    return s.empty() ? "baseline" : s;
}

CaseInput case_input(const Case& c) { return {c.visual, c.retrieval, c.patch_count()}; }

template <class T>
BiModalEncoder<T>::BiModalEncoder(ParamFactory<T>& f, const EncoderConfig& config, int dim, int input_dim,
                                  int bank_dim)
    : config_(config), dim_(dim), input_dim_(input_dim), bank_dim_(bank_dim) {
    config_.validate(dim);
    if (input_dim < 1) throw UsageError("input feature width must be positive");
    const std::size_t d = dim, hidden = 4 * d;
    const int L = config_.layers;
    patch_w_ = f.matrix("enc.patch.w", input_dim, d);
    patch_b_ = f.vector("enc.patch.b", d, T(0));

    if (!config_.vtca) {
        for (int l = 0; l < L; ++l) {
            if (config_.wsl && l > 0) {
                self_.push_back(self_.front());
            } else {
                self_.push_back(make_cross_attn(f, "enc.self" + std::to_string(l), d, hidden, false));
            }
        }
        return;
    }

    visual_token_ = f.token("enc.v0", d);
    for (int l = 0; l < L; ++l) {
        if (config_.wsl && l > 0) {
            visual_.push_back(visual_.front());
        } else {
            visual_.push_back(make_cross_attn(f, "enc.vtca" + std::to_string(l), d, hidden, true));
        }
    }
    if (config_.kr) {
        if (bank_dim < 1) throw UsageError("knowledge width must be positive when kr is on");
        know_w_ = f.matrix("enc.know.w", bank_dim, d);
        know_b_ = f.vector("enc.know.b", d, T(0));
    }
    if (config_.ttca) {
        textual_token_ = f.token("enc.t0", d);
        for (int l = 0; l + 1 < L; ++l) {
            if (config_.ws) {
                textual_.push_back(visual_[l]);
            } else if (config_.wsl && l > 0) {
                textual_.push_back(textual_.front());
            } else {
                textual_.push_back(make_cross_attn(f, "enc.ttca" + std::to_string(l), d, hidden, true));
            }
        }
    }
}

namespace {

template <class T>
std::vector<double> to_double(const Tensor<T>& t) {
    return std::vector<double>(t.values().begin(), t.values().end());
}

template <class T>
Tensor<T> to_tensor(std::span<const float> values, std::size_t rows, std::size_t cols) {
    return Tensor<T>({rows, cols}, std::vector<T>(values.begin(), values.end()));
}

}  // namespace

template <class T>
EncoderOutput<T> BiModalEncoder<T>::encode(Graph<T>& g, const CaseInput& in, const KnowledgeBank* bank,
                                           const RetrievalConfig& retrieval) const {
    const std::size_t M = in.patches;
    if (M == 0) throw DataError("encode: case has no patches (M = 0)");
    if (in.visual.size() != M * static_cast<std::size_t>(input_dim_)) {
        throw DataError("encode: visual features hold " + std::to_string(in.visual.size()) + " values, expected " +
                        std::to_string(M) + " x " + std::to_string(input_dim_));
    }
    auto x = linear(g, patch_w_, patch_b_, g.constant(to_tensor<T>(in.visual, M, input_dim_)));
    if (!config_.vtca) return encode_baseline(g, x);

    EncoderOutput<T> out;
    const int L = config_.layers;
    const int heads = config_.heads;

    auto first = cross_attn_layer(g, *visual_[0], g.param(visual_token_), x, heads);
    Var<T> v = first.out;
    out.vtca_applications = 1;
    out.layer1_attention = to_double(first.weights);
    // Renormalise in double so float rounding never trips the selection contract.
    double total = 0;
    for (double a : out.layer1_attention) total += a;
    for (double& a : out.layer1_attention) a /= total;
    out.visual_attention.push_back(out.layer1_attention);

    Var<T> r;
    if (config_.kr) {
        if (bank == nullptr) throw DataError("encode: kr is on but no knowledge bank was given");
        if (in.retrieval.size() != M * static_cast<std::size_t>(bank_dim_)) {
            throw DataError("encode: retrieval embeddings hold " + std::to_string(in.retrieval.size()) +
                            " values, expected " + std::to_string(M) + " x " + std::to_string(bank_dim_));
        }
        // Retrieval consumes attention values only; R enters the graph as a constant.
        out.knowledge = retrieve_all(in.retrieval, bank_dim_, out.layer1_attention, *bank, retrieval);
        const auto& rk = *out.knowledge;
        r = linear(g, know_w_, know_b_,
                   g.constant(to_tensor<T>(rk.features, rk.region_count(), bank_dim_)));
    }

    Var<T> t = config_.ttca ? g.param(textual_token_) : Var<T>{};
    for (int l = 1; l < L; ++l) {
        auto vis = cross_attn_layer(g, *visual_[l], v, x, heads);
        v = vis.out;
        ++out.vtca_applications;
        out.visual_attention.push_back(to_double(vis.weights));
        if (config_.ttca) {
            auto txt = cross_attn_layer(g, *textual_[l - 1], t, r, heads);
            t = txt.out;
            ++out.ttca_applications;
            out.textual_attention.push_back(to_double(txt.weights));
        }
    }

    out.visual_token = v;
    if (config_.ttca) {
        out.textual_token = t;
        std::vector<Var<T>> parts{v, t};
        out.memory = ops::concat_rows<T>(parts);
    } else if (config_.kr) {
        std::vector<Var<T>> parts{v, ops::mean(r, 0)};
        out.memory = ops::concat_rows<T>(parts);
    } else {
        out.memory = v;
    }
    return out;
}

template <class T>
EncoderOutput<T> BiModalEncoder<T>::encode_baseline(Graph<T>& g, Var<T> x) const {
    EncoderOutput<T> out;
    const std::size_t M = x.rows();
    Var<T> h = x;
    for (std::size_t l = 0; l < self_.size(); ++l) {
        Tensor<T> w;
        h = attention_sublayer(g, self_[l]->attn, h, Var<T>{}, config_.heads, nullptr, &w);
        h = feed_forward_sublayer(g, self_[l]->ffn, h);
        // Column means of a row-stochastic matrix form a distribution over patches.
        std::vector<double> col(M, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) col[j] += double(w(i, j)) / double(M);
        out.visual_attention.push_back(std::move(col));
    }
    out.layer1_attention = out.visual_attention.empty() ? std::vector<double>(M, 1.0 / double(M))
                                                        : out.visual_attention.front();
    out.memory = h;
    return out;
}

template <class T>
std::vector<std::shared_ptr<CrossAttnParams<T>>> BiModalEncoder<T>::branch_layer_sets() const {
    std::vector<std::shared_ptr<CrossAttnParams<T>>> out;
    auto add = [&](const auto& layers) {
        for (const auto& p : layers)
            if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    };
    add(visual_);
    add(textual_);
    add(self_);
    return out;
}

template <class T>
std::size_t BiModalEncoder<T>::branch_parameter_count() const {
    std::set<const Parameter<T>*> seen;
    std::size_t n = 0;
    auto count = [&](const ParamPtr<T>& p) {
        if (seen.insert(p.get()).second) n += p->numel();
    };
    auto count_norm = [&](const LayerNormParams<T>& ln) {
        count(ln.gain);
        count(ln.bias);
    };
    for (const auto& s : branch_layer_sets()) {
        count_norm(s->attn.norm_query);
        if (s->attn.norm_memory) count_norm(*s->attn.norm_memory);
        for (const auto* p : {&s->attn.wq, &s->attn.bq, &s->attn.wk, &s->attn.bk, &s->attn.wv, &s->attn.bv,
                              &s->attn.wo, &s->attn.bo})
            count(*p);
        count_norm(s->ffn.norm);
        for (const auto* p : {&s->ffn.w1, &s->ffn.b1, &s->ffn.w2, &s->ffn.b2}) count(*p);
    }
    return n;
}

template class BiModalEncoder<float>;
template class BiModalEncoder<double>;

void write_heatmap_pgm(const std::filesystem::path& path, std::span<const double> attention, int grid_rows,
                       int grid_cols) {
    if (grid_rows < 1 || grid_cols < 1) throw DataError("heatmap: grid must be at least 1 x 1");
    const std::size_t cells = static_cast<std::size_t>(grid_rows) * grid_cols;
    if (attention.empty() || attention.size() > cells) {
        throw DataError("heatmap: " + std::to_string(attention.size()) + " attention values for a " +
                        std::to_string(grid_rows) + " x " + std::to_string(grid_cols) + " grid");
    }
    const auto [lo, hi] = std::minmax_element(attention.begin(), attention.end());
    const double span = *hi - *lo;
    std::string pixels(cells, '\0');
    for (std::size_t i = 0; i < attention.size(); ++i) {
        const double u = span > 0 ? (attention[i] - *lo) / span : 1.0;
        pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("heatmap: cannot open '" + path.string() + "' for writing");
    out << "P5\n" << grid_cols << ' ' << grid_rows << "\n255\n";
    out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw DataError("heatmap: write failed for '" + path.string() + "'");
}

}  // namespace bigen
