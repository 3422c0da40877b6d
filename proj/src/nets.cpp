#include "augda/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace augda::nn {

// ---------------------------------------------------------------------------
// Configs

SegmenterConfig SegmenterConfig::desk() { return {}; }

SegmenterConfig SegmenterConfig::paper() {
    SegmenterConfig c;
    c.depth = 4;
    c.base_filters = 16;
    c.max_filters = 256;
    return c;
}

SegmenterConfig SegmenterConfig::tiny() {
    SegmenterConfig c;
    c.depth = 2;
    c.base_filters = 4;
    c.max_filters = 16;
    c.dropout = 0.0;
    return c;
}

int SegmenterConfig::filters(int level) const {
    long f = base_filters;
    for (int i = 0; i < level && f < max_filters; ++i) f *= 2;
    return static_cast<int>(std::min<long>(f, max_filters));
}

namespace {

// Returns the level a tap name refers to, or -1.
int parse_tap(const std::string& name, int depth) {
    if (name == "bottleneck") return depth;
    for (const char* pre : {"enc", "dec"}) {
        if (name.rfind(pre, 0) == 0 && name.size() > 3) {
            const std::string rest = name.substr(3);
            if (rest.find_first_not_of("0123456789") != std::string::npos) return -1;
            const int lvl = std::stoi(rest);
            return lvl < depth ? lvl : -1;
        }
    }
    return -1;
}

}  // namespace

void SegmenterConfig::validate() const {
    if (depth < 1 || depth > 6) throw std::invalid_argument("SegmenterConfig: depth must be in [1,6]");
    if (base_filters < 1 || max_filters < base_filters)
        throw std::invalid_argument("SegmenterConfig: invalid filter counts");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("SegmenterConfig: dropout must be in [0,1)");
    if (!(foreground_prior > 0.0 && foreground_prior < 1.0))
        throw std::invalid_argument("SegmenterConfig: foreground prior must be in (0,1)");
    if (feature_tap.empty()) throw std::invalid_argument("SegmenterConfig: feature tap set is empty");
    for (const auto& t : feature_tap)
        if (parse_tap(t, depth) < 0) throw std::invalid_argument("SegmenterConfig: unknown feature tap '" + t + "'");
}

int SegmenterConfig::feature_channels() const {
    int c = 0;
    for (const auto& t : feature_tap) c += filters(parse_tap(t, depth));
    return c;
}

std::string SegmenterConfig::canonical() const {
    std::ostringstream os;
    os << "segmenter(depth=" << depth << ",base=" << base_filters << ",max=" << max_filters
       << ",dropout=" << dropout << ",prior=" << foreground_prior << ",tap=";
    for (const auto& t : feature_tap) os << t << ';';
    os << ')';
    return os.str();
}

std::string DiscriminatorConfig::canonical() const {
    std::ostringstream os;
    os << "discriminator(domains=" << n_domains << ",conv=";
    for (int c : conv_channels) os << c << ';';
    os << ",hidden=";
    for (int h : hidden) os << h << ';';
    os << ",dropout=" << dropout << ",slope=" << leaky_slope << ",zero_head=" << zero_head << ')';
    return os.str();
}

const ParameterSnapshot::Record* ParameterSnapshot::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Network

void Network::register_parameters(std::vector<Parameter*> params) { params_ = std::move(params); }

Parameter& Network::parameter(const std::string& name) {
    for (auto* p : params_)
        if (p->name == name) return *p;
    throw std::invalid_argument("unknown parameter '" + name + "'");
}

void Network::set_frozen(std::span<const std::string> selectors, bool frozen) {
    for (const auto& sel : selectors) {
        bool hit = false;
        for (auto* p : params_) {
            const bool match = sel == "*" || p->name == sel ||
                               (p->name.size() > sel.size() && p->name.compare(0, sel.size(), sel) == 0 &&
                                p->name[sel.size()] == '.');
            if (match) {
                p->frozen = frozen;
                hit = true;
            }
        }
        if (!hit) throw std::invalid_argument("freeze: selector '" + sel + "' matches no parameter");
    }
}

void Network::freeze(std::span<const std::string> selectors) { set_frozen(selectors, true); }
void Network::unfreeze(std::span<const std::string> selectors) { set_frozen(selectors, false); }
void Network::freeze_all() {
    for (auto* p : params_) p->frozen = true;
}
void Network::unfreeze_all() {
    for (auto* p : params_) p->frozen = false;
}
bool Network::all_frozen() const {
    for (auto* p : params_)
        if (!p->frozen) return false;
    return true;
}

void Network::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

std::size_t Network::trainable_count() const {
    std::size_t n = 0;
    for (auto* p : params_)
        if (p->trainable) n += p->value.size();
    return n;
}

ParameterSnapshot Network::snapshot() const {
    ParameterSnapshot s;
    for (const auto* p : params_)
        s.records.push_back({p->name, p->value.shape(), std::vector<double>(p->value.values().begin(), p->value.values().end()),
                             p->trainable});
    return s;
}

void Network::load(const ParameterSnapshot& snap) {
    if (snap.records.size() != params_.size())
        throw std::invalid_argument("load: snapshot has " + std::to_string(snap.records.size()) + " records, network has " +
                                    std::to_string(params_.size()));
    for (auto* p : params_) {
        const auto* r = snap.find(p->name);
        if (!r) throw std::invalid_argument("load: snapshot lacks '" + p->name + "'");
        if (r->shape != p->value.shape())
            throw std::invalid_argument("load: shape mismatch for '" + p->name + "'");
        std::copy(r->data.begin(), r->data.end(), p->value.values().begin());
    }
}

// ---------------------------------------------------------------------------
// Segmenter

namespace {

void conv_block(Sequential& s, const std::string& prefix, int cin, int cout, SeededRng& init) {
    s.add<Conv2d>(prefix + ".0", cin, cout, 3, 1, 1, init);
    s.add<BatchNorm2d>(prefix + ".1", cout);
    s.add<ReLU>();
    s.add<Conv2d>(prefix + ".3", cout, cout, 3, 1, 1, init);
    s.add<BatchNorm2d>(prefix + ".4", cout);
    s.add<ReLU>();
}

Tensor reflect_pad(const Tensor& x, int ph, int pw) {
    if (ph == 0 && pw == 0) return x;
    if (ph >= x.h() || pw >= x.w()) throw std::invalid_argument("reflect_pad: padding exceeds input size");
    Tensor y(x.n(), x.c(), x.h() + ph, x.w() + pw);
    auto refl = [](int i, int n) { return i < n ? i : 2 * n - 2 - i; };
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) y.at(n, c, i, j) = x.at(n, c, refl(i, x.h()), refl(j, x.w()));
    return y;
}

Tensor crop(const Tensor& x, int h, int w) {
    if (x.h() == h && x.w() == w) return x;
    Tensor y(x.n(), x.c(), h, w);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) y.at(n, c, i, j) = x.at(n, c, i, j);
    return y;
}

Tensor zero_extend(const Tensor& g, int h, int w) {
    if (g.h() == h && g.w() == w) return g;
    Tensor y(g.n(), g.c(), h, w);
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c)
            for (int i = 0; i < g.h(); ++i)
                for (int j = 0; j < g.w(); ++j) y.at(n, c, i, j) = g.at(n, c, i, j);
    return y;
}

}  // namespace

int Segmenter::tap_index(const std::string& name) const {
    const int lvl = parse_tap(name, cfg_.depth);
    if (name.rfind("dec", 0) == 0) return cfg_.depth + 1 + lvl;
    return lvl;
}

Segmenter::Segmenter(SegmenterConfig cfg, SeededRng& init) : cfg_(std::move(cfg)), dropout_(cfg_.dropout) {
    cfg_.validate();
    const int D = cfg_.depth;
    enc_.resize(static_cast<std::size_t>(D));
    dec_.resize(static_cast<std::size_t>(D));
    pool_.resize(static_cast<std::size_t>(D));
    up_.reserve(static_cast<std::size_t>(D));
    int cin = 1;
    for (int i = 0; i < D; ++i) {
        conv_block(enc_[static_cast<std::size_t>(i)], "enc" + std::to_string(i), cin, cfg_.filters(i), init);
        cin = cfg_.filters(i);
    }
    conv_block(bottleneck_, "bottleneck", cin, cfg_.filters(D), init);
    // Decoder levels are built deepest first so parameter order follows data flow.
    for (int i = D - 1; i >= 0; --i)
        up_.emplace_back("up" + std::to_string(i), cfg_.filters(i + 1), cfg_.filters(i), init);
    for (int i = D - 1; i >= 0; --i)
        conv_block(dec_[static_cast<std::size_t>(i)], "dec" + std::to_string(i), 2 * cfg_.filters(i), cfg_.filters(i),
                   init);
    head_.add<Conv2d>("head", cfg_.filters(0), 1, 1, 1, 0, init, 1.0);

    for (const auto& t : cfg_.feature_tap) {
        taps_.push_back(tap_index(t));
        const int lvl = parse_tap(t, D);
        tap_pool_.emplace_back(1 << (D - lvl));
    }

    std::vector<Parameter*> params;
    for (auto& s : enc_) s.collect(params);
    bottleneck_.collect(params);
    for (auto& u : up_) u.collect(params);
    for (int i = D - 1; i >= 0; --i) dec_[static_cast<std::size_t>(i)].collect(params);
    head_.collect(params);
    register_parameters(std::move(params));
    parameter("head.bias").value.fill(std::log(cfg_.foreground_prior / (1.0 - cfg_.foreground_prior)));
}

std::array<int, 4> Segmenter::feature_shape(int n, int rows, int cols) const {
    const int m = 1 << cfg_.depth;
    const int pr = (rows + m - 1) / m * m, pc = (cols + m - 1) / m * m;
    return {n, cfg_.feature_channels(), pr / m, pc / m};
}

SegmenterPass Segmenter::forward(const Tensor& x, Mode mode, SeededRng* dropout_rng) {
    if (x.c() != 1) throw std::invalid_argument("Segmenter: expected single-channel input");
    const int D = cfg_.depth;
    const int m = 1 << D;
    SegmenterPass pass;
    pass.input_shape = x.shape();
    const int ph = (m - x.h() % m) % m, pw = (m - x.w() % m) % m;
    Tensor a = reflect_pad(x, ph, pw);
    pass.padded_shape = a.shape();

    const auto uD = static_cast<std::size_t>(D);
    pass.enc.resize(uD);
    pass.dec.resize(uD);
    pass.pool.resize(uD);
    pass.up.resize(uD);
    pass.tap_pool.resize(taps_.size());
    std::vector<Tensor> skips(uD), dec_out(uD);
    for (std::size_t i = 0; i < uD; ++i) {
        skips[i] = enc_[i].forward(a, mode, pass.enc[i], nullptr);
        a = pool_[i].forward(skips[i], mode, pass.pool[i], nullptr);
        pass.skip_channels.push_back(skips[i].c());
    }
    const Tensor bott = bottleneck_.forward(a, mode, pass.bottleneck, nullptr);
    Tensor b = dropout_.forward(bott, mode, pass.dropout, dropout_rng);
    for (int i = D - 1; i >= 0; --i) {
        const auto ui = static_cast<std::size_t>(i);
        const Tensor u = up_[uD - 1 - ui].forward(b, mode, pass.up[ui], nullptr);
        b = dec_[ui].forward(concat_channels(u, skips[ui]), mode, pass.dec[ui], nullptr);
        dec_out[ui] = b;
    }
    const Tensor logits = head_.forward(b, mode, pass.head, nullptr);
    pass.logits = crop(logits, x.h(), x.w());
    pass.probs = sigmoid_.forward(pass.logits, mode, pass.sigmoid, nullptr);

    for (std::size_t t = 0; t < taps_.size(); ++t) {
        const int idx = taps_[t];
        const Tensor& src = idx < D ? skips[static_cast<std::size_t>(idx)]
                            : idx == D ? bott
                                       : dec_out[static_cast<std::size_t>(idx - D - 1)];
        Tensor pooled = tap_pool_[t].forward(src, mode, pass.tap_pool[t], nullptr);
        pass.features = t == 0 ? std::move(pooled) : concat_channels(pass.features, pooled);
    }
    return pass;
}

void Segmenter::backward(const SegmenterPass& pass, const Tensor& d_probs, const Tensor* d_features) {
    if (!d_probs.same_shape(pass.probs)) throw std::invalid_argument("Segmenter::backward: d_probs shape mismatch");
    const int D = cfg_.depth;
    const auto uD = static_cast<std::size_t>(D);

    // Per-tap gradients on each tapped map's own grid.
    std::vector<Tensor> tap_grad(uD * 2 + 1);
    if (d_features) {
        if (!d_features->same_shape(pass.features))
            throw std::invalid_argument("Segmenter::backward: d_features shape mismatch");
        Tensor rest = *d_features;
        for (std::size_t t = 0; t < taps_.size(); ++t) {
            const int ch = cfg_.filters(parse_tap(cfg_.feature_tap[t], D));
            Tensor mine, tail;
            if (t + 1 < taps_.size()) {
                split_channels(rest, ch, mine, tail);
                rest = std::move(tail);
            } else {
                mine = rest;
            }
            Tensor g = tap_pool_[t].backward(mine, pass.tap_pool[t]);
            auto& slot = tap_grad[static_cast<std::size_t>(taps_[t])];
            if (slot.size() == 0) slot = std::move(g);
            else slot += g;
        }
    }
    auto add_tap = [&](Tensor& g, int idx) {
        const auto& t = tap_grad[static_cast<std::size_t>(idx)];
        if (t.size()) g += t;
    };

    Tensor g = sigmoid_.backward(d_probs, pass.sigmoid);
    g = zero_extend(g, pass.padded_shape[2], pass.padded_shape[3]);
    g = head_.backward(g, pass.head);
    std::vector<Tensor> d_skip(uD);
    for (std::size_t ui = 0; ui < uD; ++ui) {
        add_tap(g, D + 1 + static_cast<int>(ui));
        const Tensor dc = dec_[ui].backward(g, pass.dec[ui]);
        Tensor du;
        split_channels(dc, dc.c() - pass.skip_channels[ui], du, d_skip[ui]);
        g = up_[uD - 1 - ui].backward(du, pass.up[ui]);
    }
    g = dropout_.backward(g, pass.dropout);
    add_tap(g, D);
    g = bottleneck_.backward(g, pass.bottleneck);
    for (std::size_t i = uD; i-- > 0;) {
        Tensor ds = pool_[i].backward(g, pass.pool[i]);
        ds += d_skip[i];
        add_tap(ds, static_cast<int>(i));
        g = enc_[i].backward(ds, pass.enc[i]);
    }
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(DiscriminatorConfig cfg, std::array<int, 3> feature_shape, SeededRng& init)
    : cfg_(std::move(cfg)), feature_shape_(feature_shape) {
    if (cfg_.n_domains < 2) throw std::invalid_argument("Discriminator: need at least two domains");
    int c = feature_shape[0], h = feature_shape[1], w = feature_shape[2];
    int idx = 0;
    for (int out : cfg_.conv_channels) {
        const std::string p = "conv" + std::to_string(idx++);
        auto& conv = body_.add<Conv2d>(p, c, out, 3, 2, 1, init);
        body_.add<BatchNorm2d>(p + ".bn", out);
        body_.add<ReLU>(cfg_.leaky_slope);
        c = out;
        h = conv.out_size(h);
        w = conv.out_size(w);
    }
    body_.add<Flatten>();
    int in = c * h * w;
    idx = 0;
    for (int hid : cfg_.hidden) {
        body_.add<Linear>("fc" + std::to_string(idx++), in, hid, init);
        body_.add<ReLU>();
        body_.add<Dropout>(cfg_.dropout);
        in = hid;
    }
    body_.add<Linear>("fc" + std::to_string(idx), in, cfg_.n_domains, init, cfg_.zero_head);
    std::vector<Parameter*> params;
    body_.collect(params);
    register_parameters(std::move(params));
}

DiscriminatorPass Discriminator::forward(const Tensor& h, Mode mode, SeededRng* dropout_rng) {
    if (h.c() != feature_shape_[0] || h.h() != feature_shape_[1] || h.w() != feature_shape_[2])
        throw std::invalid_argument("Discriminator: feature shape " + shape_string(h.shape()) + " does not match [N," +
                                    std::to_string(feature_shape_[0]) + "," + std::to_string(feature_shape_[1]) + "," +
                                    std::to_string(feature_shape_[2]) + "]");
    DiscriminatorPass pass;
    pass.logits = body_.forward(h, mode, pass.caches, dropout_rng);
    return pass;
}

Tensor Discriminator::backward(const DiscriminatorPass& pass, const Tensor& d_logits) {
    return body_.backward(d_logits, pass.caches);
}

// ---------------------------------------------------------------------------
// Helpers

Tensor to_tensor(std::span<const Image2D> images) {
    if (images.empty()) throw std::invalid_argument("to_tensor: no images");
    const int H = static_cast<int>(images[0].rows()), W = static_cast<int>(images[0].cols());
    Tensor t(static_cast<int>(images.size()), 1, H, W);
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (static_cast<int>(images[n].rows()) != H || static_cast<int>(images[n].cols()) != W)
            throw std::invalid_argument("to_tensor: images differ in size");
        std::copy(images[n].pixels().values().begin(), images[n].pixels().values().end(),
                  t.sample(static_cast<int>(n)));
    }
    return t;
}

Tensor to_tensor(const Image2D& image) { return to_tensor(std::span<const Image2D>(&image, 1)); }

ProbMask to_prob_mask(const Tensor& probs, int n) {
    Grid<double> g(static_cast<std::size_t>(probs.h()), static_cast<std::size_t>(probs.w()));
    std::copy(probs.sample(n), probs.sample(n) + probs.plane(), g.values().begin());
    return ProbMask(std::move(g));
}

std::pair<ProbMask, Tensor> segment(Segmenter& f, const Image2D& image) {
    auto pass = f.forward(to_tensor(image), Mode::eval);
    return {to_prob_mask(pass.probs, 0), std::move(pass.features)};
}

std::vector<double> discriminate(Discriminator& d, const Tensor& h) {
    auto pass = d.forward(h, Mode::eval);
    return {pass.logits.values().begin(), pass.logits.values().end()};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'U', 'G', 'D', 'A', 'C', 'K', '1'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
void put_str(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
std::string get_str(std::istream& is) {
    const auto n = get<std::uint32_t>(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

void put_snapshot(std::ostream& os, const std::string& name, const ParameterSnapshot& s) {
    put_str(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.records.size()));
    for (const auto& r : s.records) {
        put_str(os, r.name);
        put<std::uint8_t>(os, r.trainable ? 1 : 0);
        for (int d : r.shape) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * sizeof(double)));
    }
}

ParameterSnapshot get_snapshot(std::istream& is) {
    ParameterSnapshot s;
    const auto n = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        ParameterSnapshot::Record r;
        r.name = get_str(is);
        r.trainable = get<std::uint8_t>(is) != 0;
        std::size_t count = 1;
        for (auto& d : r.shape) {
            d = get<std::int32_t>(is);
            if (d < 0) throw std::runtime_error("checkpoint: negative dimension");
            count *= static_cast<std::size_t>(d);
        }
        r.data.resize(count);
        is.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
        s.records.push_back(std::move(r));
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(os, ckpt.config_hash);
    put_str(os, ckpt.stage);
    put<std::uint32_t>(os, ckpt.discriminator ? 2u : 1u);
    put_snapshot(os, "segmenter", ckpt.segmenter);
    if (ckpt.discriminator) put_snapshot(os, "discriminator", *ckpt.discriminator);
    if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("load_checkpoint: bad magic");
    Checkpoint ck;
    ck.config_hash = get<std::uint64_t>(is);
    if (expected_hash && *expected_hash != ck.config_hash)
        throw std::runtime_error("load_checkpoint: config hash mismatch");
    ck.stage = get_str(is);
    const auto nets = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nets; ++i) {
        const auto name = get_str(is);
        auto snap = get_snapshot(is);
        if (name == "segmenter") ck.segmenter = std::move(snap);
        else if (name == "discriminator") ck.discriminator = std::move(snap);
        else throw std::runtime_error("load_checkpoint: unknown network '" + name + "'");
    }
    return ck;
}

}  // namespace augda::nn
