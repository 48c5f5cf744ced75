#include "vbstream/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace vbs::io {

namespace {

constexpr char kMagic[8] = {'V', 'B', 'S', 'C', 'K', 'P', 'T', '\n'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string real_text(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ArrayDir {
    std::vector<std::pair<std::string, const Vec*>> entries;
    std::deque<Vec> owned; // deque: growth must not move earlier arrays

    void add(const std::string& name, const Vec* data) { entries.emplace_back(name, data); }
    void add_owned(const std::string& name, Vec data) {
        owned.push_back(std::move(data));
        entries.emplace_back(name, &owned.back());
    }
};

// Reader state over the header text.
struct HeaderReader {
    std::istringstream in;
    std::size_t line_no = 0;

    explicit HeaderReader(const std::string& text) : in(text) {}

    std::string next_line() {
        std::string line;
        if (!std::getline(in, line))
            throw DataError("checkpoint integrity error: header truncated");
        ++line_no;
        return line;
    }

    std::string expect_key(const std::string& key) {
        const std::string line = next_line();
        const std::string prefix = key + " = ";
        if (line.rfind(prefix, 0) != 0)
            throw DataError("checkpoint integrity error: expected '" + key + "' in header");
        return line.substr(prefix.size());
    }

    double real(const std::string& key) { return std::stod(expect_key(key)); }
    std::uint64_t count(const std::string& key) { return std::stoull(expect_key(key)); }
};

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto& ledger = ckpt.ledger;
    if (ledger.scope.stream_active)
        throw StateError("save_checkpoint: stream in progress (checkpoint at boundaries only)");
    const auto& model = ledger.model;
    const std::size_t k = model.cluster_count();
    const std::size_t d = model.dim();

    std::ostringstream h;
    h << "config_begin\n" << serialize_config(ckpt.config) << "config_end\n";
    h << "stream_index = " << ledger.stream_index << '\n';
    h << "alpha0 = " << real_text(model.alpha0) << '\n';
    h << "base.beta0 = " << real_text(model.prior.beta0) << '\n';
    h << "base.nu0 = " << real_text(model.prior.nu0) << '\n';
    h << "truncation_max = " << model.truncation_max << '\n';
    h << "latent_dim = " << d << '\n';
    h << "data_dim = " << ledger.codec.data_dim << '\n';
    h << "clusters = " << k << '\n';
    h << "adam.step = " << ledger.opt.step << '\n';
    h << "adam.learning_rate = " << real_text(ledger.opt.learning_rate) << '\n';
    h << "adam.lr_decay = " << real_text(ledger.opt.lr_decay) << '\n';
    h << "rng = " << ledger.rng.serialize() << '\n';

    auto layer_shapes = [](const vae::MlpParams& mlp) {
        std::string s;
        for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(mlp.layers[i].weights.rows()) + ':' +
                 std::to_string(mlp.layers[i].weights.cols());
        }
        return s;
    };
    h << "encoder_layers = " << layer_shapes(ledger.codec.encoder) << '\n';
    h << "decoder_layers = " << layer_shapes(ledger.codec.decoder) << '\n';

    h << "report_lines = " << ckpt.report_lines.size() << '\n';
    for (const auto& line : ckpt.report_lines) h << line << '\n';

    // Assemble the array directory in canonical order.
    ArrayDir dir;
    dir.add("base.m0", &model.prior.m0);
    dir.add("base.w0", &model.prior.w0.data());
    {
        Vec pm(k * d), pb(k), pn(k), pl(k * d * d), pa1(k), pa2(k);
        Vec qm(k * d), qb(k), qn(k), ql(k * d * d), qe1(k), qe2(k);
        Vec sn(k), sz(k * d), szz(k * d * d);
        for (std::size_t c = 0; c < k; ++c) {
            const auto& pr = model.cluster_priors[c];
            const auto& po = model.clusters[c];
            const auto& st = ledger.scope.overall.per_cluster[c];
            for (std::size_t i = 0; i < d; ++i) {
                pm[c * d + i] = pr.m0[i];
                qm[c * d + i] = po.m[i];
                sz[c * d + i] = st.sum_z[i];
            }
            for (std::size_t i = 0; i < d * d; ++i) {
                pl[c * d * d + i] = pr.w0_chol.lower().data()[i];
                ql[c * d * d + i] = po.w_chol.lower().data()[i];
                szz[c * d * d + i] = st.sum_zz.data()[i];
            }
            pb[c] = pr.beta0;
            pn[c] = pr.nu0;
            pa1[c] = pr.stick_a1;
            pa2[c] = pr.stick_a2;
            qb[c] = po.beta;
            qn[c] = po.nu;
            qe1[c] = po.eta1;
            qe2[c] = po.eta2;
            sn[c] = st.n;
        }
        dir.add_owned("prior.m0", std::move(pm));
        dir.add_owned("prior.beta0", std::move(pb));
        dir.add_owned("prior.nu0", std::move(pn));
        dir.add_owned("prior.chol", std::move(pl));
        dir.add_owned("prior.stick_a1", std::move(pa1));
        dir.add_owned("prior.stick_a2", std::move(pa2));
        dir.add_owned("post.m", std::move(qm));
        dir.add_owned("post.beta", std::move(qb));
        dir.add_owned("post.nu", std::move(qn));
        dir.add_owned("post.chol", std::move(ql));
        dir.add_owned("post.eta1", std::move(qe1));
        dir.add_owned("post.eta2", std::move(qe2));
        dir.add_owned("overall.n", std::move(sn));
        dir.add_owned("overall.sum_z", std::move(sz));
        dir.add_owned("overall.sum_zz", std::move(szz));
    }
    auto add_mlp = [&dir](const std::string& tag, const vae::MlpParams& mlp,
                          const std::vector<vae::Layer>& m1, const std::vector<vae::Layer>& m2) {
        for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
            const std::string suffix = std::to_string(i);
            dir.add(tag + ".w." + suffix, &mlp.layers[i].weights.data());
            dir.add(tag + ".b." + suffix, &mlp.layers[i].biases);
            dir.add(tag + ".m1w." + suffix, &m1[i].weights.data());
            dir.add(tag + ".m1b." + suffix, &m1[i].biases);
            dir.add(tag + ".m2w." + suffix, &m2[i].weights.data());
            dir.add(tag + ".m2b." + suffix, &m2[i].biases);
        }
    };
    add_mlp("enc", ledger.codec.encoder, ledger.opt.first_moment.encoder,
            ledger.opt.second_moment.encoder);
    add_mlp("dec", ledger.codec.decoder, ledger.opt.first_moment.decoder,
            ledger.opt.second_moment.decoder);

    h << "array_count = " << dir.entries.size() << '\n';
    for (const auto& [name, data] : dir.entries)
        h << "array " << name << ' ' << data->size() << '\n';

    const std::string header = h.str();
    std::string bytes;
    bytes.append(kMagic, sizeof(kMagic));
    put_u32(bytes, kCheckpointVersion);
    put_u64(bytes, header.size());
    bytes += header;
    for (const auto& [name, data] : dir.entries) {
        const auto* raw = reinterpret_cast<const char*>(data->data());
        bytes.append(raw, data->size() * sizeof(double));
    }
    put_u64(bytes, fnv1a(bytes));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string bytes = buffer.str();

    if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8)
        throw DataError("checkpoint integrity error: file too short");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);

    std::size_t off = sizeof(kMagic);
    auto get_u32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
        return v;
    };
    auto get_u64 = [&](std::size_t at) {
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
        return v;
    };

    const std::uint32_t version = get_u32(off);
    off += 4;
    if (version != kCheckpointVersion)
        throw DataError("checkpoint version mismatch: file has version " +
                        std::to_string(version) + ", this build reads version " +
                        std::to_string(kCheckpointVersion));

    const std::uint64_t stored_sum = get_u64(bytes.size() - 8);
    if (fnv1a(bytes.substr(0, bytes.size() - 8)) != stored_sum)
        throw DataError("checkpoint integrity error: checksum mismatch");

    const std::uint64_t header_len = get_u64(off);
    off += 8;
    if (off + header_len + 8 > bytes.size())
        throw DataError("checkpoint integrity error: truncated header");
    const std::string header = bytes.substr(off, header_len);
    off += header_len;

    HeaderReader r(header);
    if (r.next_line() != "config_begin")
        throw DataError("checkpoint integrity error: missing config block");
    std::string config_text;
    while (true) {
        const std::string line = r.next_line();
        if (line == "config_end") break;
        config_text += line;
        config_text += '\n';
    }

    Checkpoint ckpt;
    ckpt.config = parse_config_text(config_text);

    const std::size_t stream_index = r.count("stream_index");
    const double alpha0 = r.real("alpha0");
    const double base_beta0 = r.real("base.beta0");
    const double base_nu0 = r.real("base.nu0");
    const std::size_t truncation_max = r.count("truncation_max");
    const std::size_t d = r.count("latent_dim");
    const std::size_t data_dim = r.count("data_dim");
    const std::size_t k = r.count("clusters");
    const std::uint64_t adam_step = r.count("adam.step");
    const double adam_lr = r.real("adam.learning_rate");
    const double adam_decay = r.real("adam.lr_decay");
    const std::string rng_state = r.expect_key("rng");

    auto parse_shapes = [&](const std::string& text) {
        std::vector<std::pair<std::size_t, std::size_t>> shapes;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::size_t colon = item.find(':');
            if (colon == std::string::npos)
                throw DataError("checkpoint integrity error: bad layer shape " + item);
            shapes.emplace_back(std::stoull(item.substr(0, colon)),
                                std::stoull(item.substr(colon + 1)));
        }
        return shapes;
    };
    const auto enc_shapes = parse_shapes(r.expect_key("encoder_layers"));
    const auto dec_shapes = parse_shapes(r.expect_key("decoder_layers"));

    const std::size_t report_count = r.count("report_lines");
    for (std::size_t i = 0; i < report_count; ++i) ckpt.report_lines.push_back(r.next_line());

    const std::size_t array_count = r.count("array_count");
    std::vector<std::pair<std::string, std::size_t>> directory;
    for (std::size_t i = 0; i < array_count; ++i) {
        std::istringstream line(r.next_line());
        std::string tag, name;
        std::size_t len = 0;
        line >> tag >> name >> len;
        if (tag != "array") throw DataError("checkpoint integrity error: bad array directory");
        directory.emplace_back(name, len);
    }

    std::size_t expected_bytes = 0;
    for (const auto& [name, len] : directory) expected_bytes += len * sizeof(double);
    if (off + expected_bytes + 8 != bytes.size())
        throw DataError("checkpoint integrity error: array payload length mismatch");

    std::map<std::string, Vec> arrays;
    for (const auto& [name, len] : directory) {
        Vec data(len);
        std::memcpy(data.data(), bytes.data() + off, len * sizeof(double));
        off += len * sizeof(double);
        arrays.emplace(name, std::move(data));
    }
    auto fetch = [&](const std::string& name, std::size_t expect_len) -> Vec& {
        auto it = arrays.find(name);
        if (it == arrays.end() || it->second.size() != expect_len)
            throw DataError("checkpoint integrity error: missing array " + name);
        return it->second;
    };

    // Rebuild the model.
    dpmm::DpmmModel model;
    model.alpha0 = alpha0;
    model.truncation_max = truncation_max;
    model.prior.m0 = fetch("base.m0", d);
    model.prior.w0 = Matrix(d, d, fetch("base.w0", d * d));
    model.prior.beta0 = base_beta0;
    model.prior.nu0 = base_nu0;

    const Vec& pm = fetch("prior.m0", k * d);
    const Vec& pb = fetch("prior.beta0", k);
    const Vec& pn = fetch("prior.nu0", k);
    const Vec& pl = fetch("prior.chol", k * d * d);
    const Vec& pa1 = fetch("prior.stick_a1", k);
    const Vec& pa2 = fetch("prior.stick_a2", k);
    const Vec& qm = fetch("post.m", k * d);
    const Vec& qb = fetch("post.beta", k);
    const Vec& qn = fetch("post.nu", k);
    const Vec& ql = fetch("post.chol", k * d * d);
    const Vec& qe1 = fetch("post.eta1", k);
    const Vec& qe2 = fetch("post.eta2", k);
    for (std::size_t c = 0; c < k; ++c) {
        dpmm::ClusterPrior pr;
        pr.m0.assign(pm.begin() + c * d, pm.begin() + (c + 1) * d);
        pr.beta0 = pb[c];
        pr.nu0 = pn[c];
        pr.w0_chol = CholeskyFactor::from_lower(
            Matrix(d, d, Vec(pl.begin() + c * d * d, pl.begin() + (c + 1) * d * d)));
        pr.stick_a1 = pa1[c];
        pr.stick_a2 = pa2[c];
        dpmm::ClusterPosterior po;
        po.m.assign(qm.begin() + c * d, qm.begin() + (c + 1) * d);
        po.beta = qb[c];
        po.nu = qn[c];
        po.w_chol = CholeskyFactor::from_lower(
            Matrix(d, d, Vec(ql.begin() + c * d * d, ql.begin() + (c + 1) * d * d)));
        po.eta1 = qe1[c];
        po.eta2 = qe2[c];
        model.cluster_priors.push_back(std::move(pr));
        model.clusters.push_back(std::move(po));
    }

    // Rebuild the codec and optimizer.
    vae::LatentCodec codec;
    codec.latent_dim = d;
    codec.data_dim = data_dim;
    codec.encoder.activation =
        ckpt.config.activation == "softplus" ? vae::Activation::Softplus : vae::Activation::Tanh;
    codec.decoder.activation = codec.encoder.activation;

    vae::AdamState opt;
    opt.step = adam_step;
    opt.learning_rate = adam_lr;
    opt.lr_decay = adam_decay;

    auto load_mlp = [&](const std::string& tag, vae::MlpParams& mlp,
                        std::vector<vae::Layer>& m1, std::vector<vae::Layer>& m2,
                        const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const auto [rows, cols] = shapes[i];
            const std::string suffix = std::to_string(i);
            vae::Layer layer, mm1, mm2;
            layer.weights = Matrix(rows, cols, fetch(tag + ".w." + suffix, rows * cols));
            layer.biases = fetch(tag + ".b." + suffix, rows);
            mm1.weights = Matrix(rows, cols, fetch(tag + ".m1w." + suffix, rows * cols));
            mm1.biases = fetch(tag + ".m1b." + suffix, rows);
            mm2.weights = Matrix(rows, cols, fetch(tag + ".m2w." + suffix, rows * cols));
            mm2.biases = fetch(tag + ".m2b." + suffix, rows);
            mlp.layers.push_back(std::move(layer));
            m1.push_back(std::move(mm1));
            m2.push_back(std::move(mm2));
        }
    };
    load_mlp("enc", codec.encoder, opt.first_moment.encoder, opt.second_moment.encoder,
             enc_shapes);
    load_mlp("dec", codec.decoder, opt.first_moment.decoder, opt.second_moment.decoder,
             dec_shapes);
    codec.validate();

    // Rebuild the statistics scope.
    stream::StreamLedger ledger;
    ledger.model = std::move(model);
    ledger.codec = std::move(codec);
    ledger.opt = std::move(opt);
    ledger.stream_index = stream_index;
    ledger.rng.deserialize(rng_state);
    ledger.scope.ever_started = true;
    ledger.scope.overall = dpmm::SuffStats::zeros(k, d);
    const Vec& sn = fetch("overall.n", k);
    const Vec& sz = fetch("overall.sum_z", k * d);
    const Vec& szz = fetch("overall.sum_zz", k * d * d);
    for (std::size_t c = 0; c < k; ++c) {
        auto& st = ledger.scope.overall.per_cluster[c];
        st.n = sn[c];
        st.sum_z.assign(sz.begin() + c * d, sz.begin() + (c + 1) * d);
        st.sum_zz = Matrix(d, d, Vec(szz.begin() + c * d * d, szz.begin() + (c + 1) * d * d));
    }
    ckpt.ledger = std::move(ledger);
    return ckpt;
}

} // namespace vbs::io
