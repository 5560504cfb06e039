#include "shiftadapt/checkpoint.hpp"

#include <cstring>

#include "binio.hpp"

namespace shiftadapt {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'A', 'C', 'K'};

std::uint32_t kind_code(AuxKind k) { return k == AuxKind::classification ? 0 : 1; }
std::uint32_t loss_code(AuxLoss l) { return l == AuxLoss::cross_entropy ? 0 : 1; }

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    if (ckpt.params.values.empty() || ckpt.params.layout.empty())
        throw DataError("save_checkpoint: parameter set is empty");
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    binio::put_u32(buf, 1);

    const ModelConfig& m = ckpt.model;
    binio::put_i32(buf, m.input_dim);
    binio::put_u32(buf, std::uint32_t(m.extractor_widths.size()));
    for (int w : m.extractor_widths) binio::put_i32(buf, w);
    binio::put_u32(buf, std::uint32_t(m.head_widths.size()));
    for (int w : m.head_widths) binio::put_i32(buf, w);
    binio::put_f64(buf, m.dropout_rate);
    binio::put_i32(buf, m.num_primary_classes);
    binio::put_u32(buf, 0); // activation: relu

    binio::put_u32(buf, std::uint32_t(ckpt.aux.size()));
    for (const auto& a : ckpt.aux) {
        binio::put_str(buf, a.task_id);
        binio::put_u32(buf, kind_code(a.kind));
        binio::put_i32(buf, a.classes);
        binio::put_u32(buf, loss_code(a.loss));
        binio::put_f64(buf, a.huber_delta);
        binio::put_f64(buf, a.beta);
    }

    binio::put_u32(buf, std::uint32_t(ckpt.params.layout.size()));
    for (const auto& seg : ckpt.params.layout) {
        binio::put_str(buf, seg.name);
        binio::put_u32(buf, std::uint32_t(seg.layers.size()));
        for (const auto& l : seg.layers) {
            binio::put_i32(buf, l.out);
            binio::put_i32(buf, l.in);
        }
        binio::put_u64(buf, seg.offset);
        binio::put_u64(buf, seg.size);
    }
    binio::put_u64(buf, ckpt.params.seed);
    binio::put_u64(buf, ckpt.params.values.size());
    for (double v : ckpt.params.values) binio::put_f64(buf, v);

    binio::put_u32(buf, std::uint32_t(ckpt.provenance.size()));
    for (const auto& [k, v] : ckpt.provenance) {
        binio::put_str(buf, k);
        binio::put_str(buf, v);
    }
    binio::write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string buf = binio::read_file(path);
    binio::Reader r{buf};
    r.need(4);
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    r.pos = 4;
    if (r.u32() != 1) throw DataError("unsupported checkpoint version: " + path);

    Checkpoint c;
    c.model.input_dim = r.i32();
    c.model.extractor_widths.resize(r.u32());
    for (int& w : c.model.extractor_widths) w = r.i32();
    c.model.head_widths.resize(r.u32());
    for (int& w : c.model.head_widths) w = r.i32();
    c.model.dropout_rate = r.f64();
    c.model.num_primary_classes = r.i32();
    if (r.u32() != 0) throw DataError("unknown activation code in checkpoint: " + path);
    c.model.activation = Activation::relu;

    std::uint32_t naux = r.u32();
    c.aux.resize(naux);
    for (auto& a : c.aux) {
        a.task_id = r.str();
        std::uint32_t k = r.u32();
        if (k > 1) throw DataError("unknown aux kind in checkpoint: " + path);
        a.kind = k == 0 ? AuxKind::classification : AuxKind::regression;
        a.classes = r.i32();
        std::uint32_t l = r.u32();
        if (l > 1) throw DataError("unknown aux loss in checkpoint: " + path);
        a.loss = l == 0 ? AuxLoss::cross_entropy : AuxLoss::huber;
        a.huber_delta = r.f64();
        a.beta = r.f64();
    }

    std::uint32_t nseg = r.u32();
    c.params.layout.resize(nseg);
    for (auto& seg : c.params.layout) {
        seg.name = r.str();
        seg.layers.resize(r.u32());
        for (auto& l : seg.layers) {
            l.out = r.i32();
            l.in = r.i32();
        }
        seg.offset = r.u64();
        seg.size = r.u64();
    }
    c.params.seed = r.u64();
    std::uint64_t nvals = r.u64();
    c.params.values.resize(nvals);
    for (double& v : c.params.values) v = r.f64();

    std::uint32_t nprov = r.u32();
    for (std::uint32_t i = 0; i < nprov; ++i) {
        std::string k = r.str();
        c.provenance[k] = r.str();
    }
    if (r.pos != buf.size()) throw DataError("trailing bytes in checkpoint file: " + path);

    // cheap structural check so a truncated-but-parseable file cannot sneak in
    std::size_t total = 0;
    for (const auto& seg : c.params.layout) {
        if (seg.offset != total) throw DataError("inconsistent segment offsets in checkpoint: " + path);
        std::size_t sz = 0;
        for (const auto& l : seg.layers) sz += l.size();
        if (sz != seg.size) throw DataError("inconsistent segment sizes in checkpoint: " + path);
        total += seg.size;
    }
    if (total != c.params.values.size())
        throw DataError("weight count does not match layout in checkpoint: " + path);
    return c;
}

} // namespace shiftadapt
