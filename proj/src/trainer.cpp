#include "wid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "wid/alignment.hpp"
#include "wid/checkpoint.hpp"
#include "wid/common.hpp"
#include "wid/ops.hpp"

namespace wid {

TrainLogger::TrainLogger(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open log file: " + path);
    open_ = true;
}

void TrainLogger::header(const std::string& key, const std::string& value) {
    if (open_) out_ << "# " << key << ": " << value << "\n";
}

void TrainLogger::record(int64_t step, double loss, const std::string& group_id, int64_t k,
                         double dropped_norm) {
    records_.push_back({step, loss, group_id, k, dropped_norm});
    if (!open_) return;
    out_ << step << "\t" << loss << "\t" << group_id << "\t" << k << "\t" << dropped_norm << "\n";
}

void TrainLogger::flush() {
    if (open_) out_.flush();
}

std::vector<TrainLogger::Line> read_train_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open log file: " + path);
    std::vector<TrainLogger::Line> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        TrainLogger::Line rec;
        if (!(is >> rec.step >> rec.loss >> rec.group_id >> rec.k >> rec.dropped_norm))
            throw IoError("malformed log line: " + line);
        out.push_back(rec);
    }
    return out;
}

namespace {

double trailing_mean(const std::vector<double>& xs, int64_t window) {
    if (xs.empty()) return 0.0;
    size_t n = std::min<size_t>(xs.size(), static_cast<size_t>(std::max<int64_t>(1, window)));
    double s = std::accumulate(xs.end() - static_cast<ptrdiff_t>(n), xs.end(), 0.0);
    return s / static_cast<double>(n);
}

Batch step_batch(const CorpusData& corpus, const ModelConfig& cfg, int batch_size, uint64_t seed,
                 int64_t step) {
    return cfg.mode == ModelMode::DecoderCausal
               ? make_causal_batch(corpus, batch_size, seed, step)
               : make_mlm_batch(corpus, batch_size, seed, step);
}

}  // namespace

double train_model(ModelWeights& w, AdamW& opt, const CorpusData& corpus, const TrainOptions& to,
                   TrainLogger* log, int64_t start_step) {
    if (to.steps <= start_step) throw ConfigError("training step budget already spent");
    if (to.kd_teacher) {
        if (to.kd_tau <= 0.0f) throw ConfigError("distillation temperature must be positive");
        if (to.kd_teacher->cfg.vocab != w.cfg.vocab)
            throw ConfigError("teacher and student vocabularies differ");
        if (to.kd_teacher->cfg.mode != w.cfg.mode)
            throw ConfigError("teacher and student modes differ");
    }
    Activations acts, tacts;
    Tensor dlogits;
    std::vector<double> losses;
    for (int64_t step = start_step; step < to.steps; ++step) {
        Batch batch = step_batch(corpus, w.cfg, to.batch_size, to.seed, step);
        w.zero_grads();
        double hard;
        if (to.kd_teacher) {
            forward(w, batch, acts);
            dlogits = Tensor::zeros(acts.logits.shape);
            hard = ops::masked_cross_entropy(acts.logits, batch.targets, dlogits);
            forward(*to.kd_teacher, batch, tacts);
            Tensor dkd = Tensor::zeros(acts.logits.shape);
            std::vector<uint8_t> sel(batch.targets.size());
            for (size_t i = 0; i < sel.size(); ++i) sel[i] = batch.targets[i] >= 0 ? 1 : 0;
            ops::kd_kl_loss(tacts.logits, acts.logits, to.kd_tau, sel, dkd);
            float a = to.kd_alpha;
            for (size_t i = 0; i < dlogits.numel(); ++i)
                dlogits.data[i] = (1.0f - a) * dlogits.data[i] + a * dkd.data[i];
            backward(w, batch, acts, dlogits);
        } else {
            hard = model_loss(w, batch, acts, dlogits);
            backward(w, batch, acts, dlogits);
        }
        opt.step();
        losses.push_back(hard);
        if (log && (step % to.log_interval == 0 || step + 1 == to.steps)) log->record(step, hard);
        if (!to.ckpt_path.empty() && to.ckpt_interval > 0 && (step + 1) % to.ckpt_interval == 0 &&
            step + 1 < to.steps)
            save_train_checkpoint(to.ckpt_path, w, opt);
    }
    if (log) log->flush();
    if (!to.ckpt_path.empty()) save_train_checkpoint(to.ckpt_path, w, opt);
    return trailing_mean(losses, to.loss_window);
}

void save_train_checkpoint(const std::string& path, const ModelWeights& w, const AdamW& opt) {
    Checkpoint ck;
    write_model(ck, w);
    write_optim(ck, opt);
    ck.save(path);
}

ModelWeights load_train_checkpoint(const std::string& path, AdamW& opt) {
    Checkpoint ck = Checkpoint::load(path);
    ModelWeights w = read_model(ck);
    opt.attach(w.param_ptrs());
    read_optim(ck, opt);
    return w;
}

ModelWeights load_model_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    return read_model(ck);
}

double run_distill(ReparamModel& m, AdamW& opt, const CorpusData& corpus, const DistillConfig& cfg,
                   const DistillRunOptions& ro, TrainLogger* log, int64_t start_step) {
    if (ro.steps <= start_step) throw ConfigError("distillation step budget already spent");
    std::vector<double> losses;
    for (int64_t step = start_step; step < ro.steps; ++step) {
        Batch batch = step_batch(corpus, m.base.cfg, ro.batch_size, ro.seed, step);
        StepStats st = distill_step(m, opt, batch, cfg, step);
        losses.push_back(st.loss);
        bool event_step = step % cfg.interval == 0;
        if (log && (step % ro.log_interval == 0 || event_step || step + 1 == ro.steps))
            for (const GroupStat& g : st.groups)
                log->record(step, st.loss, g.name, g.popcount, g.dropped_norm);
        if (!ro.ckpt_path.empty() && ro.ckpt_interval > 0 && (step + 1) % ro.ckpt_interval == 0 &&
            step + 1 < ro.steps)
            save_distill_checkpoint(ro.ckpt_path, m, opt, cfg, step + 1);
    }
    if (log) log->flush();
    if (!ro.ckpt_path.empty()) save_distill_checkpoint(ro.ckpt_path, m, opt, cfg, ro.steps);
    return trailing_mean(losses, ro.loss_window);
}

namespace {

std::vector<int32_t> distill_words(const DistillConfig& cfg) {
    return {static_cast<int32_t>(cfg.strategy), static_cast<int32_t>(cfg.policy), cfg.interval,
            cfg.events, cfg.target.d, cfg.target.attn_inner, cfg.target.ff};
}

DistillConfig distill_from_words(const std::vector<int32_t>& w, const std::vector<float>& f) {
    if (w.size() != 7 || f.size() != 9) throw IoError("checkpoint: malformed distill config");
    DistillConfig cfg;
    cfg.strategy = static_cast<Strategy>(w[0]);
    cfg.policy = static_cast<GradientPolicy>(w[1]);
    cfg.interval = w[2];
    cfg.events = w[3];
    cfg.target.d = w[4];
    cfg.target.attn_inner = w[5];
    cfg.target.ff = w[6];
    cfg.penalty_scale = f[0];
    cfg.optim.lr_base = f[1];
    cfg.optim.lr_compactor = f[2];
    cfg.optim.beta1 = f[3];
    cfg.optim.beta2 = f[4];
    cfg.optim.eps = f[5];
    cfg.optim.weight_decay_base = f[6];
    cfg.optim.weight_decay_compactor = f[7];
    cfg.optim.warmup_steps = static_cast<int>(f[8]);
    return cfg;
}

std::vector<float> distill_floats(const DistillConfig& cfg) {
    return {cfg.penalty_scale,
            cfg.optim.lr_base,
            cfg.optim.lr_compactor,
            cfg.optim.beta1,
            cfg.optim.beta2,
            cfg.optim.eps,
            cfg.optim.weight_decay_base,
            cfg.optim.weight_decay_compactor,
            static_cast<float>(cfg.optim.warmup_steps)};
}

}  // namespace

void save_distill_checkpoint(const std::string& path, const ReparamModel& m, const AdamW& opt,
                             const DistillConfig& cfg, int64_t step) {
    Checkpoint ck;
    write_model(ck, m.base);
    write_optim(ck, opt);
    ck.put_i32("distill.words", {7}, distill_words(cfg));
    Tensor f = Tensor::zeros({9});
    f.data = distill_floats(cfg);
    ck.put("distill.floats", f);
    ck.put_i32("distill.step", {2},
               {static_cast<int32_t>(step >> 32), static_cast<int32_t>(step & 0xffffffff)});
    for (const AlignmentGroup& g : m.groups) {
        const Slot& leader = m.slots[static_cast<size_t>(g.leader)];
        ck.put("comp." + g.name, leader.comp.value);
        ck.put_u8("mask." + g.name, {g.dim}, g.mask);
        ck.put_i32("sched." + g.name, {1}, {g.k});
    }
    ck.save(path);
}

ReparamModel load_distill_checkpoint(const std::string& path, AdamW& opt, DistillConfig& cfg,
                                     int64_t& step) {
    Checkpoint ck = Checkpoint::load(path);
    return load_distill_checkpoint(ck, opt, cfg, step);
}

ReparamModel load_distill_checkpoint(const Checkpoint& ck, AdamW& opt, DistillConfig& cfg,
                                     int64_t& step) {
    cfg = distill_from_words(ck.i32("distill.words"), ck.tensor("distill.floats").data);
    std::vector<int32_t> s = ck.i32("distill.step");
    if (s.size() != 2) throw IoError("checkpoint: malformed distill.step");
    step = (static_cast<int64_t>(s[0]) << 32) | static_cast<int64_t>(static_cast<uint32_t>(s[1]));
    ReparamModel m = ReparamModel::wrap(read_model(ck));
    configure_schedule(m, cfg);
    for (AlignmentGroup& g : m.groups) {
        Slot& leader = m.slots[static_cast<size_t>(g.leader)];
        Tensor comp = ck.tensor("comp." + g.name);
        if (!comp.same_shape(leader.comp.value))
            throw IoError("checkpoint: compactor shape mismatch for " + g.name);
        leader.comp.value = std::move(comp);
        const CheckpointEntry& me = ck.entry("mask." + g.name);
        if (me.dtype != "u8" || static_cast<int>(me.u8.size()) != g.dim)
            throw IoError("checkpoint: mask mismatch for " + g.name);
        g.mask = me.u8;
        std::vector<int32_t> kv = ck.i32("sched." + g.name);
        if (kv.size() != 1) throw IoError("checkpoint: malformed schedule state");
        g.k = kv[0];
    }
    broadcast_leaders(m);
    opt = AdamW(cfg.optim);
    opt.attach(m.trainable_params());
    read_optim(ck, opt);
    return m;
}

}  // namespace wid
