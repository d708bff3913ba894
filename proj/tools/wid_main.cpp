// Command-line front end: corpus generation, teacher training, compaction,
// merging and evaluation, wired through checkpoint/config/log files so a run
// directory is self-contained. Exit codes: 0 ok, 1 config/shape, 2 I/O,
// 3 numeric.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <omp.h>
#include <string>

#include "CLI11.hpp"
#include "wid/alignment.hpp"
#include "wid/checkpoint.hpp"
#include "wid/common.hpp"
#include "wid/corpus.hpp"
#include "wid/distill.hpp"
#include "wid/eval.hpp"
#include "wid/merge.hpp"
#include "wid/runconfig.hpp"
#include "wid/trainer.hpp"

namespace fs = std::filesystem;
using namespace wid;

namespace {

void apply_thread_cap() {
    const char* env = std::getenv("WID_THREADS");
    if (!env || !*env) return;
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1)
        throw ConfigError("WID_THREADS must be a positive integer");
    omp_set_num_threads(static_cast<int>(n));
}

ModelConfig model_from(RunConfig& rc) {
    ModelConfig mc;
    mc.n_layers = rc.geti("model.layers", mc.n_layers);
    mc.d_model = rc.geti("model.d_model", mc.d_model);
    mc.n_heads = rc.geti("model.heads", mc.n_heads);
    mc.d_ff = rc.geti("model.d_ff", mc.d_ff);
    mc.vocab = rc.geti("model.vocab", mc.vocab);
    mc.max_seq = rc.geti("model.max_seq", mc.max_seq);
    mc.n_segments = rc.geti("model.segments", mc.n_segments);
    mc.attn_inner = rc.geti("model.attn_inner", mc.attn_inner);
    mc.ln_eps = rc.getf("model.ln_eps", mc.ln_eps);
    std::string mode = rc.gets("model.mode", "mlm");
    if (mode == "mlm") mc.mode = ModelMode::EncoderMLM;
    else if (mode == "causal") mc.mode = ModelMode::DecoderCausal;
    else throw ConfigError("model.mode must be mlm or causal, got '" + mode + "'");
    std::string ln = rc.gets("model.ln", "standard");
    if (ln == "standard") mc.ln_mode = LnMode::Standard;
    else if (ln == "identity") mc.ln_mode = LnMode::Identity;
    else throw ConfigError("model.ln must be standard or identity, got '" + ln + "'");
    return mc;
}

OptimConfig optim_from(RunConfig& rc) {
    OptimConfig oc;
    oc.lr_base = rc.getf("optim.lr_base", oc.lr_base);
    oc.lr_compactor = rc.getf("optim.lr_compactor", oc.lr_compactor);
    oc.beta1 = rc.getf("optim.beta1", oc.beta1);
    oc.beta2 = rc.getf("optim.beta2", oc.beta2);
    oc.eps = rc.getf("optim.eps", oc.eps);
    oc.weight_decay_base = rc.getf("optim.weight_decay_base", oc.weight_decay_base);
    oc.weight_decay_compactor = rc.getf("optim.weight_decay_compactor", oc.weight_decay_compactor);
    oc.warmup_steps = rc.geti("optim.warmup_steps", oc.warmup_steps);
    return oc;
}

GradientPolicy policy_from(RunConfig& rc) {
    std::string p = rc.gets("distill.policy", "leader");
    if (p == "leader") return GradientPolicy::LeaderOnly;
    if (p == "tiedsum") return GradientPolicy::TiedSum;
    throw ConfigError("distill.policy must be leader or tiedsum, got '" + p + "'");
}

Strategy strategy_from(RunConfig& rc) {
    std::string s = rc.gets("distill.strategy", "dimreduce");
    if (s == "dimreduce") return Strategy::DimReduce;
    if (s == "headdrop") return Strategy::HeadDrop;
    throw ConfigError("distill.strategy must be dimreduce or headdrop, got '" + s + "'");
}

const char* policy_name(GradientPolicy p) {
    return p == GradientPolicy::LeaderOnly ? "leader" : "tiedsum";
}
const char* strategy_name(Strategy s) {
    return s == Strategy::DimReduce ? "dimreduce" : "headdrop";
}

int cmd_gen_corpus(const std::string& out_dir, int vocab, int64_t seqs, int64_t heldout_seqs,
                   int len, uint64_t seed, float copy_prob, int copy_offset) {
    CorpusConfig cc;
    cc.vocab = vocab;
    cc.seq_len = len;
    cc.n_seqs = seqs;
    cc.seed = seed;
    cc.copy_prob = copy_prob;
    cc.copy_offset = copy_offset;
    cc.start_index = 0;
    fs::create_directories(out_dir);
    CorpusData train = generate_corpus(cc);
    save_corpus(out_dir + "/train.bin", train);
    cc.n_seqs = heldout_seqs;
    cc.start_index = seqs;  // disjoint window of the same stream
    CorpusData heldout = generate_corpus(cc);
    save_corpus(out_dir + "/heldout.bin", heldout);
    std::cout << "wrote " << train.n_seqs << " train and " << heldout.n_seqs
              << " heldout sequences to " << out_dir << "\n";
    return 0;
}

int cmd_train_teacher(const std::string& config_path, const std::string& corpus_path,
                      const std::string& out_dir, bool resume) {
    RunConfig rc = RunConfig::from_file(config_path);
    ModelConfig mc = model_from(rc);
    OptimConfig oc = optim_from(rc);
    TrainOptions to;
    to.steps = rc.geti64("train.steps", to.steps);
    to.batch_size = rc.geti("train.batch", to.batch_size);
    to.seed = rc.getu64("train.seed", to.seed);
    to.log_interval = rc.geti64("train.log_interval", to.log_interval);
    to.ckpt_interval = rc.geti64("train.ckpt_interval", to.ckpt_interval);
    to.loss_window = rc.geti64("train.loss_window", to.loss_window);
    rc.assert_consumed();
    mc.validate();

    fs::create_directories(out_dir);
    rc.write_resolved(out_dir + "/config.resolved");
    CorpusData corpus = load_corpus(corpus_path);
    to.ckpt_path = out_dir + "/model.ckpt";

    ModelWeights w;
    AdamW opt(oc);
    int64_t start = 0;
    if (resume && fs::exists(to.ckpt_path)) {
        w = load_train_checkpoint(to.ckpt_path, opt);
        if (!(w.cfg == mc)) throw ConfigError("checkpoint config does not match " + config_path);
        start = opt.step_count();
    } else {
        w = ModelWeights::init(mc, to.seed);
        opt.attach(w.param_ptrs());
    }
    if (start >= to.steps) {
        std::cout << "already trained to step " << start << "\n";
        return 0;
    }
    TrainLogger log(out_dir + "/train.log");
    log.header("version", kVersionString);
    log.header("command", "train-teacher");
    log.header("mode", mc.mode == ModelMode::DecoderCausal ? "causal" : "mlm");
    log.header("gradient_policy", "none");
    log.header("seed", std::to_string(to.seed));
    log.header("steps", std::to_string(to.steps));
    double final_loss = train_model(w, opt, corpus, to, &log, start);
    std::cout << "final training loss " << final_loss << " (trailing mean), checkpoint "
              << to.ckpt_path << "\n";
    return 0;
}

int cmd_distill(const std::string& teacher_path, const std::string& config_path,
                const std::string& corpus_path, const std::string& out_reparam,
                std::string log_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    DistillConfig dc;
    dc.target.d = rc.req_i("distill.d");
    dc.target.attn_inner = rc.geti("distill.attn_inner", 0);
    dc.target.ff = rc.req_i("distill.ff");
    dc.strategy = strategy_from(rc);
    dc.policy = policy_from(rc);
    dc.interval = rc.geti("distill.interval", dc.interval);
    dc.events = rc.geti("distill.events", dc.events);
    dc.penalty_scale = rc.getf("distill.penalty_scale", dc.penalty_scale);
    dc.optim = optim_from(rc);
    DistillRunOptions ro;
    ro.steps = rc.geti64("distill.steps", ro.steps);
    ro.batch_size = rc.geti("distill.batch", ro.batch_size);
    ro.seed = rc.getu64("distill.seed", ro.seed);
    ro.log_interval = rc.geti64("distill.log_interval", ro.log_interval);
    ro.ckpt_interval = rc.geti64("distill.ckpt_interval", ro.ckpt_interval);
    ro.loss_window = rc.geti64("distill.loss_window", ro.loss_window);
    rc.assert_consumed();

    fs::path out = fs::path(out_reparam);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::path run_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    rc.write_resolved((run_dir / "config.resolved").string());
    if (log_path.empty()) log_path = (run_dir / "distill.log").string();

    CorpusData corpus = load_corpus(corpus_path);
    ModelWeights teacher = load_model_checkpoint(teacher_path);
    ReparamModel m = ReparamModel::wrap(std::move(teacher));
    configure_schedule(m, dc);
    AdamW opt(dc.optim);
    opt.attach(m.trainable_params());
    ro.ckpt_path = out_reparam;

    TrainLogger log(log_path);
    log.header("version", kVersionString);
    log.header("command", "distill");
    log.header("strategy", strategy_name(dc.strategy));
    log.header("gradient_policy", policy_name(dc.policy));
    log.header("interval", std::to_string(dc.interval));
    log.header("events", std::to_string(dc.events));
    log.header("seed", std::to_string(ro.seed));
    log.header("steps", std::to_string(ro.steps));
    double final_loss = run_distill(m, opt, corpus, dc, ro, &log);
    std::cout << "final task loss " << final_loss << " (trailing mean), checkpoint " << out_reparam
              << "\n";
    return 0;
}

int cmd_merge(const std::string& reparam_path, const std::string& out_student,
              const std::string& report_path) {
    Checkpoint ck = Checkpoint::load(reparam_path);
    if (!ck.has("distill.words") || !ck.has("mask.width"))
        throw ConfigError("not a compaction checkpoint (missing masks): " + reparam_path);
    AdamW opt(OptimConfig{});
    DistillConfig dc;
    int64_t step = 0;
    ReparamModel m = load_distill_checkpoint(ck, opt, dc, step);
    MergeReport rep;
    ModelWeights student = build_student(m, dc.strategy, rep);

    Checkpoint out;
    write_model(out, student);
    Tensor total = Tensor::zeros({1});
    total.data[0] = static_cast<float>(rep.total_dropped);
    out.put("merge.total_dropped", total);
    if (!rep.head_map.empty()) {
        std::vector<int32_t> flat;
        for (const auto& layer : rep.head_map)
            for (int h : layer) flat.push_back(h);
        out.put_i32("merge.head_map",
                    {static_cast<int>(rep.head_map.size()),
                     static_cast<int>(rep.head_map[0].size())},
                    flat);
    }
    fs::path outp(out_student);
    if (outp.has_parent_path()) fs::create_directories(outp.parent_path());
    out.save(out_student);

    if (!report_path.empty()) {
        std::ofstream rf(report_path, std::ios::binary | std::ios::trunc);
        if (!rf) throw IoError("cannot write report: " + report_path);
        rf << "# leftover mass of deleted compactor rows/columns, per wrapped weight\n";
        for (size_t i = 0; i < rep.slot_names.size(); ++i)
            rf << rep.slot_names[i] << "\t" << rep.dropped_norm[i] << "\n";
        rf << "total\t" << rep.total_dropped << "\n";
        for (size_t l = 0; l < rep.head_map.size(); ++l) {
            rf << "head_map.layer" << l;
            for (int h : rep.head_map[l]) rf << "\t" << h;
            rf << "\n";
        }
    }
    std::cout << "student " << student.cfg.d_model << "d/" << student.cfg.n_heads << "h/"
              << student.cfg.d_ff << "ff, " << student.param_count() << " params, dropped mass "
              << rep.total_dropped << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& corpus_path,
             const std::string& teacher_path, const std::string& report_path, int batch_size,
             int n_batches, uint64_t seed) {
    Checkpoint ck = Checkpoint::load(model_path);
    ModelWeights model = read_model(ck);
    CorpusData corpus = load_corpus(corpus_path);

    EvalReport rep;
    rep.run_name = fs::path(model_path).stem().string();
    rep.cfg = model.cfg;
    rep.seed = seed;
    rep.heldout = heldout_eval(model, corpus, batch_size, seed);
    if (ck.has("merge.total_dropped"))
        rep.total_dropped_norm = static_cast<double>(ck.tensor("merge.total_dropped").data.at(0));
    if (!teacher_path.empty()) {
        ModelWeights teacher = load_model_checkpoint(teacher_path);
        bool assignment = teacher.cfg.n_heads != model.cfg.n_heads;
        rep.divergence =
            attention_divergence(model, teacher, corpus, batch_size, n_batches, seed, assignment);
        rep.has_divergence = true;
    }
    std::string txt = report_path.empty() ? "eval.txt" : report_path;
    fs::path tp(txt);
    if (tp.has_parent_path()) fs::create_directories(tp.parent_path());
    rep.write(txt, txt + ".csv");
    std::cout << rep.text();
    return 0;
}

int cmd_report(const std::string& log_path, const std::string& out_path) {
    std::vector<TrainLogger::Line> lines = read_train_log(log_path);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write CSV: " + out_path);
    out << "step,loss,group_id,k,dropped_norm\n";
    for (const auto& l : lines)
        out << l.step << "," << l.loss << "," << l.group_id << "," << l.k << "," << l.dropped_norm
            << "\n";
    if (!out) throw IoError("short write: " + out_path);
    std::cout << "wrote " << lines.size() << " rows to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weight-inherited distillation of toy transformers"};
    app.set_version_flag("--version", kVersionString);
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic train/heldout corpus");
    std::string gen_out = "corpus";
    int gen_vocab = 512, gen_len = 16, gen_offset = 5;
    int64_t gen_seqs = 20000, gen_heldout = 2000;
    uint64_t gen_seed = 1;
    float gen_copy = 0.25f;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--vocab", gen_vocab, "vocabulary size incl. 4 reserved ids");
    gen->add_option("--seqs", gen_seqs, "training sequences");
    gen->add_option("--heldout-seqs", gen_heldout, "held-out sequences");
    gen->add_option("--len", gen_len, "sequence length");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--copy-prob", gen_copy, "probability of a planted copy token");
    gen->add_option("--copy-offset", gen_offset, "how far back copies reach");

    auto* tt = app.add_subcommand("train-teacher", "train a base model");
    std::string tt_config, tt_corpus, tt_out = "teacher";
    bool tt_resume = false;
    tt->add_option("--config", tt_config, "run config file")->required();
    tt->add_option("--corpus", tt_corpus, "training corpus file")->required();
    tt->add_option("--out", tt_out, "output directory");
    tt->add_flag("--resume", tt_resume, "continue from the directory's checkpoint");

    auto* di = app.add_subcommand("distill", "train compactors against a teacher");
    std::string di_teacher, di_config, di_corpus, di_out = "distill/reparam.ckpt", di_log;
    di->add_option("--teacher", di_teacher, "teacher checkpoint")->required();
    di->add_option("--config", di_config, "run config file")->required();
    di->add_option("--corpus", di_corpus, "training corpus file")->required();
    di->add_option("--out-reparam", di_out, "re-parameterized checkpoint path");
    di->add_option("--log", di_log, "training log path (default: next to the checkpoint)");

    auto* mg = app.add_subcommand("merge", "fold compactors into a compact student");
    std::string mg_reparam, mg_out = "student.ckpt", mg_report;
    mg->add_option("--reparam", mg_reparam, "re-parameterized checkpoint")->required();
    mg->add_option("--out-student", mg_out, "student checkpoint path");
    mg->add_option("--report", mg_report, "dropped-mass report path");

    auto* ev = app.add_subcommand("eval", "held-out metrics and attention comparison");
    std::string ev_model, ev_corpus, ev_teacher, ev_report = "eval.txt";
    int ev_batch = 16, ev_batches = 8;
    uint64_t ev_seed = 0;
    ev->add_option("--model", ev_model, "model checkpoint")->required();
    ev->add_option("--corpus", ev_corpus, "held-out corpus file")->required();
    ev->add_option("--teacher", ev_teacher, "teacher checkpoint for attention divergence");
    ev->add_option("--report", ev_report, "report path (CSV lands next to it)");
    ev->add_option("--batch", ev_batch, "evaluation batch size");
    ev->add_option("--batches", ev_batches, "batches for attention divergence");
    ev->add_option("--seed", ev_seed, "evaluation seed");

    auto* rp = app.add_subcommand("report", "convert a training log to CSV");
    std::string rp_log, rp_out = "log.csv";
    rp->add_option("--log", rp_log, "training log file")->required();
    rp->add_option("--out", rp_out, "CSV output path");

    try {
        app.parse(argc, argv);
        apply_thread_cap();
        if (gen->parsed())
            return cmd_gen_corpus(gen_out, gen_vocab, gen_seqs, gen_heldout, gen_len, gen_seed,
                                  gen_copy, gen_offset);
        if (tt->parsed()) return cmd_train_teacher(tt_config, tt_corpus, tt_out, tt_resume);
        if (di->parsed()) return cmd_distill(di_teacher, di_config, di_corpus, di_out, di_log);
        if (mg->parsed()) return cmd_merge(mg_reparam, mg_out, mg_report);
        if (ev->parsed())
            return cmd_eval(ev_model, ev_corpus, ev_teacher, ev_report, ev_batch, ev_batches,
                            ev_seed);
        if (rp->parsed()) return cmd_report(rp_log, rp_out);
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DimError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const IndexError& e) {
        std::cerr << "index error: " << e.what() << "\n";
        return 1;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    }
}
