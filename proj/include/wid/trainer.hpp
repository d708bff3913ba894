// Training loops and the tab-separated run log. Every record line is
// step, loss, group_id, k, dropped_norm; header lines start with '#'.
// Plain model training logs a single record per step with group_id "-";
// compaction runs log one record per alignment group, where k is the
// current masked-dimension count of that group.
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "wid/adamw.hpp"
#include "wid/corpus.hpp"
#include "wid/distill.hpp"
#include "wid/model.hpp"

namespace wid {

class TrainLogger {
  public:
    // empty path keeps records in memory only (still readable via records())
    explicit TrainLogger(const std::string& path);
    void header(const std::string& key, const std::string& value);
    void record(int64_t step, double loss, const std::string& group_id, int64_t k,
                double dropped_norm);
    void record(int64_t step, double loss) { record(step, loss, "-", 0, 0.0); }
    void flush();

    struct Line {
        int64_t step = 0;
        double loss = 0.0;
        std::string group_id;
        int64_t k = 0;
        double dropped_norm = 0.0;
    };
    const std::vector<Line>& records() const { return records_; }

  private:
    std::ofstream out_;
    bool open_ = false;
    std::vector<Line> records_;
};

std::vector<TrainLogger::Line> read_train_log(const std::string& path);

struct TrainOptions {
    int64_t steps = 1000;
    int batch_size = 8;
    uint64_t seed = 0;
    int64_t log_interval = 10;
    // teacher for the logit-distillation baseline; loss becomes
    // (1 - kd_alpha) * hard + kd_alpha * KL(teacher || student) at kd_tau
    const ModelWeights* kd_teacher = nullptr;
    float kd_tau = 1.0f;
    float kd_alpha = 0.5f;
    std::string ckpt_path;      // empty disables checkpoints
    int64_t ckpt_interval = 0;  // extra mid-run saves every N steps when > 0
    int64_t loss_window = 100;  // trailing mean returned by train_model
};

// Runs AdamW from start_step to steps. Batches are a pure function of
// (seed, step), so resuming from a checkpoint retraces the original run.
// Returns the mean hard loss over the final loss_window steps; the logged
// loss column is always the hard task loss.
double train_model(ModelWeights& w, AdamW& opt, const CorpusData& corpus, const TrainOptions& to,
                   TrainLogger* log, int64_t start_step = 0);

void save_train_checkpoint(const std::string& path, const ModelWeights& w, const AdamW& opt);
// loads weights into a shell built from the stored config; optimizer state
// is attached to the returned model's parameters
ModelWeights load_train_checkpoint(const std::string& path, AdamW& opt);
ModelWeights load_model_checkpoint(const std::string& path);

struct DistillRunOptions {
    int64_t steps = 2000;
    int batch_size = 8;
    uint64_t seed = 0;
    int64_t log_interval = 10;
    std::string ckpt_path;
    int64_t ckpt_interval = 0;
    int64_t loss_window = 100;
};

// The compaction loop: one distill_step per step, per-group log records at
// every log interval, every schedule-event step and the final step. Returns
// the trailing mean task loss.
double run_distill(ReparamModel& m, AdamW& opt, const CorpusData& corpus, const DistillConfig& cfg,
                   const DistillRunOptions& ro, TrainLogger* log, int64_t start_step = 0);

// 'step' counts completed steps, so training resumes at that index
void save_distill_checkpoint(const std::string& path, const ReparamModel& m, const AdamW& opt,
                             const DistillConfig& cfg, int64_t step);
ReparamModel load_distill_checkpoint(const std::string& path, AdamW& opt, DistillConfig& cfg,
                                     int64_t& step);
class Checkpoint;
ReparamModel load_distill_checkpoint(const Checkpoint& ck, AdamW& opt, DistillConfig& cfg,
                                     int64_t& step);

}  // namespace wid
