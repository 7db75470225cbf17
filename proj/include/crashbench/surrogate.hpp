#pragma once
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crashbench/autodiff.hpp"
#include "crashbench/datastore.hpp"

namespace crashbench {

// --- learning samples ---

struct LearningSample {
    std::string case_id;
    ad::Tensor x0;                                  // N x 3, mm
    std::vector<std::array<std::uint32_t, 2>> edges; // node indices
    std::vector<int> part;                          // dense part labels, N
    std::vector<int> comp;                          // component labels, N
    std::vector<double> tau;                        // per-node thickness, mm
    std::vector<double> xi;                         // normalized design
    std::vector<ad::Tensor> u;                      // n target frames, N x 3 (frame 0 excluded)
    std::vector<std::uint8_t> mask;                 // optional retained-node mask (empty = all)

    int n_nodes() const { return x0.rows; }
    int n_frames() const { return static_cast<int>(u.size()); }
};

// part_id -> component name; names are indexed alphabetically, unmapped parts
// hash into the C buckets.
std::vector<int> component_map(const std::vector<std::uint32_t>& part_ids,
                               const std::map<std::uint32_t, std::string>& table, int c_count);

struct InterfaceGraph {
    int components = 0;
    std::set<std::pair<int, int>> edges;  // k < k'
    // per ordered pair (k, k'): nodes of component k touching a cross edge to k'
    std::map<std::pair<int, int>, std::set<int>> interface_nodes;
};

InterfaceGraph interface_graph(const std::vector<std::array<std::uint32_t, 2>>& edges,
                               const std::vector<int>& comp);

// Frame subsample stride >= 1; thinning keeps every stride-th target frame.
LearningSample build_sample(const CaseBundle& b, int frame_stride = 1);

// --- model ---

struct CrashSolverConfig {
    int latent = 32;
    int slices = 4;          // encoder slice tokens S
    int enc_layers = 1;
    int global_layers = 1;
    int heads = 2;
    int part_emb = 8;
    int pos_dim = 12;
    int contact_tokens = 4;  // K
    int mp_rounds = 1;
    int dec_hidden = 64;
    int frames = 0;          // 0 = inferred from the first sample
    int components = 2;      // C
    int parts = 4;           // part-embedding rows P
    int xi_dim = 7;
    double tau_scale = 1.0;  // campaign median thickness
};

void validate(const CrashSolverConfig& c);
CrashSolverConfig surrogate_config_from_json_text(const std::string& text);
std::string surrogate_config_to_json_text(const CrashSolverConfig& c);

struct ParamTensor {
    std::string name;
    ad::Tensor value;
    ad::Tensor m, v;  // optimizer moments
};

struct ForwardTrace {
    ad::Tensor assignment_rowsums;  // N x 1, should be ~1
    ad::Tensor z;                   // C x latent component summaries
};

class CrashSolverModel {
  public:
    CrashSolverConfig config;
    std::vector<ParamTensor> params;
    std::uint64_t init_seed = 0;

    // zero_final_layer keeps the decoder output layer at zero so the initial
    // prediction is identically zero displacement.
    static CrashSolverModel init(const CrashSolverConfig& cfg, std::uint64_t seed,
                                 bool zero_final_layer = true);

    std::size_t param_count() const;
    ParamTensor* find(const std::string& name);

    // Predicted displacement frames (n tensors of N x 3, mm).
    std::vector<ad::Tensor> forward(const LearningSample& s, ForwardTrace* trace = nullptr) const;

    // Builds the forward graph on the given tape and returns the loss ref;
    // leaf refs for every parameter are reported for gradient readout.
    ad::Tape::Ref build_loss(ad::Tape& tape, const LearningSample& s,
                             std::vector<ad::Tape::Ref>& param_refs) const;

    void save(const std::filesystem::path& path) const;
    static CrashSolverModel load(const std::filesystem::path& path);
};

// Mean over frames/nodes/axes of squared displacement error (mm^2).
double surrogate_loss(const std::vector<ad::Tensor>& pred, const std::vector<ad::Tensor>& target);

// --- training ---

struct TrainSchedule {
    int epochs = 100;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::optional<long> max_steps;  // optimizer-step budget across epochs
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;  // 1-based; 0 = initialization
};

struct TrainingDiverged : std::runtime_error {
    int epoch;
    long step;
    TrainingDiverged(int epoch_, long step_, const std::string& what_)
        : std::runtime_error(what_), epoch(epoch_), step(step_) {}
};

// argmin with earliest-index tie break, 1-based epoch indexing
int best_epoch(const std::vector<double>& val_losses);

TrainResult train(CrashSolverModel& model, const std::vector<LearningSample>& train_set,
                  const std::vector<LearningSample>& val_set, const TrainSchedule& sched);

// Max relative error between reverse-mode and central finite-difference
// gradients over >= n_probes randomly chosen parameter entries.
double grad_check(const CrashSolverModel& model, const LearningSample& s, double eps,
                  int n_probes = 50, std::uint64_t seed = 7);

// --- tabular baselines ---

struct Standardizer {
    std::vector<double> mean, stddev;
    void fit(const std::vector<std::vector<double>>& x);
    std::vector<double> transform(const std::vector<double>& row) const;
};

struct RidgeModel {
    Standardizer scaler;
    std::vector<double> intercept;              // per target
    std::vector<std::vector<double>> weights;   // targets x features
};

RidgeModel ridge_fit(const std::vector<std::vector<double>>& x,
                     const std::vector<std::vector<double>>& y, double alpha);
std::vector<double> ridge_predict(const RidgeModel& m, const std::vector<double>& query);

std::vector<double> knn_predict(const std::vector<std::vector<double>>& x,
                                const std::vector<std::vector<double>>& y,
                                const std::vector<double>& query, std::size_t k);

}  // namespace crashbench
