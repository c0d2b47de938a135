#include "bodyvox/gradnet.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace bodyvox::gradnet {

using losskit::kNumTerms;

// ---- ParamSet and checkpoints -----------------------------------------------

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

int ParamSet::find(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : int(it - names.begin());
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& v : values) out.insert(out.end(), v.data.begin(), v.data.end());
  return out;
}

void ParamSet::assign(std::span<const double> flat) {
  require(flat.size() == count(), ErrorCode::dim_mismatch, "parameter vector has the wrong length");
  std::size_t off = 0;
  for (auto& v : values) {
    std::copy_n(flat.begin() + std::ptrdiff_t(off), v.size(), v.data.begin());
    off += v.size();
  }
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["dtype"] = "f64le";
  manifest["blob"] = "params.bin";
  manifest["count"] = params.count();
  manifest["tensors"] = nlohmann::json::array();
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    manifest["tensors"].push_back({{"name", params.names[i]}, {"shape", params.values[i].shape}, {"offset", off}});
    off += params.values[i].size();
  }
  const auto flat = params.flatten();
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  require(bool(blob), ErrorCode::io, "cannot write " + (dir / "params.bin").string());
  blob.write(reinterpret_cast<const char*>(flat.data()), std::streamsize(flat.size() * sizeof(double)));
  std::ofstream out(dir / "manifest.json");
  require(bool(out), ErrorCode::io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

ParamSet load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(bool(in), ErrorCode::io, "cannot read " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_header, std::string("checkpoint manifest: ") + e.what());
  }
  ParamSet p;
  std::size_t count = 0;
  try {
    require(m.at("dtype") == "f64le", ErrorCode::malformed_header, "checkpoint dtype must be f64le");
    count = m.at("count").get<std::size_t>();
    std::size_t expect = 0;
    for (const auto& t : m.at("tensors")) {
      require(t.at("offset").get<std::size_t>() == expect, ErrorCode::malformed_header,
              "checkpoint tensors must be contiguous");
      p.names.push_back(t.at("name").get<std::string>());
      p.values.emplace_back(t.at("shape").get<std::vector<int>>());
      expect += p.values.back().size();
    }
    require(expect == count, ErrorCode::malformed_header, "checkpoint count does not match its tensors");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_header, std::string("checkpoint manifest: ") + e.what());
  }
  std::ifstream blob(dir / m["blob"].get<std::string>(), std::ios::binary | std::ios::ate);
  require(bool(blob), ErrorCode::io, "cannot read checkpoint blob");
  const auto bytes = std::size_t(blob.tellg());
  require(bytes == count * sizeof(double), ErrorCode::truncated_payload, "checkpoint blob has the wrong size");
  blob.seekg(0);
  std::vector<double> flat(count);
  blob.read(reinterpret_cast<char*>(flat.data()), std::streamsize(bytes));
  p.assign(flat);
  return p;
}

// ---- Losses per sample --------------------------------------------------------

std::vector<int> stage_terms(Stage s) {
  using namespace losskit;
  switch (s) {
    case Stage::pose2d: return {j2d, segm};
    case Stage::pose3d: return {j3d};
    case Stage::shape: return {voxel};
    case Stage::shape_reproj: return {voxel, fv, sv};
    case Stage::end_to_end: return {j2d, segm, j3d, voxel, fv, sv};
  }
  return {};
}

namespace {

std::vector<int> stage_blocks(Stage s) {
  switch (s) {
    case Stage::pose2d: return {0};
    case Stage::pose3d: return {1};
    case Stage::shape:
    case Stage::shape_reproj: return {2};
    case Stage::end_to_end: return {0, 1, 2};
  }
  return {};
}

int depth_for(std::span<const int> terms) {
  int d = 1;
  for (int k : terms) d = std::max(d, k == losskit::j3d ? 2 : k >= losskit::voxel ? 3 : 1);
  return d;
}

std::array<double, kNumTerms> nan_terms() {
  std::array<double, kNumTerms> a;
  a.fill(std::numeric_limits<double>::quiet_NaN());
  return a;
}

// Offsets of the trainable parameters inside the flat parameter vector.
struct Trainable {
  std::vector<int> params;
  std::vector<std::size_t> offset;  // into the flat vector
  std::size_t size = 0;             // trainable scalars

  Trainable(const ToyPredictor& m, Stage s) {
    const auto blocks = stage_blocks(s);
    std::size_t off = 0;
    for (std::size_t i = 0; i < m.params().values.size(); ++i) {
      if (std::find(blocks.begin(), blocks.end(), m.block_of(int(i))) != blocks.end()) {
        params.push_back(int(i));
        offset.push_back(off);
        size += m.params().values[i].size();
      }
      off += m.params().values[i].size();
    }
  }
};

struct SampleEval {
  std::array<double, kNumTerms> terms = nan_terms();
  std::vector<double> grad;                   // trainable, combined
  std::vector<std::vector<double>> per_term;  // trainable, one per active term
};

enum class Want { values, combined, per_term };

const char* term_name(int k) { return losskit::kTermNames[std::size_t(k)]; }

SampleEval eval_sample(const ToyPredictor& model, const ToySample& s, std::span<const int> active,
                       const losskit::LossWeights& w, const TrainConfig& cfg, const Trainable* train, Want want) {
  Tape t;
  std::vector<Var> leaves;
  const auto out = model.forward(t, s, leaves, depth_for(active));
  std::vector<Var> losses;
  for (int k : active) {
    Var l;
    switch (k) {
      case losskit::j2d: l = mse(t, out.heat2d, s.heat2d); break;
      case losskit::segm: l = softmax_ce(t, out.segm, s.segm); break;
      case losskit::j3d: l = mse(t, out.heat3d, s.heat3d); break;
      case losskit::voxel: l = bce_logits(t, out.voxels, s.voxels); break;
      case losskit::fv: l = bce_logits(t, max_reduce(t, out.voxels, 0), s.front); break;
      case losskit::sv: l = bce_logits(t, max_reduce(t, out.voxels, 2), s.side); break;
      default: fail(ErrorCode::invalid_argument, "unknown loss term");
    }
    losses.push_back(scale(t, l, cfg.loss_scale[std::size_t(k)]));
  }
  SampleEval r;
  for (std::size_t i = 0; i < active.size(); ++i) {
    const double v = t.value(losses[i]).data[0];
    require(std::isfinite(v), ErrorCode::non_finite, std::string("loss term ") + term_name(active[i]) + " is not finite");
    r.terms[std::size_t(active[i])] = v;
  }
  if (want == Want::values) return r;

  auto collect = [&](std::vector<double>& g) {
    g.assign(train->size, 0.0);
    std::size_t o = 0;
    for (int p : train->params) {
      const auto& src = t.grad(leaves[std::size_t(p)]);
      std::copy(src.begin(), src.end(), g.begin() + std::ptrdiff_t(o));
      o += src.size();
    }
  };
  if (want == Want::combined) {
    Var total = scale(t, losses[0], w[active[0]]);
    for (std::size_t i = 1; i < active.size(); ++i) total = add(t, total, scale(t, losses[i], w[active[i]]));
    t.backward(total);
    collect(r.grad);
  } else {
    r.per_term.resize(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      t.backward(losses[i]);
      collect(r.per_term[i]);
    }
  }
  return r;
}

// Seeded epochs over the data; each batch is returned in index order so a
// batch covering the whole set is the same every time.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}
  std::vector<std::size_t> next(int batch) {
    std::vector<std::size_t> b;
    for (int i = 0; i < batch; ++i) {
      if (pos_ == perm_.size()) refill();
      b.push_back(perm_[pos_++]);
    }
    std::sort(b.begin(), b.end());
    return b;
  }

 private:
  void refill() {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t(0));
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    pos_ = 0;
  }
  std::size_t n_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

std::uint64_t stream_seed(const TrainConfig& cfg, Stage s, int purpose) {
  return cfg.seed * 0x9E3779B97F4A7C15ULL + std::uint64_t(int(s)) * 131 + std::uint64_t(purpose);
}

void check_data(std::span<const ToySample> data, const TrainConfig& cfg) {
  require(!data.empty(), ErrorCode::invalid_argument, "training needs samples");
  require(cfg.batch > 0 && cfg.lr >= 0.0 && cfg.rms_decay >= 0.0 && cfg.rms_decay < 1.0 && cfg.rms_eps >= 0.0,
          ErrorCode::invalid_argument, "bad training configuration");
}

// Measurement-only model for losskit::balance_weights.
class Measurement final : public losskit::MultiLossModel {
 public:
  Measurement(const ToyPredictor& m, std::span<const ToySample> data, Stage s, const TrainConfig& cfg)
      : m_(m), data_(data), active_(stage_terms(s)), train_(m, s), cfg_(cfg),
        stream_(data.size(), stream_seed(cfg, s, 1)) {}

  int num_losses() const override { return int(active_.size()); }

  std::vector<std::vector<double>> loss_gradients() override {
    std::vector<std::vector<double>> g(active_.size(), std::vector<double>(train_.size, 0.0));
    const auto batch = stream_.next(cfg_.batch);
    for (std::size_t i : batch) {
      const auto e = eval_sample(m_, data_[i], active_, {}, cfg_, &train_, Want::per_term);
      for (std::size_t k = 0; k < g.size(); ++k)
        for (std::size_t j = 0; j < train_.size; ++j) g[k][j] += e.per_term[k][j];
    }
    for (auto& v : g)
      for (auto& x : v) x /= double(batch.size());
    return g;
  }

  // Parameters stay fixed while measuring.
  void step(std::span<const double>, const std::vector<std::vector<double>>&) override {}

 private:
  const ToyPredictor& m_;
  std::span<const ToySample> data_;
  std::vector<int> active_;
  Trainable train_;
  const TrainConfig& cfg_;
  BatchStream stream_;
};

}  // namespace

std::array<double, kNumTerms> evaluate_terms(const ToyPredictor& model, std::span<const ToySample> data,
                                             std::span<const int> active, const TrainConfig& cfg) {
  require(!data.empty(), ErrorCode::invalid_argument, "evaluation needs samples");
  auto sum = nan_terms();
  for (int k : active) sum[std::size_t(k)] = 0.0;
  for (const auto& s : data) {
    const auto e = eval_sample(model, s, active, {}, cfg, nullptr, Want::values);
    for (int k : active) sum[std::size_t(k)] += e.terms[std::size_t(k)];
  }
  for (int k : active) sum[std::size_t(k)] /= double(data.size());
  return sum;
}

losskit::BalanceResult measure_balance(const ToyPredictor& model, std::span<const ToySample> data, Stage stage,
                                       int batches, const TrainConfig& cfg) {
  check_data(data, cfg);
  Measurement m(model, data, stage, cfg);
  return losskit::balance_weights(m, batches, cfg.measure);
}

void train_stage(ToyPredictor& model, std::span<const ToySample> data, Stage stage, const losskit::LossWeights& w,
                 int iters, const TrainConfig& cfg, TrainLog& log, bool keep_trajectory) {
  check_data(data, cfg);
  const auto active = stage_terms(stage);
  const Trainable train(model, stage);
  BatchStream stream(data.size(), stream_seed(cfg, stage, 0));
  std::vector<double> mean_sq(train.size, 0.0);
  auto& values = model.params().values;

  for (int it = 0; it < iters; ++it) {
    const bool per_term = cfg.log_grad_every > 0 && it % cfg.log_grad_every == 0;
    const auto batch = stream.next(cfg.batch);
    const double inv = 1.0 / double(batch.size());
    LogRow row;
    row.stage = int(stage);
    row.iteration = it;
    row.terms = nan_terms();
    row.grad_magnitude = nan_terms();
    for (int k : active) row.terms[std::size_t(k)] = 0.0;
    std::vector<double> grad(train.size, 0.0);
    std::vector<std::vector<double>> term_grad(per_term ? active.size() : 0, std::vector<double>(train.size, 0.0));
    for (std::size_t i : batch) {
      const auto e = eval_sample(model, data[i], active, w, cfg, &train, per_term ? Want::per_term : Want::combined);
      for (int k : active) row.terms[std::size_t(k)] += inv * e.terms[std::size_t(k)];
      if (per_term) {
        for (std::size_t a = 0; a < active.size(); ++a)
          for (std::size_t j = 0; j < train.size; ++j) term_grad[a][j] += inv * e.per_term[a][j];
      } else {
        for (std::size_t j = 0; j < train.size; ++j) grad[j] += inv * e.grad[j];
      }
    }
    if (per_term) {
      for (std::size_t a = 0; a < active.size(); ++a) {
        const int k = active[a];
        row.grad_magnitude[std::size_t(k)] = losskit::grad_magnitude(term_grad[a], cfg.measure);
        for (std::size_t j = 0; j < train.size; ++j) grad[j] += w[k] * term_grad[a][j];
      }
    }
    row.combined = 0.0;
    for (int k : active) row.combined += w[k] * row.terms[std::size_t(k)];
    for (double g : grad)
      require(std::isfinite(g), ErrorCode::non_finite,
              "non-finite gradient in stage " + std::to_string(int(stage)) + " at iteration " + std::to_string(it));
    log.rows.push_back(row);

    // RMSprop on the trainable parameters.
    std::size_t j = 0;
    for (std::size_t a = 0; a < train.params.size(); ++a) {
      auto& data_p = values[std::size_t(train.params[a])].data;
      for (double& p : data_p) {
        const double g = grad[j];
        mean_sq[j] = cfg.rms_decay * mean_sq[j] + (1.0 - cfg.rms_decay) * g * g;
        const double denom = std::sqrt(mean_sq[j]) + cfg.rms_eps;
        if (denom > 0.0) p -= cfg.lr * g / denom;
        ++j;
      }
    }
    if (keep_trajectory) log.trajectory.push_back(model.params().flatten());
  }
}

namespace {

int stage_iters(const TrainConfig& cfg, Stage s) {
  switch (s) {
    case Stage::pose2d: return cfg.iters.pose2d;
    case Stage::pose3d: return cfg.iters.pose3d;
    case Stage::shape: return cfg.iters.shape;
    case Stage::shape_reproj: return cfg.iters.shape_reproj;
    case Stage::end_to_end: return cfg.iters.end_to_end;
  }
  return 0;
}

double weighted(const std::array<double, kNumTerms>& terms, const losskit::LossWeights& w, std::span<const int> active) {
  double s = 0.0;
  for (int k : active) s += w[k] * terms[std::size_t(k)];
  return s;
}

void run_stage(ToyPredictor& model, std::span<const ToySample> data, Stage stage, const TrainConfig& cfg,
               TrainLog& log, bool keep_trajectory) {
  const auto active = stage_terms(stage);
  StageSummary sum;
  sum.stage = int(stage);
  sum.weights.w.fill(0.0);
  if (active.size() == 1) {
    sum.weights[active[0]] = 1.0;
    sum.raw_weights = {1.0};
  } else {
    const int batches = stage == Stage::end_to_end ? cfg.balance_iters : cfg.stage_balance_iters;
    const auto b = measure_balance(model, data, stage, batches, cfg);
    for (std::size_t i = 0; i < active.size(); ++i) sum.weights[active[i]] = b.weights[i];
    sum.raw_weights = b.raw;
  }
  sum.start = evaluate_terms(model, data, active, cfg);
  sum.start_combined = weighted(sum.start, sum.weights, active);
  train_stage(model, data, stage, sum.weights, stage_iters(cfg, stage), cfg, log,
              keep_trajectory && stage == Stage::end_to_end);
  sum.end = evaluate_terms(model, data, active, cfg);
  sum.end_combined = weighted(sum.end, sum.weights, active);
  log.stages.push_back(sum);
}

}  // namespace

TrainLog train_staged(ToyPredictor& model, std::span<const ToySample> data, const TrainConfig& cfg,
                      bool keep_trajectory) {
  check_data(data, cfg);
  TrainLog log;
  for (Stage s : {Stage::pose2d, Stage::pose3d, Stage::shape, Stage::shape_reproj, Stage::end_to_end})
    run_stage(model, data, s, cfg, log, keep_trajectory);
  if (!cfg.log_csv.empty()) write_log_csv(cfg.log_csv, log);
  return log;
}

void write_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  out << "stage,iteration";
  for (const char* n : losskit::kTermNames) out << ',' << n;
  out << ",combined";
  for (const char* n : losskit::kTermNames) out << ",grad_" << n;
  out << '\n' << std::setprecision(17);
  auto field = [&](double v) {
    out << ',';
    if (std::isfinite(v)) out << v;
  };
  for (const auto& r : log.rows) {
    out << r.stage << ',' << r.iteration;
    for (double v : r.terms) field(v);
    field(r.combined);
    for (double v : r.grad_magnitude) field(v);
    out << '\n';
  }
}

double voxel_iou(std::span<const double> logits, std::span<const std::uint8_t> target) {
  require(logits.size() == target.size(), ErrorCode::dim_mismatch, "voxel_iou: sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool p = logits[i] >= 0.0, t = target[i] != 0;
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::vector<AblationRow> ablate_inputs(std::span<const AblationVariant> variants, std::span<const ToySample> train,
                                       std::span<const ToySample> held_out, const TrainConfig& cfg) {
  if (variants.empty()) return {};
  check_data(train, cfg);
  require(!held_out.empty(), ErrorCode::invalid_argument, "ablation needs held-out samples");
  ToyPredictor base(cfg.seed, {}, train[0].voxel_res);
  TrainLog log;
  run_stage(base, train, Stage::pose2d, cfg, log, false);
  run_stage(base, train, Stage::pose3d, cfg, log, false);

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    ToyPredictor m(cfg.seed, v.inputs, base.voxel_res());
    for (std::size_t i = 0; i < base.params().names.size(); ++i)
      if (base.block_of(int(i)) < 2) m.params().values[i] = base.params().values[i];
    m.set_ground_truth_fields(v.ground_truth_fields);
    run_stage(m, train, Stage::shape, cfg, log, false);
    run_stage(m, train, Stage::shape_reproj, cfg, log, false);
    double iou = 0.0;
    for (const auto& s : held_out) {
      Tape t;
      std::vector<Var> leaves;
      iou += voxel_iou(t.value(m.forward(t, s, leaves, 3).voxels).data, s.voxels);
    }
    rows.push_back({v.name, v.inputs.pose2d, v.inputs.segm, v.inputs.pose3d, v.inputs.image,
                    iou / double(held_out.size())});
  }
  return rows;
}

}  // namespace bodyvox::gradnet
