#include "bodyvox/losskit.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bodyvox::losskit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

double LossWeights::sum() const { return std::accumulate(w.begin(), w.end(), 0.0); }

LossWeights LossWeights::normalized() const {
  for (double v : w) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument, "loss weights must be finite and >= 0");
  }
  const double s = sum();
  require(s > 0.0, ErrorCode::invalid_argument, "loss weights sum to zero");
  LossWeights out;
  for (int t = 0; t < kNumTerms; ++t) out[t] = w[std::size_t(t)] / s;
  return out;
}

LossWeights LossWeights::from_proportions(const std::array<double, kNumTerms>& p) {
  LossWeights raw;
  raw.w = p;
  return raw.normalized();
}

std::string LossWeights::to_kv() const {
  std::string out;
  for (int t = 0; t < kNumTerms; ++t) {
    out += std::string("lambda_") + kTermNames[std::size_t(t)] + " = " + shortest(w[std::size_t(t)]) + "\n";
  }
  return out;
}

LossWeights LossWeights::from_kv(const std::string& text) {
  LossWeights out;
  std::array<bool, kNumTerms> seen{};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::invalid_argument, "loss weights: expected key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    int term = -1;
    for (int t = 0; t < kNumTerms; ++t) {
      if (key == std::string("lambda_") + kTermNames[std::size_t(t)]) term = t;
    }
    if (term < 0) continue;  // other run-config keys share the block
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    require(ec == std::errc() && ptr == val.data() + val.size(), ErrorCode::invalid_argument,
            "loss weights: bad number for " + key);
    out[term] = v;
    seen[std::size_t(term)] = true;
  }
  for (int t = 0; t < kNumTerms; ++t) {
    require(seen[std::size_t(t)], ErrorCode::invalid_argument,
            std::string("loss weights: missing lambda_") + kTermNames[std::size_t(t)]);
  }
  return out;
}

LossReport combined(const std::array<double, kNumTerms>& terms, const LossWeights& w) {
  LossReport r;
  r.terms = terms;
  for (int t = 0; t < kNumTerms; ++t) r.combined += w[t] * terms[std::size_t(t)];
  return r;
}

void append_csv(const std::filesystem::path& path, int iteration, const LossReport& report) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  require(bool(out), ErrorCode::io, "cannot append to " + path.string());
  if (fresh) {
    out << "iteration";
    for (const char* n : kTermNames) out << ',' << n;
    out << ",combined\n";
  }
  out << iteration;
  for (double v : report.terms) out << ',' << shortest(v);
  out << ',' << shortest(report.combined) << '\n';
}

const char* to_string(GradMagnitude m) {
  switch (m) {
    case GradMagnitude::mean_abs: return "mean_abs";
    case GradMagnitude::rms: return "rms";
    case GradMagnitude::l2norm: return "l2norm";
  }
  return "?";
}

GradMagnitude parse_grad_magnitude(const std::string& s) {
  if (s == "mean_abs") return GradMagnitude::mean_abs;
  if (s == "rms") return GradMagnitude::rms;
  if (s == "l2norm") return GradMagnitude::l2norm;
  fail(ErrorCode::invalid_argument, "unknown gradient magnitude '" + s + "'");
}

double grad_magnitude(std::span<const double> g, GradMagnitude m) {
  if (g.empty()) return 0.0;
  double acc = 0.0;
  if (m == GradMagnitude::mean_abs) {
    for (double v : g) acc += std::abs(v);
    return acc / double(g.size());
  }
  for (double v : g) acc += v * v;
  return m == GradMagnitude::rms ? std::sqrt(acc / double(g.size())) : std::sqrt(acc);
}

BalanceResult balance_weights(MultiLossModel& model, int iters, GradMagnitude measure) {
  require(iters > 0, ErrorCode::invalid_argument, "balance_weights: iters must be positive");
  const int n = model.num_losses();
  require(n > 0, ErrorCode::invalid_argument, "balance_weights: model has no losses");
  BalanceResult r;
  r.mean_magnitude.assign(std::size_t(n), 0.0);
  const std::vector<double> equal(std::size_t(n), 1.0 / double(n));
  for (int it = 0; it < iters; ++it) {
    const auto grads = model.loss_gradients();
    require(grads.size() == std::size_t(n), ErrorCode::dim_mismatch,
            "balance_weights: model returned the wrong number of gradients");
    for (int i = 0; i < n; ++i) {
      r.mean_magnitude[std::size_t(i)] += grad_magnitude(grads[std::size_t(i)], measure) / double(iters);
    }
    model.step(equal, grads);
  }
  r.raw.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    const double m = r.mean_magnitude[std::size_t(i)];
    require(m > 0.0 && std::isfinite(m), ErrorCode::unbalanced,
            "balance_weights: loss " + std::to_string(i) + " has no gradient to balance");
    r.raw[std::size_t(i)] = 1.0 / m;
  }
  const double total = std::accumulate(r.raw.begin(), r.raw.end(), 0.0);
  r.weights.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) r.weights[std::size_t(i)] = r.raw[std::size_t(i)] / total;
  return r;
}

}  // namespace bodyvox::losskit
