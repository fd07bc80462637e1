#include "latnas/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "latnas/model.hpp"

namespace latnas {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double x = p * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(x);
  const std::size_t j = std::min(i + 1, v.size() - 1);
  const double a = x - static_cast<double>(i);
  return v[i] * (1.0 - a) + v[j] * a;
}

using Clock = std::chrono::steady_clock;

double time_us(const Clock::time_point& a, const Clock::time_point& b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

double LatencyTable::at(const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) {
    throw CoverageError("latency table has no entry for block key '" + key + "'");
  }
  return it->second.latency_us;
}

void LatencyTable::put(const std::string& key, LatencyEntry entry) { entries[key] = entry; }

std::vector<std::string> LatencyTable::missing(const std::vector<std::string>& wanted) const {
  std::vector<std::string> out;
  for (const std::string& k : wanted)
    if (!has(k)) out.push_back(k);
  return out;
}

void LatencyTable::require_covers(const std::vector<std::string>& wanted) const {
  const auto miss = missing(wanted);
  if (!miss.empty()) {
    std::string joined;
    for (const std::string& k : miss) joined += (joined.empty() ? "" : ", ") + k;
    throw CoverageError("latency table missing entries for: " + joined);
  }
}

void LatencyTable::save_csv(const std::string& path) const {
  std::ostringstream os;
  os << "# batch=" << context.batch << "\n";
  os << "# seq_len=" << context.seq_len << "\n";
  os << "# model_dim=" << context.model_dim << "\n";
  os << "# precision=" << context.precision << "\n";
  os << "# timestamp=" << timestamp << "\n";
  os << "key,latency_us,reps,warmup,iqr_us\n";
  for (const auto& [key, e] : entries) {
    os << key << ',' << fmt_double(e.latency_us) << ',' << e.reps << ',' << e.warmup << ','
       << fmt_double(e.iqr_us) << "\n";
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write latency table to '" + path + "'");
  f << os.str();
}

LatencyTable LatencyTable::load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read latency table from '" + path + "'");
  LatencyTable t;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string k = line.substr(2, eq - 2);
      std::string v = line.substr(eq + 1);
      if (k == "batch") t.context.batch = std::stoi(v);
      else if (k == "seq_len") t.context.seq_len = std::stoi(v);
      else if (k == "model_dim") t.context.model_dim = std::stoi(v);
      else if (k == "precision") t.context.precision = v;
      else if (k == "timestamp") t.timestamp = v;
      continue;
    }
    if (!header_seen) {
      if (line != "key,latency_us,reps,warmup,iqr_us") {
        throw DataError("latency table '" + path + "': unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    std::istringstream is(line);
    std::string key, lat, reps, warm, iqr;
    if (!std::getline(is, key, ',') || !std::getline(is, lat, ',') ||
        !std::getline(is, reps, ',') || !std::getline(is, warm, ',') || !std::getline(is, iqr)) {
      throw DataError("latency table '" + path + "': malformed row '" + line + "'");
    }
    LatencyEntry e;
    e.latency_us = std::strtod(lat.c_str(), nullptr);
    e.reps = std::stoi(reps);
    e.warmup = std::stoi(warm);
    e.iqr_us = std::strtod(iqr.c_str(), nullptr);
    t.entries[key] = e;
  }
  if (!header_seen) throw DataError("latency table '" + path + "': no header row");
  return t;
}

double profile_block(const BlockSpec& spec, const ProfileContext& ctx, int reps, int warmup,
                     RngStream& rng, double* iqr_us) {
  if (reps < 10) throw ParamError("profile_block: repetitions must be >= 10, got " + std::to_string(reps));
  if (warmup < 3) throw ParamError("profile_block: warmup must be >= 3, got " + std::to_string(warmup));
  spec.validate(ctx.model_dim);

  NoGradGuard no_grad;
  std::unique_ptr<Block> block = Block::create(spec, ctx.model_dim, rng);
  ForwardCtx fwd;
  fwd.balanced_routing = true;  // table stores the balanced-dispatch case

  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < warmup + reps; ++i) {
    Tensor x = Tensor::randn({ctx.batch, ctx.seq_len, ctx.model_dim}, rng, 1.0);
    const auto t0 = Clock::now();
    Tensor out = block->forward(x, fwd);
    const auto t1 = Clock::now();
    if (out.size() != x.size()) throw ShapeError("profile_block: block changed tensor shape");
    if (i >= warmup) samples.push_back(time_us(t0, t1));
  }
  if (iqr_us) *iqr_us = percentile(samples, 0.75) - percentile(samples, 0.25);
  return percentile(samples, 0.5);
}

LatencyEstimate estimate_latency(const std::vector<Tensor>& slot_probs,
                                 const std::vector<std::vector<BlockSpec>>& menus,
                                 const LatencyTable& table) {
  if (slot_probs.size() != menus.size()) {
    throw ShapeError("estimate_latency: " + std::to_string(slot_probs.size()) +
                     " probability vectors for " + std::to_string(menus.size()) + " slots");
  }
  LatencyEstimate est;
  for (std::size_t b = 0; b < menus.size(); ++b) {
    const auto& menu = menus[b];
    if (slot_probs[b].size() != menu.size()) {
      throw ShapeError("estimate_latency: slot " + std::to_string(b) + " has " +
                       std::to_string(menu.size()) + " options but P of size " +
                       std::to_string(slot_probs[b].size()));
    }
    std::vector<double> lats(menu.size());
    for (std::size_t i = 0; i < menu.size(); ++i) lats[i] = table.at(menu[i].key());
    Tensor lat_const = Tensor::from({static_cast<int>(menu.size())}, std::move(lats));
    Tensor slot_us = sum(multiply(slot_probs[b], lat_const));
    est.per_slot_us.push_back(slot_us.value());
    est.total_us = est.total_us.defined() ? add(est.total_us, slot_us) : slot_us;
  }
  return est;
}

double baseline_latency(const BackboneSpec& backbone, const LatencyTable& table) {
  double total = 0.0;
  for (const BlockSpec& s : backbone.slots) total += table.at(s.key());
  return total;
}

double measure_end_to_end(const std::vector<BlockSpec>& slots, int model_dim, int vocab,
                          const ProfileContext& ctx, int reps, int warmup, RngStream& rng) {
  if (reps < 1) throw ParamError("measure_end_to_end: repetitions must be >= 1");
  NoGradGuard no_grad;
  LmCore core = LmCore::init(model_dim, vocab, ctx.seq_len, rng);
  std::vector<std::unique_ptr<Block>> blocks;
  for (const BlockSpec& s : slots) blocks.push_back(Block::create(s, model_dim, rng));
  ForwardCtx fwd;

  const int n = ctx.batch * ctx.seq_len;
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < warmup + reps; ++i) {
    std::vector<int> tokens(static_cast<std::size_t>(n));
    for (int& tk : tokens) tk = rng.below(vocab);
    const auto t0 = Clock::now();
    Tensor x = core.embed(tokens, ctx.batch, ctx.seq_len, fwd);
    for (auto& b : blocks) x = b->forward(x, fwd);
    Tensor logits = core.project(x);
    const auto t1 = Clock::now();
    if (logits.shape != Shape{n, vocab}) throw ShapeError("measure_end_to_end: bad logits shape");
    if (i >= warmup) samples.push_back(time_us(t0, t1));
  }
  return percentile(samples, 0.5);
}

}  // namespace latnas
