#include "latnas/finalize.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace latnas {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double one_hot_estimate(const std::vector<BlockSpec>& slots, const LatencyTable& table) {
  double total = 0.0;
  for (const BlockSpec& s : slots) total += table.at(s.key());
  return total;
}

}  // namespace

void ArchitectureDescriptor::save(const std::string& path) const {
  std::ostringstream os;
  os << "latnas-architecture v1\n";
  os << "model_dim: " << model_dim << "\n";
  os << "source: " << source << "\n";
  os << "seed: " << seed << "\n";
  os << "target_ratio: " << fmt_double(target_ratio) << "\n";
  os << "target_met: " << (target_met ? "true" : "false") << "\n";
  os << "baseline_latency_us: " << fmt_double(baseline_latency_us) << "\n";
  os << "estimated_latency_us: " << fmt_double(estimated_latency_us) << "\n";
  os << "slots: " << slots.size() << "\n";
  for (const BlockSpec& s : slots) os << "slot: " << s.key() << "\n";
  for (const auto& a : alpha_snapshot) {
    os << "alpha:";
    for (double v : a) os << ' ' << fmt_double(v);
    os << "\n";
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write architecture descriptor to '" + path + "'");
  f << os.str();
}

ArchitectureDescriptor ArchitectureDescriptor::load(const std::string& path,
                                                    const LatencyTable* table) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read architecture descriptor from '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "latnas-architecture v1") {
    throw DataError("descriptor '" + path + "': bad magic line");
  }
  ArchitectureDescriptor d;
  bool have_estimate = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) {
      if (line.compare(0, 6, "alpha:") == 0) {
        std::istringstream is(line.substr(6));
        std::vector<double> a;
        std::string tok;
        while (is >> tok) a.push_back(std::strtod(tok.c_str(), nullptr));
        d.alpha_snapshot.push_back(std::move(a));
        continue;
      }
      throw DataError("descriptor '" + path + "': malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, colon);
    const std::string val = line.substr(colon + 2);
    if (key == "model_dim") d.model_dim = std::stoi(val);
    else if (key == "source") d.source = val;
    else if (key == "seed") d.seed = std::stoull(val);
    else if (key == "target_ratio") d.target_ratio = std::strtod(val.c_str(), nullptr);
    else if (key == "target_met") d.target_met = (val == "true");
    else if (key == "baseline_latency_us") d.baseline_latency_us = std::strtod(val.c_str(), nullptr);
    else if (key == "estimated_latency_us") {
      d.estimated_latency_us = std::strtod(val.c_str(), nullptr);
      have_estimate = true;
    } else if (key == "slots") {
      // count line; the slot list that follows is authoritative
    } else if (key == "slot") {
      d.slots.push_back(BlockSpec::parse(val));
    } else {
      throw DataError("descriptor '" + path + "': unknown field '" + key + "'");
    }
  }
  if (d.model_dim <= 0) throw DataError("descriptor '" + path + "': missing model_dim");
  if (d.slots.empty()) throw DataError("descriptor '" + path + "': no slots");
  for (const BlockSpec& s : d.slots) s.validate(d.model_dim);
  if (!d.alpha_snapshot.empty() && d.alpha_snapshot.size() != d.slots.size()) {
    throw DataError("descriptor '" + path + "': alpha snapshot count does not match slots");
  }
  if (table) {
    const double recomputed = one_hot_estimate(d.slots, *table);
    if (!have_estimate) {
      d.estimated_latency_us = recomputed;
    } else {
      const double rel = std::fabs(recomputed - d.estimated_latency_us) /
                         std::max(1e-9, std::fabs(recomputed));
      if (rel > 1e-9) {
        throw SpecError("descriptor '" + path + "': estimated_latency_us " +
                        fmt_double(d.estimated_latency_us) + " does not match table sum " +
                        fmt_double(recomputed));
      }
    }
  }
  return d;
}

ArchitectureDescriptor sample_architecture(const SearchNetwork& net, const LatencyTable& table,
                                           double target_ratio, std::uint64_t seed) {
  ArchitectureDescriptor d;
  d.model_dim = net.backbone.model_dim;
  d.target_ratio = target_ratio;
  d.seed = seed;
  d.source = "searched";
  for (const SuperBlock& sb : net.super_blocks) {
    const int j = argmax(sb.alpha);  // ties break to the lower option index
    d.slots.push_back(sb.options[static_cast<std::size_t>(j)]);
    d.alpha_snapshot.push_back(sb.alpha.values());
  }
  d.estimated_latency_us = one_hot_estimate(d.slots, table);
  d.baseline_latency_us = baseline_latency(net.backbone, table);
  d.target_met = d.estimated_latency_us <= d.baseline_latency_us * target_ratio;
  return d;
}

Tensor FinalNetwork::forward(const std::vector<int>& tokens, int batch, int seq, ForwardCtx& ctx) {
  Tensor x = core.embed(tokens, batch, seq, ctx);
  for (auto& b : blocks) x = b->forward(x, ctx);
  return core.project(x);
}

std::vector<RoutingStats> FinalNetwork::routing_stats() const {
  std::vector<RoutingStats> out;
  for (const auto& b : blocks) {
    if (const RoutingStats* s = b->last_routing()) out.push_back(*s);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> FinalNetwork::named_params() const {
  std::vector<std::pair<std::string, Tensor>> named;
  core.collect_named(named);
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    blocks[s]->collect_named("slot" + std::to_string(s) + ".", named);
  }
  return named;
}

std::vector<Tensor> FinalNetwork::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

std::size_t FinalNetwork::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params()) n += t.size();
  return n;
}

FinalNetwork instantiate(const ArchitectureDescriptor& arch, int vocab, int max_seq,
                         RngStream& rng) {
  if (arch.slots.empty()) throw SpecError("instantiate: descriptor has no slots");
  FinalNetwork net;
  net.model_dim = arch.model_dim;
  net.core = LmCore::init(arch.model_dim, vocab, max_seq, rng);
  for (const BlockSpec& s : arch.slots) {
    net.blocks.push_back(Block::create(s, arch.model_dim, rng));
  }
  return net;
}

void Phase2Config::validate() const {
  if (epochs < 1) throw ConfigError("phase2.epochs must be >= 1");
  if (balance_coefficient < 0.0) throw ConfigError("phase2.balance_coefficient must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("phase2.dropout must be in [0, 1)");
  if (moe_dropout < 0.0 || moe_dropout >= 1.0) {
    throw ConfigError("phase2.moe_dropout must be in [0, 1)");
  }
}

Phase2Result run_phase2(FinalNetwork& net, const Corpus& corpus, const Phase2Config& cfg,
                        const Phase2StepHook& on_step, const Phase2EpochHook& on_epoch) {
  cfg.validate();
  auto opt = Optimizer::create(cfg.opt, net.params());
  RngStream dropout_rng(cfg.seed, Stream::Dropout);

  Phase2Result result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchConfig bc = cfg.batch;
    bc.order_seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch);
    const std::vector<Batch> batch_list = batches(corpus, Split::Train, bc);
    for (std::size_t step = 0; step < batch_list.size(); ++step) {
      const Batch& b = batch_list[step];
      ForwardCtx ctx;
      ctx.training = true;
      ctx.dropout = cfg.dropout;
      ctx.moe_dropout = cfg.moe_dropout;
      ctx.dropout_rng = &dropout_rng;
      Tensor logits = net.forward(b.inputs, b.batch_size, b.seq_len, ctx);
      Tensor ce = cross_entropy(logits, b.targets);
      const std::vector<RoutingStats> stats = net.routing_stats();
      BalanceLossResult bal = balance_loss(stats);
      Tensor total = phase2_total_loss(ce, bal, cfg.balance_coefficient);
      if (!std::isfinite(total.value())) {
        throw NumericError("phase 2: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step));
      }
      opt->zero_grad();
      backward(total);
      opt->clip_global_norm(cfg.grad_clip);
      opt->step();

      double max_f = 0.0;
      for (const RoutingStats& s : stats)
        for (double f : s.token_fraction) max_f = std::max(max_f, f);
      Phase2StepLog log{epoch, static_cast<int>(step), ce.value(),
                        bal.has_moe ? bal.value : 0.0, max_f};
      result.steps.push_back(log);
      if (on_step) on_step(log);
    }

    BatchConfig eval_bc = cfg.batch;
    eval_bc.order_seed = cfg.seed;
    Phase2EpochLog elog{epoch, evaluate_ce(net, corpus, Split::Valid, eval_bc)};
    result.epochs.push_back(elog);
    if (on_epoch) on_epoch(elog);
  }
  return result;
}

double evaluate_ce(FinalNetwork& net, const Corpus& corpus, Split split, const BatchConfig& bc) {
  NoGradGuard no_grad;
  const std::vector<Batch> batch_list = batches(corpus, split, bc);
  double total = 0.0;
  for (const Batch& b : batch_list) {
    ForwardCtx ctx;  // eval mode: no dropout
    Tensor logits = net.forward(b.inputs, b.batch_size, b.seq_len, ctx);
    total += cross_entropy(logits, b.targets).value();
  }
  return total / static_cast<double>(batch_list.size());
}

void save_weights(const FinalNetwork& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write weights to '" + path + "'");
  const char magic[8] = {'l', 'a', 't', 'n', 'a', 's', 'w', '1'};
  f.write(magic, sizeof(magic));
  const auto named = net.named_params();
  const std::uint64_t count = named.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, t] : named) {
    const std::uint64_t name_len = name.size();
    f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    f.write(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = t.shape.size();
    f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : t.shape) {
      const std::int64_t dim = d;
      f.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    f.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

void load_weights(FinalNetwork& net, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read weights from '" + path + "'");
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, "latnasw1", 8) != 0) {
    throw DataError("weights '" + path + "': bad magic");
  }
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  auto named = net.named_params();
  if (count != named.size()) {
    throw DataError("weights '" + path + "': holds " + std::to_string(count) +
                    " tensors, network has " + std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    std::uint64_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string stored(name_len, '\0');
    f.read(stored.data(), static_cast<std::streamsize>(name_len));
    if (stored != name) {
      throw DataError("weights '" + path + "': expected tensor '" + name + "', found '" +
                      stored + "'");
    }
    std::uint64_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    Shape shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) {
      std::int64_t dim = 0;
      f.read(reinterpret_cast<char*>(&dim), sizeof(dim));
      shape[i] = static_cast<int>(dim);
    }
    if (shape != t.shape) {
      throw DataError("weights '" + path + "': shape mismatch for '" + name + "'");
    }
    f.read(reinterpret_cast<char*>(t.values().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw DataError("weights '" + path + "': truncated file");
  }
}

}  // namespace latnas
