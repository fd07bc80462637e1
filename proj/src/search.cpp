#include "latnas/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace latnas {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Phase1State snapshot(const SearchNetwork& net, int epoch, double temperature,
                     const RngStream& gumbel, const RngStream& drop,
                     std::vector<StepLog> history) {
  Phase1State st;
  st.epoch = epoch;
  st.temperature = temperature;
  for (const SuperBlock& sb : net.super_blocks) st.alphas.push_back(sb.alpha.values());
  st.gumbel_rng_state = gumbel.save_state();
  st.dropout_rng_state = drop.save_state();
  st.history = std::move(history);
  return st;
}

}  // namespace

int Phase1Config::warmup_epochs() const {
  return static_cast<int>(std::ceil(arch_warmup_fraction * static_cast<double>(epochs)));
}

void Phase1Config::validate() const {
  if (epochs < 1) throw ConfigError("phase1.epochs must be >= 1");
  if (arch_data_fraction <= 0.0 || arch_data_fraction > 1.0) {
    throw ConfigError("phase1.arch_data_fraction must be in (0, 1]");
  }
  if (arch_warmup_fraction < 0.0 || arch_warmup_fraction >= 1.0) {
    throw ConfigError("phase1.arch_warmup_fraction must be in [0, 1)");
  }
  if (initial_temperature <= 0.0) throw ConfigError("phase1.initial_temperature must be positive");
  if (temperature_anneal_rate <= 0.0 || temperature_anneal_rate > 1.0) {
    throw ConfigError("phase1.temperature_anneal_rate must be in (0, 1]");
  }
  if (target_ratio <= 0.0 || target_ratio > 1.0) {
    throw ConfigError("phase1.target_ratio must be in (0, 1]");
  }
}

double anneal_temperature(double temperature, double rate) {
  return std::max(temperature * rate, 1e-3);
}

std::vector<std::size_t> select_arch_subset(std::size_t n, double fraction, RngStream& rng) {
  if (n == 0) throw ParamError("select_arch_subset: no batches");
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ParamError("select_arch_subset: fraction must be in (0, 1]");
  }
  std::size_t k = static_cast<std::size_t>(fraction * static_cast<double>(n));
  k = std::max<std::size_t>(k, 1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first k entries are a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(static_cast<int>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void save_phase1_checkpoint(const Phase1State& state, const std::string& path) {
  std::ostringstream os;
  os << "latnas-phase1-checkpoint v1\n";
  os << "epoch: " << state.epoch << "\n";
  os << "temperature: " << fmt_double(state.temperature) << "\n";
  os << "slots: " << state.alphas.size() << "\n";
  for (const auto& a : state.alphas) {
    os << "alpha:";
    for (double v : a) os << ' ' << fmt_double(v);
    os << "\n";
  }
  os << "rng_gumbel: " << state.gumbel_rng_state << "\n";
  os << "rng_dropout: " << state.dropout_rng_state << "\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint to '" + path + "'");
  f << os.str();
}

Phase1State load_phase1_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read checkpoint from '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "latnas-phase1-checkpoint v1") {
    throw DataError("checkpoint '" + path + "': bad magic line");
  }
  Phase1State st;
  auto expect = [&](const std::string& key) {
    if (!std::getline(f, line) || line.compare(0, key.size() + 2, key + ": ") != 0) {
      throw DataError("checkpoint '" + path + "': expected field '" + key + "'");
    }
    return line.substr(key.size() + 2);
  };
  st.epoch = std::stoi(expect("epoch"));
  st.temperature = std::strtod(expect("temperature").c_str(), nullptr);
  const int slots = std::stoi(expect("slots"));
  for (int s = 0; s < slots; ++s) {
    if (!std::getline(f, line) || line.compare(0, 6, "alpha:") != 0) {
      throw DataError("checkpoint '" + path + "': expected alpha line");
    }
    std::istringstream is(line.substr(6));
    std::vector<double> a;
    std::string tok;
    while (is >> tok) a.push_back(std::strtod(tok.c_str(), nullptr));
    st.alphas.push_back(std::move(a));
  }
  st.gumbel_rng_state = expect("rng_gumbel");
  st.dropout_rng_state = expect("rng_dropout");
  return st;
}

Phase1State run_phase1(SearchNetwork& net, const LatencyTable& table, const Phase1Config& cfg,
                       const Corpus& corpus, const Phase1EpochHook& on_epoch,
                       const Phase1StepHook& on_step, const Phase1EpochHook& on_abort) {
  cfg.validate();
  const auto menus = net.option_menus();
  std::vector<std::string> wanted;
  for (const auto& menu : menus)
    for (const BlockSpec& opt : menu) wanted.push_back(opt.key());
  for (const BlockSpec& s : net.backbone.slots) wanted.push_back(s.key());
  table.require_covers(wanted);
  const double baseline_us = baseline_latency(net.backbone, table);

  auto net_opt = Optimizer::create(cfg.net_opt, net.network_params());
  auto arch_opt = Optimizer::create(cfg.arch_opt, net.arch_params());
  RngStream gumbel_rng(cfg.seed, Stream::Gumbel);
  RngStream dropout_rng(cfg.seed, Stream::Dropout);
  RngStream subset_rng(cfg.seed, Stream::Synth);

  const int warmup = cfg.warmup_epochs();
  double temperature = cfg.initial_temperature;
  std::vector<StepLog> history;

  auto abort_numeric = [&](int epoch, const char* what) {
    if (on_abort) on_abort(snapshot(net, epoch, temperature, gumbel_rng, dropout_rng, history));
    throw NumericError(std::string("phase 1: non-finite ") + what + " at epoch " +
                       std::to_string(epoch));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchConfig bc = cfg.batch;
    bc.order_seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch);
    const std::vector<Batch> batch_list = batches(corpus, Split::Train, bc);

    // (a) network-weight pass: 100% of batches, hard sampling, CE only.
    for (std::size_t step = 0; step < batch_list.size(); ++step) {
      const Batch& b = batch_list[step];
      ForwardCtx ctx;
      ctx.training = true;
      ctx.dropout = cfg.dropout;
      ctx.moe_dropout = cfg.moe_dropout;
      ctx.dropout_rng = &dropout_rng;
      SearchForward fwd =
          net.forward(b.inputs, b.batch_size, b.seq_len, ctx, SampleMode::Hard, temperature,
                      gumbel_rng);
      Tensor ce = cross_entropy(fwd.logits, b.targets);
      if (!std::isfinite(ce.value())) abort_numeric(epoch, "network-pass loss");
      net_opt->zero_grad();
      arch_opt->zero_grad();
      backward(ce);
      net_opt->clip_global_norm(cfg.grad_clip);
      net_opt->step();
      StepLog log{epoch, static_cast<int>(step), 'n', ce.value(), 0.0, 0, 0.0, temperature};
      history.push_back(log);
      if (on_step) on_step(log);
    }

    // (b) architecture-weight pass over a fresh random subset.
    if (epoch >= warmup) {
      const auto subset =
          select_arch_subset(batch_list.size(), cfg.arch_data_fraction, subset_rng);
      for (std::size_t si = 0; si < subset.size(); ++si) {
        const Batch& b = batch_list[subset[si]];
        ForwardCtx ctx;
        ctx.training = true;
        ctx.dropout = cfg.dropout;
        ctx.moe_dropout = cfg.moe_dropout;
        ctx.dropout_rng = &dropout_rng;
        SearchForward fwd =
            net.forward(b.inputs, b.batch_size, b.seq_len, ctx, SampleMode::Soft, temperature,
                        gumbel_rng);
        Tensor ce = cross_entropy(fwd.logits, b.targets);
        LatencyEstimate est = estimate_latency(fwd.slot_probs, menus, table);
        LatencyLossResult ll = latency_loss(est, {cfg.target_ratio, baseline_us});
        Tensor total = phase1_total_loss(ce, ll);
        if (!std::isfinite(total.value())) abort_numeric(epoch, "architecture-pass loss");
        net_opt->zero_grad();
        arch_opt->zero_grad();
        backward(total);
        arch_opt->clip_global_norm(cfg.grad_clip);
        arch_opt->step();
        StepLog log{epoch,      static_cast<int>(si),       'a',        ce.value(),
                    ll.lat_loss, ll.beta, est.total_us.value(), temperature};
        history.push_back(log);
        if (on_step) on_step(log);
      }
      temperature = anneal_temperature(temperature, cfg.temperature_anneal_rate);
    }

    if (on_epoch) {
      on_epoch(snapshot(net, epoch, temperature, gumbel_rng, dropout_rng, {}));
    }
  }
  return snapshot(net, cfg.epochs - 1, temperature, gumbel_rng, dropout_rng, std::move(history));
}

}  // namespace latnas
