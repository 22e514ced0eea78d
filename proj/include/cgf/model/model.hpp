#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "cgf/cafs/baselines.hpp"
#include "cgf/cafs/can.hpp"
#include "cgf/data/image.hpp"
#include "cgf/dsr/dsr.hpp"
#include "cgf/sfa/sfa.hpp"

namespace cgf::model {

struct ModelConfig {
  std::size_t channels = 4;
  std::size_t clusters = 32;  // K
  std::size_t window = 3;     // k
  std::size_t rank = 4;
  std::size_t can_hidden = 64;
  std::size_t d = 32;
  std::size_t heads = 8;
  std::size_t dsr_stages = 2;
  std::size_t ratio = 4;
  std::size_t kmeans_iters = 50;
  std::uint64_t seed = 0;  // parameter init and clustering seed
  cafs::Separator separator = cafs::Separator::cluster;
  bool ncb = true;
  bool gating = true;
  dsr::TokenLayout mgb_tokens = dsr::TokenLayout::channel;
  sfa::SfaMode sfa_mode = sfa::SfaMode::full;
  bool global_skip = false;

  void validate() const {
    if (channels == 0) throw InvalidArgument("channels must be positive");
    if (heads == 0 || d % heads != 0) throw InvalidArgument("d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    if (window % 2 == 0) throw InvalidArgument("window size k must be odd");
    if (clusters == 0) throw InvalidArgument("clusters must be positive");
    if (rank == 0) throw InvalidArgument("rank must be positive");
    if (ratio == 0) throw InvalidArgument("ratio must be positive");
  }
};

inline std::string to_string(dsr::TokenLayout t) { return t == dsr::TokenLayout::channel ? "channel" : "spatial"; }

inline dsr::TokenLayout parse_layout(const std::string& s) {
  if (s == "channel") return dsr::TokenLayout::channel;
  if (s == "spatial") return dsr::TokenLayout::spatial;
  throw InvalidArgument("unknown token layout '" + s + "' (expected channel or spatial)");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},     {"clusters", c.clusters},
          {"window", c.window},         {"rank", c.rank},
          {"can_hidden", c.can_hidden}, {"d", c.d},
          {"heads", c.heads},           {"dsr_stages", c.dsr_stages},
          {"ratio", c.ratio},           {"kmeans_iters", c.kmeans_iters},
          {"seed", c.seed},             {"separator", cafs::to_string(c.separator)},
          {"ncb", c.ncb},               {"gating", c.gating},
          {"mgb_tokens", to_string(c.mgb_tokens)}, {"sfa_mode", sfa::to_string(c.sfa_mode)},
          {"global_skip", c.global_skip}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.channels = j.at("channels").get<std::size_t>();
    c.clusters = j.at("clusters").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.rank = j.at("rank").get<std::size_t>();
    c.can_hidden = j.at("can_hidden").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.dsr_stages = j.at("dsr_stages").get<std::size_t>();
    c.ratio = j.at("ratio").get<std::size_t>();
    c.kmeans_iters = j.at("kmeans_iters").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.separator = cafs::parse_separator(j.at("separator").get<std::string>());
    c.ncb = j.at("ncb").get<bool>();
    c.gating = j.at("gating").get<bool>();
    c.mgb_tokens = parse_layout(j.at("mgb_tokens").get<std::string>());
    c.sfa_mode = sfa::parse_mode(j.at("sfa_mode").get<std::string>());
    c.global_skip = j.at("global_skip").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// Everything about one input pair that does not depend on parameters:
// upsampled MS, and either the cluster plans or the fixed baseline split.
template <typename T>
struct Prepared {
  BasicTensor<T> pan;    // [1,1,H,W]
  BasicTensor<T> ms_up;  // [1,C,H,W]
  std::optional<cafs::ClusterPlan<T>> plan_p, plan_m;
  cafs::FreqPair<T> fixed_p, fixed_m;
};

template <typename T>
struct ForwardTrace {
  cafs::FreqPair<T> pan_bands, ms_bands;
  BasicTensor<T> h_e, l_e, h_bg, l_bg, out;
};

// O = SFA(DSR(CAFS(pan, up(lrms)))).
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    if (cfg_.separator == cafs::Separator::cluster) {
      can_p_ = cafs::CanBranch<T>(store_, "cafs.can_p", 1, cfg_.window, cfg_.rank, cfg_.can_hidden);
      can_m_ = cafs::CanBranch<T>(store_, "cafs.can_m", cfg_.channels, cfg_.window, cfg_.rank, cfg_.can_hidden);
    }
    proj_ = cafs::Projection<T>(store_, "cafs.proj", cfg_.channels, cfg_.d);
    dsr_ = dsr::Dsr<T>(store_, "dsr",
                       {.d = cfg_.d, .heads = cfg_.heads, .stages = cfg_.dsr_stages, .ncb = cfg_.ncb, .gating = cfg_.gating,
                        .mgb_tokens = cfg_.mgb_tokens});
    sfa_ = sfa::Sfa<T>(store_, "sfa",
                       {.d = cfg_.d, .heads = cfg_.heads, .channels = cfg_.channels, .mode = cfg_.sfa_mode, .global_skip = cfg_.global_skip});
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  // `clusters` overrides K (inference-time re-clustering).
  Prepared<T> prepare(const data::SamplePair& pair, std::optional<std::size_t> clusters = std::nullopt) const {
    pair.validate();
    if (pair.ratio != cfg_.ratio) throw ShapeError("pair ratio " + std::to_string(pair.ratio) + " != model ratio " + std::to_string(cfg_.ratio));
    if (pair.lrms.channels != cfg_.channels) {
      throw ShapeError("lrms has " + std::to_string(pair.lrms.channels) + " bands, model expects " + std::to_string(cfg_.channels));
    }
    return prepare(data::to_tensor<T>(pair.pan), data::to_tensor<T>(pair.lrms), clusters);
  }

  Prepared<T> prepare(const BasicTensor<T>& pan, const BasicTensor<T>& lrms, std::optional<std::size_t> clusters = std::nullopt) const {
    Prepared<T> p;
    p.pan = pan;
    {
      NoGradGuard ng;
      p.ms_up = bilinear_upsample(lrms, cfg_.ratio);
    }
    if (p.ms_up.size(2) != pan.size(2) || p.ms_up.size(3) != pan.size(3)) {
      throw ShapeError("upsampled lrms " + cgf::to_string(p.ms_up.shape()) + " does not match pan " + cgf::to_string(pan.shape()));
    }
    if (cfg_.separator == cafs::Separator::cluster) {
      const std::size_t K = clusters.value_or(cfg_.clusters);
      p.plan_p = cafs::plan_clusters(p.pan, K, cfg_.window, cfg_.seed, cfg_.kmeans_iters);
      p.plan_m = cafs::plan_clusters(p.ms_up, K, cfg_.window, cfg_.seed + 1, cfg_.kmeans_iters);
    } else {
      p.fixed_p = cafs::baseline_separate(p.pan, cfg_.separator);
      p.fixed_m = cafs::baseline_separate(p.ms_up, cfg_.separator);
    }
    return p;
  }

  ForwardTrace<T> trace(const Prepared<T>& p) const {
    ForwardTrace<T> t;
    if (p.plan_p) {
      t.pan_bands = cafs::can_apply(p.pan, *p.plan_p, can_p_);
      t.ms_bands = cafs::can_apply(p.ms_up, *p.plan_m, can_m_);
    } else {
      t.pan_bands = p.fixed_p;
      t.ms_bands = p.fixed_m;
    }
    std::tie(t.h_e, t.l_e) = proj_(t.pan_bands.high, t.ms_bands.high, t.pan_bands.low, t.ms_bands.low);
    std::tie(t.h_bg, t.l_bg) = dsr_(t.h_e, t.l_e);
    t.out = sfa_(p.pan, p.ms_up, t.h_bg, t.l_bg);
    return t;
  }

  BasicTensor<T> forward(const Prepared<T>& p) const { return trace(p).out; }

  data::Image predict(const data::SamplePair& pair, std::optional<std::size_t> clusters = std::nullopt) const {
    NoGradGuard ng;
    return data::from_tensor(forward(prepare(pair, clusters)));
  }

  const cafs::CanBranch<T>& can_pan() const { return can_p_; }
  const cafs::CanBranch<T>& can_ms() const { return can_m_; }
  const dsr::Dsr<T>& dsr() const { return dsr_; }
  const sfa::Sfa<T>& sfa() const { return sfa_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  cafs::CanBranch<T> can_p_, can_m_;
  cafs::Projection<T> proj_;
  dsr::Dsr<T> dsr_;
  sfa::Sfa<T> sfa_;
};

}  // namespace cgf::model
