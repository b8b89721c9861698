#include "fda/model.hpp"

#include <cmath>

#include "fda/rng.hpp"

namespace fda::nn {
inline namespace FDA_NN_ABI {

namespace {

std::string lvl(int64_t l) { return ".l" + std::to_string(l); }

// Values are float-representable in both builds so initial weights agree.
Tensor uniform_init(const Shape5& shape, double bound, uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Real> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<Real>(static_cast<float>(rng.uniform(-bound, bound)));
  return Tensor::from(shape, std::move(v), true);
}

const char* to_string(SkipMode m) { return m == SkipMode::aggregated ? "aggregated" : "noisy_only"; }

}  // namespace

FdaConfig FdaConfig::toy() { return FdaConfig{}; }

FdaConfig FdaConfig::full() {
  FdaConfig c;
  c.channels = {32, 64, 128, 256};
  c.preset = "full";
  return c;
}

void validate(const FdaConfig& cfg) {
  if (cfg.channels.empty()) throw ValidationError("model needs at least one level");
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    if (cfg.channels[i] < 1) throw ValidationError("channel counts must be positive");
    if (i > 0 && cfg.channels[i] <= cfg.channels[i - 1])
      throw ValidationError("channel counts must be strictly increasing");
  }
  if (cfg.r_c < 1) throw ValidationError("r_c must be >= 1");
  if (cfg.in_channels < 1) throw ValidationError("in_channels must be >= 1");
}

nlohmann::ordered_json to_json(const FdaConfig& cfg) {
  return {{"channels", cfg.channels},         {"r_c", cfg.r_c},
          {"in_channels", cfg.in_channels},   {"preset", cfg.preset},
          {"use_cse", cfg.use_cse},           {"use_sdm", cfg.use_sdm},
          {"use_noisy_stream", cfg.use_noisy_stream}, {"mix_skips", to_string(cfg.mix_skips)}};
}

FdaConfig fda_config_from_json(const nlohmann::json& j) {
  FdaConfig c = j.value("preset", std::string("toy")) == "full" ? FdaConfig::full() : FdaConfig::toy();
  try {
    if (j.contains("channels")) c.channels = j.at("channels").get<std::vector<int64_t>>();
    c.r_c = j.value("r_c", c.r_c);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.use_cse = j.value("use_cse", c.use_cse);
    c.use_sdm = j.value("use_sdm", c.use_sdm);
    c.use_noisy_stream = j.value("use_noisy_stream", c.use_noisy_stream);
    const std::string skips = j.value("mix_skips", std::string(to_string(c.mix_skips)));
    if (skips == "aggregated")
      c.mix_skips = SkipMode::aggregated;
    else if (skips == "noisy_only")
      c.mix_skips = SkipMode::noisy_only;
    else
      throw ValidationError("mix_skips must be aggregated or noisy_only");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad model config: ") + e.what());
  }
  validate(c);
  return c;
}

FdaModel::FdaModel(FdaConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  validate(cfg_);
  const auto& F = cfg_.channels;
  const int64_t L = cfg_.levels();
  CounterRng root(seed, 0x1f17);
  uint64_t k = 0;
  auto next = [&] { return root.split(k++).next_u64(); };

  for (const char* stream : {"enc_clean", "enc_noisy"})
    for (int64_t l = 0; l < L; ++l) {
      const std::string p = std::string(stream) + lvl(l);
      add_block(p + ".b0", stream, l == 0 ? cfg_.in_channels : F[l - 1], F[l], next());
      add_block(p + ".b1", stream, F[l], F[l], next());
    }
  for (int64_t l = 0; l < L; ++l) {
    const int64_t hid = cse_hidden(F[l], cfg_.r_c);
    const std::string p = "cse" + lvl(l);
    const double bound = std::sqrt(6.0 / double(F[l] + hid));
    store_.add(p + ".w1", "cse", uniform_init({hid, F[l], 1, 1, 1}, bound, next()));
    store_.add(p + ".w2", "cse", uniform_init({F[l], hid, 1, 1, 1}, bound, next()));
  }
  for (const char* stream : {"clean", "noisy"})
    for (int64_t l = 0; l < L; ++l)
      add_conv(std::string("proj.") + stream + lvl(l), "proj", F[l], F[l], 1, true, next());
  add_decoder("dec_clean", next());
  add_decoder("dec_mix", next());
}

void FdaModel::add_conv(const std::string& name, const std::string& group, int64_t cin, int64_t cout, int64_t k,
                        bool bias, uint64_t seed) {
  const int64_t k3 = k * k * k;
  const double bound = std::sqrt(6.0 / double(cin * k3 + cout * k3));
  store_.add(name + ".w", group, uniform_init({cout, cin, k, k, k}, bound, seed));
  if (bias) store_.add(name + ".b", group, Tensor::zeros({cout, 1, 1, 1, 1}));
}

// conv3 (no bias: the following normalization removes any per-channel offset)
// -> instance norm -> pReLU.
void FdaModel::add_block(const std::string& name, const std::string& group, int64_t cin, int64_t cout,
                         uint64_t seed) {
  add_conv(name + ".conv", group, cin, cout, 3, false, seed);
  store_.add(name + ".in.gamma", group, Tensor::full({cout, 1, 1, 1, 1}, Real(1)));
  store_.add(name + ".in.beta", group, Tensor::zeros({cout, 1, 1, 1, 1}));
  store_.add(name + ".prelu.a", group, Tensor::full({cout, 1, 1, 1, 1}, Real(0.25)));
}

void FdaModel::add_decoder(const std::string& group, uint64_t seed) {
  const auto& F = cfg_.channels;
  CounterRng rng(seed);
  uint64_t k = 0;
  for (int64_t l = cfg_.levels() - 2; l >= 0; --l) {
    const std::string p = group + lvl(l);
    add_block(p + ".up", group, F[l + 1], F[l], rng.split(k++).next_u64());
    add_block(p + ".b0", group, 2 * F[l], F[l], rng.split(k++).next_u64());
    add_block(p + ".b1", group, F[l], F[l], rng.split(k++).next_u64());
  }
  add_conv(group + ".head", group, F[0], 1, 1, true, rng.split(k++).next_u64());
}

Tensor FdaModel::block(const std::string& name, const Tensor& x) const {
  const Tensor y = conv3d(x, store_.get(name + ".conv.w"), {}, 1, 1);
  const Tensor n = instance_norm(y, store_.get(name + ".in.gamma"), store_.get(name + ".in.beta"));
  return prelu(n, store_.get(name + ".prelu.a"));
}

void FdaModel::check_input(const Tensor& x) const {
  const Shape5& s = x.shape();
  if (s.c != cfg_.in_channels)
    throw ValidationError("model expects " + std::to_string(cfg_.in_channels) + " input channel(s), got " +
                          std::to_string(s.c));
  const int64_t m = cfg_.divisor();
  if (s.d % m || s.h % m || s.w % m)
    throw ValidationError("spatial dims " + to_string(s) + " must be divisible by " + std::to_string(m));
}

std::vector<Tensor> FdaModel::encode(const std::string& stream, const Tensor& x) const {
  if (stream != "enc_clean" && stream != "enc_noisy") throw ValidationError("unknown encoder: " + stream);
  check_input(x);
  std::vector<Tensor> feats;
  Tensor h = x;
  for (int64_t l = 0; l < cfg_.levels(); ++l) {
    if (l > 0) h = maxpool3d(h, 2, 2);
    const std::string p = stream + lvl(l);
    h = block(p + ".b1", block(p + ".b0", h));
    feats.push_back(h);
  }
  return feats;
}

Tensor FdaModel::decode(const std::string& group, const std::vector<Tensor>& feats) const {
  Tensor h = feats.back();
  for (int64_t l = cfg_.levels() - 2; l >= 0; --l) {
    const std::string p = group + lvl(l);
    h = block(p + ".up", upsample_nearest(h, 2));
    h = block(p + ".b1", block(p + ".b0", concat_channels(h, feats[l])));
  }
  return conv3d(h, store_.get(group + ".head.w"), store_.get(group + ".head.b"), 1, 0);
}

Tensor FdaModel::forward_clean(const Tensor& x) const {
  std::vector<Tensor> feats = encode("enc_clean", x);
  if (cfg_.use_cse)
    for (int64_t l = 0; l < cfg_.levels(); ++l)
      feats[l] = cse_block(feats[l], store_.get("cse" + lvl(l) + ".w1"), store_.get("cse" + lvl(l) + ".w2"));
  const Tensor logits = decode("dec_clean", feats);
  return cfg_.use_sdm ? tanh(logits) : sigmoid(logits);
}

Tensor FdaModel::forward_noisy(const Tensor& x, NoisyTrace* trace) const {
  const std::vector<Tensor> fc = encode("enc_clean", x);
  const std::vector<Tensor> fn = cfg_.use_noisy_stream ? encode("enc_noisy", x) : std::vector<Tensor>{};
  std::vector<Tensor> agg;
  for (int64_t l = 0; l < cfg_.levels(); ++l) {
    const std::string pc = "proj.clean" + lvl(l), pn = "proj.noisy" + lvl(l);
    Tensor a = conv3d(fc[l], store_.get(pc + ".w"), store_.get(pc + ".b"), 1, 0);
    if (cfg_.use_noisy_stream) a = add(a, conv3d(fn[l], store_.get(pn + ".w"), store_.get(pn + ".b"), 1, 0));
    agg.push_back(a);
  }
  std::vector<Tensor> skips = agg;
  if (cfg_.mix_skips == SkipMode::noisy_only && cfg_.use_noisy_stream)
    for (int64_t l = 0; l + 1 < cfg_.levels(); ++l) skips[l] = fn[l];
  if (trace) *trace = {fc, fn, agg};
  return sigmoid(decode("dec_mix", skips));
}

std::map<std::string, std::vector<std::string>> FdaModel::param_groups() const {
  std::map<std::string, std::vector<std::string>> g;
  for (const auto& e : store_.entries()) g[e.group].push_back(e.name);
  return g;
}

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
