#include "hats/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "hats/checkpoint.hpp"
#include "hats/eval.hpp"
#include "hats/image.hpp"
#include "hats/losses.hpp"
#include "hats/util.hpp"

namespace hats::trainer {

using losses::MaskTensor;

void TrainConfig::validate() const {
  if (total_epochs < 1) throw Error("train config: total_epochs must be ≥ 1");
  if (warmup() < 0 || warmup() > total_epochs)
    throw Error("train config: warmup must lie in [0, total]");
  if (lambda_hats < 0) throw Error("train config: lambda must be ≥ 0");
  if (lr <= 0) throw Error("train config: learning rate must be positive");
  if (batch_size < 1) throw Error("train config: batch size must be ≥ 1");
  if (policy.kind == PeerPolicy::Kind::TopKByScale && policy.k < 1)
    throw Error("train config: top-k policy needs k ≥ 1");
  if (policy.kind == PeerPolicy::Kind::Threshold && policy.s_min < 0)
    throw Error("train config: threshold policy needs s_min ≥ 0");
}

taxonomy::Relation Matrices::relation(int i, int j) const {
  ++reads;
  return taxonomy->at(i, j);
}

double Matrices::weight(int i, int j) const {
  ++reads;
  return scale->at(i, j);
}

std::vector<Peer> select_peers(int i, const Matrices& mats, const PeerPolicy& policy) {
  const int n = mats.taxonomy->n;
  std::vector<Peer> related;
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    const taxonomy::Relation r = mats.relation(i, j);
    if (r == taxonomy::Relation::Self || r == taxonomy::Relation::Unrelated) continue;
    related.push_back({j, r, mats.weight(i, j)});
  }
  switch (policy.kind) {
    case PeerPolicy::Kind::AllRelated:
      return related;
    case PeerPolicy::Kind::Threshold: {
      std::vector<Peer> out;
      for (const Peer& p : related)
        if (p.s_ij >= policy.s_min) out.push_back(p);
      return out;
    }
    case PeerPolicy::Kind::TopKByScale: {
      std::stable_sort(related.begin(), related.end(), [](const Peer& a, const Peer& b) {
        if (a.s_ij != b.s_ij) return a.s_ij > b.s_ij;
        return a.class_index < b.class_index;
      });
      if (static_cast<int>(related.size()) > policy.k) related.resize(static_cast<std::size_t>(policy.k));
      return related;
    }
  }
  throw Error("select_peers: unknown policy");
}

Adam::Adam(std::vector<std::pair<std::string, ad::Tensor>> params, double lr)
    : params_(std::move(params)), lr_(lr) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

void Adam::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    ad::Tensor t = params_[p].second;
    for (std::size_t e = 0; e < t->size(); ++e) {
      const double g = t->grad[e];
      m_[p][e] = b1 * m_[p][e] + (1.0 - b1) * g;
      v_[p][e] = b2 * v_[p][e] + (1.0 - b2) * g * g;
      t->val[e] -= lr_ * (m_[p][e] / c1) / (std::sqrt(v_[p][e] / c2) + eps);
      t->grad[e] = 0.0;
    }
  }
}

void Adam::restore(int64_t t, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw Error("adam restore: moment count mismatch");
  for (std::size_t p = 0; p < params_.size(); ++p)
    if (m[p].size() != params_[p].second->size() || v[p].size() != params_[p].second->size())
      throw Error("adam restore: moment shape mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

struct Cropped {
  image::Image img;
  MaskTensor y;
  MaskTensor valid;
  bool padded = false;
};

/// Random crop when the record is larger than the model input, zero-pad
/// when smaller; the mask gets the identical window. `valid` is 1 on real
/// pixels so padding never enters a loss sum.
Cropped crop_to(const data::PatchRecord& rec, int side, Rng& rng) {
  Cropped out;
  const int w = rec.image.w, h = rec.image.h;
  int x0 = 0, y0 = 0;
  if (w > side) x0 = static_cast<int>(rng.below(static_cast<uint64_t>(w - side + 1)));
  if (h > side) y0 = static_cast<int>(rng.below(static_cast<uint64_t>(h - side + 1)));
  out.img = image::crop_pad(rec.image, x0, y0, side);
  out.y = MaskTensor::from_mask(image::crop_pad(rec.mask, x0, y0, side));
  out.valid = MaskTensor::zeros(side, side);
  out.valid.binary = true;
  for (int y = 0; y < std::min(side, h); ++y)
    for (int x = 0; x < std::min(side, w); ++x)
      out.valid.v[static_cast<std::size_t>(y) * side + x] = 1.0;
  out.padded = w < side || h < side;
  return out;
}

[[noreturn]] void dump_divergence(const StepLosses& losses, int epoch,
                                  const std::vector<const data::PatchRecord*>& batch,
                                  const model::Network& net) {
  std::ostringstream os;
  os << "non-finite training loss at epoch " << epoch << ": total=" << losses.total
     << " dice=" << losses.dice << " bce=" << losses.bce << " taxonomy=" << losses.taxonomy
     << "\nbatch:";
  for (const auto* r : batch)
    os << " (patch " << r->patch_id << " class " << r->class_index << " mag " << r->magnification
       << ")";
  os << "\nparam extrema:";
  for (const auto& [name, t] : net.parameters()) {
    double mx = 0.0;
    for (double v : t->val) mx = std::max(mx, std::abs(v));
    os << ' ' << name << "=" << mx;
  }
  std::fputs(os.str().c_str(), stderr);
  std::fputc('\n', stderr);
  throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
              " (diagnostics on stderr)");
}

}  // namespace

StepLosses train_step(model::Network& net, Adam& opt,
                      const std::vector<const data::PatchRecord*>& batch, const Matrices& mats,
                      const TrainConfig& cfg, int epoch, Rng& rng) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const int side = net.config().image_side;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const bool peers_active = epoch > cfg.warmup() && cfg.lambda_hats > 0.0;

  StepLosses out;
  for (const data::PatchRecord* rec : batch) {
    const Cropped cr = crop_to(*rec, side, rng);
    const MaskTensor* valid = cr.padded ? &cr.valid : nullptr;

    const model::SegOutput main = net.forward(cr.img, rec->class_index, rec->magnification);
    const MaskTensor p_i = main.prob_mask();

    std::vector<Peer> peers;
    std::vector<model::SegOutput> peer_outs;
    std::vector<MaskTensor> peer_probs;
    std::vector<losses::PeerTerm> terms;
    if (peers_active) {
      if (mats.taxonomy == nullptr || mats.scale == nullptr)
        throw Error("train_step: matrices required once the warm-up phase ends");
      peers = select_peers(rec->class_index, mats, cfg.policy);
      peer_outs.reserve(peers.size());
      peer_probs.reserve(peers.size());
      for (const Peer& p : peers) {
        peer_outs.push_back(net.forward(cr.img, p.class_index, rec->magnification));
        peer_probs.push_back(peer_outs.back().prob_mask());
      }
      for (std::size_t k = 0; k < peers.size(); ++k)
        terms.push_back({&peer_probs[k], peers[k].relation, peers[k].s_ij});
    }

    const losses::TotalLoss tl = losses::total_loss(cr.y, p_i, terms, cfg.lambda_hats, valid);
    out.total += tl.value * inv_n;
    out.dice += tl.dice * inv_n;
    out.bce += tl.bce * inv_n;
    out.taxonomy += tl.taxonomy * inv_n;

    std::vector<double> seed = tl.grad_p_i;
    for (double& g : seed) g *= inv_n;
    ad::backward(main.prob, seed);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      seed = tl.grad_peers[k];
      for (double& g : seed) g *= inv_n;
      ad::backward(peer_outs[k].prob, seed);
    }
  }

  if (!std::isfinite(out.total)) dump_divergence(out, epoch, batch, net);
  opt.step();
  return out;
}

namespace {

constexpr uint64_t kShuffleStream = 11, kCropStream = 12;

struct ValScore {
  double mean_dice = 0.0;  // over classes with ≥1 val patch
};

/// Deterministic center-crop/pad validation forward; Dice on the window.
ValScore score_val(const model::Network& net, const std::vector<const data::PatchRecord*>& val) {
  const int side = net.config().image_side;
  std::map<int, std::pair<double, int>> per_class;  // class → (dice sum, n)
  for (const data::PatchRecord* rec : val) {
    const int x0 = std::max(0, (rec->image.w - side) / 2);
    const int y0 = std::max(0, (rec->image.h - side) / 2);
    const image::Image img = image::crop_pad(rec->image, x0, y0, side);
    const MaskTensor truth = MaskTensor::from_mask(image::crop_pad(rec->mask, x0, y0, side));
    const MaskTensor prob = net.forward(img, rec->class_index, rec->magnification).prob_mask();
    auto& [s, n] = per_class[rec->class_index];
    s += eval::dice_percent(prob, truth);
    ++n;
  }
  ValScore v;
  if (per_class.empty()) return v;
  for (const auto& [c, sn] : per_class) v.mean_dice += sn.first / sn.second;
  v.mean_dice /= static_cast<double>(per_class.size());
  return v;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_total,train_dice,train_bce,train_taxonomy,val_dice\n";
  char buf[160];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_total,
                  e.train_dice, e.train_bce, e.train_taxonomy, e.val_dice);
    os << buf;
  }
  return os.str();
}

void write_state(const std::filesystem::path& path, const model::Network& net, const Adam& opt,
                 const TrainConfig& cfg, int epoch_done, double best_val, int best_epoch,
                 const std::vector<EpochStats>& history) {
  checkpoint::Writer w;
  w.str(checkpoint::kTrainMagic);
  w.i64(cfg.warmup());
  w.f64(cfg.lambda_hats);
  w.f64(cfg.lr);
  w.i64(cfg.batch_size);
  w.i64(static_cast<int64_t>(cfg.policy.kind));
  w.i64(cfg.policy.k);
  w.f64(cfg.policy.s_min);
  w.u64(cfg.seed);
  w.i64(epoch_done);
  w.f64(best_val);
  w.i64(best_epoch);
  checkpoint::write_config(w, net.config());
  checkpoint::write_named_tensors(w, net.parameters());
  w.i64(opt.t());
  for (std::size_t p = 0; p < net.parameters().size(); ++p) {
    w.doubles(opt.m()[p]);
    w.doubles(opt.v()[p]);
  }
  w.i64(static_cast<int64_t>(history.size()));
  for (const EpochStats& e : history) {
    w.i64(e.epoch);
    w.f64(e.train_total);
    w.f64(e.train_dice);
    w.f64(e.train_bce);
    w.f64(e.train_taxonomy);
    w.f64(e.val_dice);
  }
  util::write_file(path, w.buffer());
}

struct LoadedState {
  int epoch_done = 0;
  double best_val = 0.0;
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

LoadedState read_state(const std::filesystem::path& path, model::Network& net, Adam& opt,
                       const TrainConfig& cfg) {
  checkpoint::Reader r(util::read_file(path));
  if (r.str() != checkpoint::kTrainMagic) throw Error("resume: not a training-state file");
  const int64_t warmup = r.i64();
  const double lambda = r.f64();
  const double lr = r.f64();
  const int64_t batch = r.i64();
  const auto kind = static_cast<PeerPolicy::Kind>(r.i64());
  const int64_t k = r.i64();
  const double s_min = r.f64();
  const uint64_t seed = r.u64();
  if (warmup != cfg.warmup() || lambda != cfg.lambda_hats || lr != cfg.lr ||
      batch != cfg.batch_size || kind != cfg.policy.kind || k != cfg.policy.k ||
      s_min != cfg.policy.s_min || seed != cfg.seed)
    throw Error("resume: config mismatch with saved state");

  LoadedState st;
  st.epoch_done = static_cast<int>(r.i64());
  st.best_val = r.f64();
  st.best_epoch = static_cast<int>(r.i64());
  const model::ModelConfig mc = checkpoint::read_config(r);
  if (!(mc == net.config())) throw Error("resume: model config mismatch with saved state");
  checkpoint::read_named_tensors(r, net.parameters());
  const int64_t t = r.i64();
  std::vector<std::vector<double>> m, v;
  for (std::size_t p = 0; p < net.parameters().size(); ++p) {
    m.push_back(r.doubles());
    v.push_back(r.doubles());
  }
  opt.restore(t, std::move(m), std::move(v));
  const int64_t rows = r.i64();
  for (int64_t i = 0; i < rows; ++i) {
    EpochStats e;
    e.epoch = static_cast<int>(r.i64());
    e.train_total = r.f64();
    e.train_dice = r.f64();
    e.train_bce = r.f64();
    e.train_taxonomy = r.f64();
    e.val_dice = r.f64();
    st.history.push_back(e);
  }
  if (!r.exhausted()) throw Error("resume: trailing bytes in state file");
  return st;
}

}  // namespace

FitResult fit(model::Network& net, const data::Dataset& dataset, const Matrices& mats,
              const TrainConfig& cfg, const std::filesystem::path& out_dir, bool resume) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  std::vector<const data::PatchRecord*> train, val;
  for (const data::PatchRecord& rec : dataset.patches) {
    if (rec.split == "train") train.push_back(&rec);
    if (rec.split == "val") val.push_back(&rec);
  }
  if (train.empty()) throw Error("fit: train split is empty");
  if (val.empty()) throw Error("fit: val split is empty");

  Adam opt(net.parameters(), cfg.lr);
  std::vector<EpochStats> history;
  double best_val = -1.0;  // any first epoch (dice ≥ 0) becomes the best
  int best_epoch = 0;
  int start_epoch = 1;

  const std::filesystem::path state_path = out_dir / kStateFile;
  if (resume && std::filesystem::exists(state_path)) {
    LoadedState st = read_state(state_path, net, opt, cfg);
    history = std::move(st.history);
    best_val = st.best_val;
    best_epoch = st.best_epoch;
    start_epoch = st.epoch_done + 1;
  }

  for (int epoch = start_epoch; epoch <= cfg.total_epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(cfg.seed, static_cast<uint64_t>(epoch), kShuffleStream);
    Rng crop_rng = Rng::derive(cfg.seed, static_cast<uint64_t>(epoch), kCropStream);
    std::vector<const data::PatchRecord*> order = train;
    shuffle_rng.shuffle(order);

    EpochStats es;
    es.epoch = epoch;
    long seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<const data::PatchRecord*> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                                        order.begin() + static_cast<std::ptrdiff_t>(hi));
      const StepLosses sl = train_step(net, opt, batch, mats, cfg, epoch, crop_rng);
      const double w = static_cast<double>(batch.size());
      es.train_total += sl.total * w;
      es.train_dice += sl.dice * w;
      es.train_bce += sl.bce * w;
      es.train_taxonomy += sl.taxonomy * w;
      seen += static_cast<long>(batch.size());
    }
    es.train_total /= static_cast<double>(seen);
    es.train_dice /= static_cast<double>(seen);
    es.train_bce /= static_cast<double>(seen);
    es.train_taxonomy /= static_cast<double>(seen);
    es.val_dice = score_val(net, val).mean_dice;
    history.push_back(es);

    if (es.val_dice > best_val) {
      best_val = es.val_dice;
      best_epoch = epoch;
      checkpoint::save_model(net, out_dir / kBestCheckpoint);
    }
    util::write_file(out_dir / kHistoryCsv, history_csv(history));
    write_state(state_path, net, opt, cfg, epoch, best_val, best_epoch, history);
  }

  return {std::move(history), best_val, best_epoch};
}

}  // namespace hats::trainer
