#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pcl_forge/common/box.hpp"
#include "pcl_forge/common/rng.hpp"
#include "pcl_forge/detect/anchors.hpp"
#include "pcl_forge/detect/backbone.hpp"
#include "pcl_forge/detect/bilinear.hpp"
#include "pcl_forge/detect/config.hpp"
#include "pcl_forge/detect/matching.hpp"
#include "pcl_forge/detect/nms.hpp"
#include "pcl_forge/detect/proposal.hpp"
#include "pcl_forge/detect/roi_pool.hpp"
#include "pcl_forge/noise/constrained.hpp"
#include "pcl_forge/noise/srm.hpp"
#include "pcl_forge/nn/layers.hpp"
#include "pcl_forge/pcl/loss.hpp"
#include "pcl_forge/pcl/pairs.hpp"
#include "pcl_forge/pcl/projection.hpp"
#include "pcl_forge/synth/image.hpp"
#include "pcl_forge/train/losses.hpp"

namespace pclf::detect {

// One image with its ground-truth boxes (empty for unlabeled images).
struct GroupSample {
  synth::Image image;
  std::vector<Box> gt;
};

// Sampling decisions for one image. Recorded on the first pass and replayed
// when frozen so that the loss is a smooth function of the parameters
// (finite-difference checks and resumable determinism rely on this).
struct ImagePlan {
  std::vector<int> rpn_anchors;
  std::vector<int> rpn_labels;
  std::vector<Deltas> rpn_targets;
  std::vector<Box> rois;
  std::vector<double> roi_objectness;
  std::vector<int> roi_labels;        // 1 tampered / 0 authentic (labeled images)
  std::vector<Deltas> roi_targets;
  pcl::Partition partition;
};

struct GroupPlan {
  std::vector<ImagePlan> images;
};

struct StepPlan {
  bool frozen = false;
  GroupPlan labeled;
  GroupPlan unlabeled;
};

struct GroupLoss {
  train::LossPair rpn;
  train::LossPair rcnn;
  double pcl = 0;
  int pcl_positives = 0;
  int rois = 0;
};

struct RpnOutput {
  // Per image, per anchor (anchor order of generate_anchors).
  std::vector<std::vector<double>> objectness;
  std::vector<std::vector<double>> logits;
  std::vector<std::vector<Deltas>> deltas;
};

struct ImageResult {
  std::vector<Proposal> proposals;
  std::vector<Detection> detections;
};

struct InferOptions {
  bool zero_noise = false;      // feed an all-zero noise view
  bool keep_features = false;   // fill Proposal::h_rgb / h_noise
};

// Decodes RPN deltas onto anchors, clips, runs NMS and keeps the top k by
// objectness (ties go to the lower anchor index).
inline std::vector<Proposal> select_proposals(std::span<const double> objectness, std::span<const Deltas> deltas,
                                              const std::vector<Anchor>& anchors, double image_w, double image_h,
                                              int k, double nms_iou) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  std::vector<int> source;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Box b = clip_box(decode_box(anchors[a].box, deltas[a]), image_w, image_h);
    if (!b.valid()) continue;
    boxes.push_back(b);
    scores.push_back(objectness[a]);
    source.push_back(static_cast<int>(a));
  }
  std::vector<Proposal> out;
  for (int i : nms(boxes, scores, nms_iou, static_cast<std::size_t>(std::max(k, 0)))) {
    Proposal p;
    p.box = boxes[static_cast<std::size_t>(i)];
    p.objectness = scores[static_cast<std::size_t>(i)];
    p.anchor_index = source[static_cast<std::size_t>(i)];
    out.push_back(std::move(p));
  }
  return out;
}

// Two-stream detector. The RGB stream drives the RPN and the localization
// head; the classification head sees the bilinear fusion of both streams.
// With WithPcl = false the contrastive projection heads do not exist at all.
template <typename T, bool WithPcl = true>
class Detector {
 public:
  using Scalar = T;
  static constexpr bool kHasPcl = WithPcl;

  explicit Detector(ModelConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.anchor_scales.empty()) cfg_.anchor_scales = default_scales(cfg_.image_size);
    PCLF_REQUIRE(cfg_.image_size >= 32, InvalidArgument, "detector: image size must be >= 32");
    const auto seed = cfg_.seed;
    const int noise_channels =
        cfg_.noise_view == NoiseView::srm ? noise::kSrmKernelCount : cfg_.constrained_kernels;
    if (cfg_.noise_view == NoiseView::constrained) {
      constrained_ = &params_.add("noise.constrained.weight",
                                  {cfg_.constrained_kernels, 3, noise::kConstrainedSize, noise::kConstrainedSize},
                                  nn::Init::normal, seed, 0.1);
      noise::project_constrained(constrained_->value);
    }
    rgb_ = Backbone<T>(params_, "rgb", 3, cfg_.backbone_channels, seed);
    noise_ = Backbone<T>(params_, "noise", noise_channels, cfg_.backbone_channels, seed);
    const int c = cfg_.feature_channels();
    const int a = anchors_per_cell();
    rpn_conv_ = nn::Conv2d<T>(params_, "rpn.conv", c, c, 3, 1, 1, seed, true, 0.01);
    rpn_cls_ = nn::Conv2d<T>(params_, "rpn.cls", c, a, 1, 1, 0, seed, true, 0.01);
    rpn_reg_ = nn::Conv2d<T>(params_, "rpn.reg", c, 4 * a, 1, 1, 0, seed, true, 0.01);
    const int pooled = c * kRoiGrid * kRoiGrid;
    for (int s = 0; s < 2; ++s) {
      const std::string base = s == 0 ? "roi.rgb" : "roi.noise";
      mlp_[s][0] = nn::Linear<T>(params_, base + ".fc1", pooled, cfg_.roi_dim, seed, true);
      mlp_[s][1] = nn::Linear<T>(params_, base + ".fc2", cfg_.roi_dim, cfg_.roi_dim, seed, true);
    }
    reduce_rgb_ = nn::Linear<T>(params_, "rcnn.reduce_rgb", cfg_.roi_dim, cfg_.bilinear_dim, seed, true,
                                1.0 / std::sqrt(cfg_.roi_dim));
    reduce_noise_ = nn::Linear<T>(params_, "rcnn.reduce_noise", cfg_.roi_dim, cfg_.bilinear_dim, seed, true,
                                  1.0 / std::sqrt(cfg_.roi_dim));
    cls_ = nn::Linear<T>(params_, "rcnn.cls", cfg_.bilinear_dim * cfg_.bilinear_dim, 2, seed, true, 0.01);
    loc_ = nn::Linear<T>(params_, "rcnn.loc", cfg_.roi_dim, 4, seed, true, 0.001);
    if constexpr (WithPcl) {
      proj_rgb_ = pcl::ProjectionHead<T>(params_, pcl::Stream::rgb, cfg_.roi_dim, cfg_.proj_hidden, cfg_.proj_dim, seed);
      proj_noise_ =
          pcl::ProjectionHead<T>(params_, pcl::Stream::noise, cfg_.roi_dim, cfg_.proj_hidden, cfg_.proj_dim, seed);
    }
    anchors_ = generate_anchors(cfg_.feature_size(), cfg_.feature_size(), cfg_.stride(), cfg_.anchor_scales,
                                cfg_.anchor_ratios);
  }

  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  int anchors_per_cell() const { return static_cast<int>(cfg_.anchor_scales.size() * cfg_.anchor_ratios.size()); }
  nn::Param<T>* constrained_weights() { return constrained_; }

  // Skip the constraint check in the noise layer (finite-difference probes
  // perturb single taps and would otherwise trip it).
  void set_validate_constraint(bool v) { validate_constraint_ = v; }

  const Backbone<T>& rgb_backbone() const { return rgb_; }
  const Backbone<T>& noise_backbone() const { return noise_; }

  // ---- building blocks ---------------------------------------------------

  static Tensor<T> to_tensor(std::span<const synth::Image* const> images) {
    PCLF_REQUIRE(!images.empty(), InvalidArgument, "empty image batch");
    const int h = images[0]->height, w = images[0]->width;
    Tensor<T> x({static_cast<int>(images.size()), 3, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
      PCLF_REQUIRE(images[n]->height == h && images[n]->width == w, InvalidArgument, "mixed image sizes in batch");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) x.at(static_cast<int>(n), c, y, xx) = static_cast<T>(images[n]->at(y, xx, c));
    }
    return x;
  }

  Tensor<T> noise_view(const Tensor<T>& x) const {
    if (cfg_.noise_view == NoiseView::srm) return noise::srm_residual(x, cfg_.srm_truncation);
    return validate_constraint_ ? noise::constrained_forward(x, constrained_->value)
                                : noise::constrained_forward_unchecked(x, constrained_->value);
  }

  RpnOutput rpn_forward(const Tensor<T>& rgb_feat) const {
    typename nn::Conv2d<T>::Cache c0, c1, c2;
    typename nn::Relu<T>::Cache r;
    Tensor<T> h = rpn_conv_.forward(rgb_feat, c0);
    nn::Relu<T>::forward_inplace(h, r);
    return unpack_rpn(rpn_cls_.forward(h, c1), rpn_reg_.forward(h, c2));
  }

  // ---- training ----------------------------------------------------------

  // Forward pass plus (optionally) backward pass over one step: a labeled
  // group and an unlabeled group, each normalized with its own batch
  // statistics. Gradients accumulate into params().grad. Returns the
  // component losses; the caller composes the total.
  train::LossBreakdown compute_loss(std::span<const GroupSample> labeled, std::span<const GroupSample> unlabeled,
                                    const LossConfig& lc, Rng& rng, StepPlan& plan, bool backward) {
    GroupLoss gl, gu;
    if (!labeled.empty()) gl = run_group(labeled, true, lc, rng, plan.labeled, plan.frozen, backward);
    const bool pcl_active = WithPcl && lc.strategy != pcl::Strategy::off;
    if (!unlabeled.empty() && pcl_active) gu = run_group(unlabeled, false, lc, rng, plan.unlabeled, plan.frozen, backward);
    plan.frozen = true;
    train::LossWeights w{lc.lambda1, lc.lambda2, pcl_active ? lc.beta : 0.0, 1.0};
    train::LossBreakdown b = train::total_loss_labeled(gl.rpn, gl.rcnn, gl.pcl, w);
    b.pcl_unlabeled = gu.pcl;
    b.omega = unlabeled.empty() || !pcl_active ? 0.0 : lc.omega;
    b.total = b.recombine();
    last_labeled_ = gl;
    last_unlabeled_ = gu;
    return b;
  }

  const GroupLoss& last_labeled_group() const { return last_labeled_; }
  const GroupLoss& last_unlabeled_group() const { return last_unlabeled_; }
  const pcl::LossDiagnostics& pcl_diagnostics() const { return pcl_diag_; }

  // ---- inference ---------------------------------------------------------

  std::vector<ImageResult> infer(std::span<const synth::Image> images, InferOptions opt = {}) const {
    std::vector<ImageResult> results;
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
      std::vector<const synth::Image*> ptrs;
      for (std::size_t i = start; i < std::min(images.size(), start + kChunk); ++i) ptrs.push_back(&images[i]);
      auto chunk = infer_chunk(ptrs, opt);
      for (auto& r : chunk) results.push_back(std::move(r));
    }
    return results;
  }

 private:
  static constexpr int kRgb = 0;
  static constexpr int kNoise = 1;

  RpnOutput unpack_rpn(const Tensor<T>& cls, const Tensor<T>& reg) const {
    RpnOutput out;
    const int n = cls.dim(0), fh = cls.dim(2), fw = cls.dim(3), a = anchors_per_cell();
    out.objectness.resize(static_cast<std::size_t>(n));
    out.logits.resize(static_cast<std::size_t>(n));
    out.deltas.resize(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      auto& obj = out.objectness[static_cast<std::size_t>(b)];
      auto& lg = out.logits[static_cast<std::size_t>(b)];
      auto& del = out.deltas[static_cast<std::size_t>(b)];
      obj.resize(anchors_.size());
      lg.resize(anchors_.size());
      del.resize(anchors_.size());
      for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x)
          for (int k = 0; k < a; ++k) {
            const std::size_t idx = (static_cast<std::size_t>(y) * fw + x) * a + k;
            lg[idx] = cls.at(b, k, y, x);
            obj[idx] = train::sigmoid(lg[idx]);
            for (int c = 0; c < 4; ++c) del[idx][static_cast<std::size_t>(c)] = reg.at(b, 4 * k + c, y, x);
          }
    }
    return out;
  }

  // Position of anchor `idx` inside the [N, A, h, w] / [N, 4A, h, w] head outputs.
  struct AnchorSlot {
    int k, y, x;
  };
  AnchorSlot slot(int idx) const {
    const int a = anchors_per_cell(), fw = cfg_.feature_size();
    const int cell = idx / a;
    return {idx % a, cell / fw, cell % fw};
  }

  void sample_rpn(const std::vector<AnchorMatch>& matches, Rng& rng, ImagePlan& ip) const {
    std::vector<int> pos, neg;
    for (int i = 0; i < static_cast<int>(matches.size()); ++i) {
      if (matches[static_cast<std::size_t>(i)].label == AnchorLabel::positive) pos.push_back(i);
      else if (matches[static_cast<std::size_t>(i)].label == AnchorLabel::negative) neg.push_back(i);
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const std::size_t n_pos =
        std::min(pos.size(), static_cast<std::size_t>(std::lround(cfg_.rpn_batch * cfg_.rpn_positive_fraction)));
    const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(cfg_.rpn_batch) - n_pos);
    std::vector<int> chosen(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
    chosen.insert(chosen.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
    std::sort(chosen.begin(), chosen.end());
    for (int i : chosen) {
      const auto& m = matches[static_cast<std::size_t>(i)];
      ip.rpn_anchors.push_back(i);
      ip.rpn_labels.push_back(m.label == AnchorLabel::positive ? 1 : 0);
      ip.rpn_targets.push_back(m.target);
    }
  }

  // Training RoIs for a labeled image: the RPN proposals plus the ground-truth
  // boxes, sampled to rcnn_batch with at most rcnn_tampered_fraction tampered.
  void sample_rois(const std::vector<Proposal>& props, const std::vector<Box>& gt, double epsilon, Rng& rng,
                   ImagePlan& ip) const {
    std::vector<Box> pool;
    std::vector<double> obj;
    for (const auto& p : props) {
      pool.push_back(p.box);
      obj.push_back(p.objectness);
    }
    for (const auto& g : gt) {
      pool.push_back(g);
      obj.push_back(1.0);
    }
    std::vector<int> fg, bg;
    std::vector<int> best_gt(pool.size(), 0);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      double best = -1;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        const double iou = box_iou(pool[i], gt[g]);
        if (iou > best) {
          best = iou;
          best_gt[i] = static_cast<int>(g);
        }
      }
      (best > epsilon ? fg : bg).push_back(static_cast<int>(i));
    }
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    const std::size_t n_fg =
        std::min(fg.size(), static_cast<std::size_t>(std::lround(cfg_.rcnn_batch * cfg_.rcnn_tampered_fraction)));
    const std::size_t n_bg = std::min(bg.size(), static_cast<std::size_t>(cfg_.rcnn_batch) - n_fg);
    std::vector<int> chosen(fg.begin(), fg.begin() + static_cast<std::ptrdiff_t>(n_fg));
    chosen.insert(chosen.end(), bg.begin(), bg.begin() + static_cast<std::ptrdiff_t>(n_bg));
    std::sort(chosen.begin(), chosen.end());
    const std::vector<int> fg_sorted = [&] {
      std::vector<int> v(fg.begin(), fg.begin() + static_cast<std::ptrdiff_t>(n_fg));
      std::sort(v.begin(), v.end());
      return v;
    }();
    for (int i : chosen) {
      const bool tampered = std::binary_search(fg_sorted.begin(), fg_sorted.end(), i);
      ip.rois.push_back(pool[static_cast<std::size_t>(i)]);
      ip.roi_objectness.push_back(obj[static_cast<std::size_t>(i)]);
      ip.roi_labels.push_back(tampered ? 1 : 0);
      ip.roi_targets.push_back(tampered ? encode_box(pool[static_cast<std::size_t>(i)], gt[static_cast<std::size_t>(best_gt[static_cast<std::size_t>(i)])])
                                        : Deltas{0, 0, 0, 0});
    }
    pcl::Partition part;
    for (int r = 0; r < static_cast<int>(ip.roi_labels.size()); ++r)
      (ip.roi_labels[static_cast<std::size_t>(r)] ? part.tampered : part.authentic).push_back(r);
    part.source = pcl::PartitionSource::supervised_iou;
    ip.partition = std::move(part);
  }

  // Per-RoI head activations for a batch of RoIs.
  struct HeadCache {
    int rois = 0;
    std::vector<int> roi_image;
    Tensor<T> pooled[2];
    std::vector<int> argmax[2];
    Tensor<T> fc1_out[2];  // post-ReLU
    Tensor<T> h[2];        // post-ReLU RoI features
    typename nn::Relu<T>::Cache relu1[2], relu2[2];
    Tensor<T> reduced[2];
    std::vector<detect::BilinearCache<T>> bilinear;
    Tensor<T> fused;
    Tensor<T> logits;
    Tensor<T> loc;
  };

  void heads_forward(const Tensor<T>& fr, const Tensor<T>& fn, const std::vector<std::vector<Box>>& rois,
                     HeadCache& hc) const {
    const int c = cfg_.feature_channels(), fh = fr.dim(2), fw = fr.dim(3);
    const int pooled = c * kRoiGrid * kRoiGrid;
    hc.rois = 0;
    hc.roi_image.clear();
    for (std::size_t n = 0; n < rois.size(); ++n)
      for (std::size_t r = 0; r < rois[n].size(); ++r) hc.roi_image.push_back(static_cast<int>(n));
    hc.rois = static_cast<int>(hc.roi_image.size());
    const Tensor<T>* feats[2] = {&fr, &fn};
    for (int s = 0; s < 2; ++s) {
      hc.pooled[s] = Tensor<T>({hc.rois, pooled});
      hc.argmax[s].assign(static_cast<std::size_t>(hc.rois) * pooled, 0);
      int row = 0;
      for (std::size_t n = 0; n < rois.size(); ++n)
        for (const auto& box : rois[n]) {
          roi_pool_forward(feats[s]->slice(static_cast<int>(n)), c, fh, fw, cfg_.stride(), box,
                           hc.pooled[s].data() + static_cast<std::size_t>(row) * pooled,
                           hc.argmax[s].data() + static_cast<std::size_t>(row) * pooled);
          ++row;
        }
      hc.fc1_out[s] = mlp_[s][0].forward(hc.pooled[s]);
      nn::Relu<T>::forward_inplace(hc.fc1_out[s], hc.relu1[s]);
      hc.h[s] = mlp_[s][1].forward(hc.fc1_out[s]);
      nn::Relu<T>::forward_inplace(hc.h[s], hc.relu2[s]);
    }
    hc.reduced[kRgb] = reduce_rgb_.forward(hc.h[kRgb]);
    hc.reduced[kNoise] = reduce_noise_.forward(hc.h[kNoise]);
    const int d = cfg_.bilinear_dim;
    hc.fused = Tensor<T>({hc.rois, d * d});
    hc.bilinear.assign(static_cast<std::size_t>(hc.rois), {});
    for (int r = 0; r < hc.rois; ++r) {
      std::span<const T> a(hc.reduced[kRgb].data() + static_cast<std::size_t>(r) * d, static_cast<std::size_t>(d));
      std::span<const T> b(hc.reduced[kNoise].data() + static_cast<std::size_t>(r) * d, static_cast<std::size_t>(d));
      auto f = bilinear_fuse(a, b, &hc.bilinear[static_cast<std::size_t>(r)]);
      std::copy(f.begin(), f.end(), hc.fused.data() + static_cast<std::size_t>(r) * d * d);
    }
    hc.logits = cls_.forward(hc.fused);
    hc.loc = loc_.forward(hc.h[kRgb]);
  }

  double tampered_probability(const HeadCache& hc, int r) const {
    const double a = hc.logits.at(r, 0), b = hc.logits.at(r, 1);
    return train::sigmoid(b - a);
  }

  // Backward through the RoI heads given gradients on the logits, the
  // localization outputs and the RoI features; accumulates feature-map gradients.
  void heads_backward(HeadCache& hc, const Tensor<T>& g_logits, const Tensor<T>& g_loc, Tensor<T> g_h[2],
                      Tensor<T>& g_fr, Tensor<T>& g_fn) const {
    const int d = cfg_.bilinear_dim;
    Tensor<T> g_fused = cls_.backward(hc.fused, g_logits);
    Tensor<T> g_red[2] = {Tensor<T>({hc.rois, d}), Tensor<T>({hc.rois, d})};
    for (int r = 0; r < hc.rois; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * d;
      bilinear_backward<T>(std::span<const T>(hc.reduced[kRgb].data() + off, static_cast<std::size_t>(d)),
                           std::span<const T>(hc.reduced[kNoise].data() + off, static_cast<std::size_t>(d)),
                           hc.bilinear[static_cast<std::size_t>(r)],
                           std::span<const T>(g_fused.data() + static_cast<std::size_t>(r) * d * d,
                                              static_cast<std::size_t>(d) * d),
                           std::span<T>(g_red[kRgb].data() + off, static_cast<std::size_t>(d)),
                           std::span<T>(g_red[kNoise].data() + off, static_cast<std::size_t>(d)));
    }
    add_into(g_h[kRgb], reduce_rgb_.backward(hc.h[kRgb], g_red[kRgb]));
    add_into(g_h[kNoise], reduce_noise_.backward(hc.h[kNoise], g_red[kNoise]));
    add_into(g_h[kRgb], loc_.backward(hc.h[kRgb], g_loc));
    features_backward(hc, g_h, g_fr, g_fn);
  }

  static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  GroupLoss run_group(std::span<const GroupSample> batch, bool labeled, const LossConfig& lc, Rng& rng,
                      GroupPlan& plan, bool frozen, bool backward) {
    GroupLoss out;
    const int n = static_cast<int>(batch.size());
    const double img_w = batch[0].image.width, img_h = batch[0].image.height;
    std::vector<const synth::Image*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s.image);
    const Tensor<T> x = to_tensor(ptrs);
    const Tensor<T> noise_in = noise_view(x);

    typename Backbone<T>::Cache c_rgb, c_noise;
    const Tensor<T> fr = rgb_.forward(x, nn::Mode::train, c_rgb);
    const Tensor<T> fn = noise_.forward(noise_in, nn::Mode::train, c_noise);

    typename nn::Conv2d<T>::Cache c_rpn, c_cls, c_reg;
    typename nn::Relu<T>::Cache r_rpn;
    Tensor<T> h_rpn = rpn_conv_.forward(fr, c_rpn);
    nn::Relu<T>::forward_inplace(h_rpn, r_rpn);
    const Tensor<T> cls = rpn_cls_.forward(h_rpn, c_cls);
    const Tensor<T> reg = rpn_reg_.forward(h_rpn, c_reg);
    const RpnOutput rpn = unpack_rpn(cls, reg);

    if (!frozen) plan.images.assign(static_cast<std::size_t>(n), {});
    PCLF_REQUIRE(static_cast<int>(plan.images.size()) == n, InvalidArgument, "replayed plan does not match batch");

    // RPN loss over the sampled anchors of every labeled image.
    std::vector<train::AnchorSample> anchor_samples;
    std::vector<std::pair<int, int>> anchor_owner;  // (image, anchor)
    for (int b = 0; b < n; ++b) {
      auto& ip = plan.images[static_cast<std::size_t>(b)];
      const auto& sample = batch[static_cast<std::size_t>(b)];
      if (!frozen) {
        if (labeled && !sample.gt.empty()) sample_rpn(match_anchors(anchors_, sample.gt, {cfg_.rpn_positive_iou, cfg_.rpn_negative_iou}), rng, ip);
        auto props = select_proposals(rpn.objectness[static_cast<std::size_t>(b)], rpn.deltas[static_cast<std::size_t>(b)],
                                      anchors_, img_w, img_h, cfg_.proposals_train, cfg_.rpn_nms);
        if (labeled && !sample.gt.empty()) {
          sample_rois(props, sample.gt, lc.epsilon, rng, ip);
        } else if (!labeled) {
          for (const auto& p : props) {
            ip.rois.push_back(p.box);
            ip.roi_objectness.push_back(p.objectness);
          }
        }
      }
      for (std::size_t s = 0; s < ip.rpn_anchors.size(); ++s) {
        const int a = ip.rpn_anchors[s];
        anchor_samples.push_back({rpn.logits[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)], ip.rpn_labels[s],
                                  rpn.deltas[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)], ip.rpn_targets[s]});
        anchor_owner.emplace_back(b, a);
      }
    }
    std::vector<double> g_anchor_logit;
    std::vector<Deltas> g_anchor_delta;
    if (labeled) out.rpn = train::rpn_loss(anchor_samples, lc.lambda1, &g_anchor_logit, &g_anchor_delta);

    std::vector<std::vector<Box>> rois(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) rois[static_cast<std::size_t>(b)] = plan.images[static_cast<std::size_t>(b)].rois;
    HeadCache hc;
    heads_forward(fr, fn, rois, hc);
    out.rois = hc.rois;

    Tensor<T> g_logits({hc.rois, 2}), g_loc({hc.rois, 4});
    if (labeled) {
      std::vector<train::RoiSample> roi_samples;
      for (int b = 0, r = 0; b < n; ++b) {
        const auto& ip = plan.images[static_cast<std::size_t>(b)];
        for (std::size_t k = 0; k < ip.rois.size(); ++k, ++r) {
          train::RoiSample s;
          s.logit_authentic = hc.logits.at(r, 0);
          s.logit_tampered = hc.logits.at(r, 1);
          s.label = ip.roi_labels[k];
          for (int c = 0; c < 4; ++c) s.pred[static_cast<std::size_t>(c)] = hc.loc.at(r, c);
          s.target = ip.roi_targets[k];
          roi_samples.push_back(s);
        }
      }
      std::vector<std::array<double, 2>> gl;
      std::vector<Deltas> gd;
      out.rcnn = train::rcnn_loss(roi_samples, lc.lambda2, &gl, &gd);
      for (int r = 0; r < hc.rois; ++r) {
        g_logits.at(r, 0) = static_cast<T>(gl[static_cast<std::size_t>(r)][0]);
        g_logits.at(r, 1) = static_cast<T>(gl[static_cast<std::size_t>(r)][1]);
        for (int c = 0; c < 4; ++c) g_loc.at(r, c) = static_cast<T>(lc.lambda2 * gd[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
      }
    }

    Tensor<T> g_h[2] = {Tensor<T>({hc.rois, cfg_.roi_dim}), Tensor<T>({hc.rois, cfg_.roi_dim})};
    if constexpr (WithPcl) {
      if (lc.strategy != pcl::Strategy::off && hc.rois > 0) {
        if (!labeled && !frozen) {
          for (int b = 0, r = 0; b < n; ++b) {
            auto& ip = plan.images[static_cast<std::size_t>(b)];
            std::vector<double> scores;
            for (std::size_t k = 0; k < ip.rois.size(); ++k, ++r)
              scores.push_back(lc.score_source == pcl::ScoreSource::rcnn ? tampered_probability(hc, r)
                                                                          : ip.roi_objectness[k]);
            ip.partition = pcl::assign_unlabeled(scores, lc.delta, lc.score_source);
          }
        }
        const double weight = labeled ? lc.beta : lc.omega;
        pcl_forward_backward(hc, plan, lc, weight, backward, out, g_h);
      }
    }

    if (!backward) return out;

    Tensor<T> g_fr(fr.shape()), g_fn(fn.shape());
    if (labeled) {
      // Only labeled images train the detection heads.
      heads_backward(hc, g_logits, g_loc, g_h, g_fr, g_fn);
      Tensor<T> g_cls(cls.shape()), g_reg(reg.shape());
      for (std::size_t s = 0; s < anchor_owner.size(); ++s) {
        const auto [b, a] = anchor_owner[s];
        const AnchorSlot sl = slot(a);
        g_cls.at(b, sl.k, sl.y, sl.x) += static_cast<T>(g_anchor_logit[s]);
        for (int c = 0; c < 4; ++c)
          g_reg.at(b, 4 * sl.k + c, sl.y, sl.x) += static_cast<T>(lc.lambda1 * g_anchor_delta[s][static_cast<std::size_t>(c)]);
      }
      Tensor<T> g_h_rpn = rpn_cls_.backward(g_cls, c_cls, true);
      add_into(g_h_rpn, rpn_reg_.backward(g_reg, c_reg, true));
      nn::Relu<T>::backward_inplace(g_h_rpn, r_rpn);
      add_into(g_fr, rpn_conv_.backward(g_h_rpn, c_rpn, true));
    } else {
      features_backward(hc, g_h, g_fr, g_fn);
    }
    rgb_.backward(g_fr, c_rgb, false);
    const bool constrained = cfg_.noise_view == NoiseView::constrained;
    Tensor<T> g_noise_in = noise_.backward(g_fn, c_noise, constrained);
    if (constrained) noise::constrained_backward(x, g_noise_in, constrained_->grad);
    return out;
  }

  // RoI feature MLPs and pooling back onto the feature maps. Unlabeled groups
  // only take this path since they carry no detection loss.
  void features_backward(HeadCache& hc, Tensor<T> g_h[2], Tensor<T>& g_fr, Tensor<T>& g_fn) const {
    const int c = cfg_.feature_channels(), fh = g_fr.dim(2), fw = g_fr.dim(3);
    const int pooled = c * kRoiGrid * kRoiGrid;
    Tensor<T>* g_feat[2] = {&g_fr, &g_fn};
    for (int s = 0; s < 2; ++s) {
      Tensor<T> g = g_h[s];
      nn::Relu<T>::backward_inplace(g, hc.relu2[s]);
      g = mlp_[s][1].backward(hc.fc1_out[s], g);
      nn::Relu<T>::backward_inplace(g, hc.relu1[s]);
      g = mlp_[s][0].backward(hc.pooled[s], g);
      for (int r = 0; r < hc.rois; ++r)
        roi_pool_backward(g.data() + static_cast<std::size_t>(r) * pooled,
                          hc.argmax[s].data() + static_cast<std::size_t>(r) * pooled, c, fh, fw,
                          g_feat[s]->slice(hc.roi_image[static_cast<std::size_t>(r)]));
    }
  }

  void pcl_forward_backward(HeadCache& hc, const GroupPlan& plan, const LossConfig& lc, double weight, bool backward,
                            GroupLoss& out, Tensor<T> g_h[2]) {
    typename pcl::ProjectionHead<T>::Cache pc_r, pc_n;
    const Tensor<T> z_r = proj_rgb_.forward(hc.h[kRgb], nn::Mode::train, pc_r);
    const Tensor<T> z_n = proj_noise_.forward(hc.h[kNoise], nn::Mode::train, pc_n);
    Tensor<T> g_zr(z_r.shape()), g_zn(z_n.shape());

    std::vector<pcl::PairSet> sets;
    if (lc.cross_image) {
      pcl::Partition all;
      int offset = 0;
      for (const auto& ip : plan.images) {
        for (int t : ip.partition.tampered) all.tampered.push_back(t + offset);
        for (int a : ip.partition.authentic) all.authentic.push_back(a + offset);
        offset += static_cast<int>(ip.rois.size());
      }
      sets.push_back(pcl::build_pairs(all, lc.strategy));
    } else {
      int offset = 0;
      for (const auto& ip : plan.images) {
        pcl::PairSet shifted;
        pcl::append_pairs(shifted, pcl::build_pairs(ip.partition, lc.strategy), offset);
        sets.push_back(std::move(shifted));
        offset += static_cast<int>(ip.rois.size());
      }
    }
    // Per-image losses averaged over the images of the group.
    const double inv_sets = 1.0 / static_cast<double>(sets.size());
    Tensor<T> g_zr_i(z_r.shape()), g_zn_i(z_n.shape());
    for (const auto& ps : sets) {
      out.pcl_positives += static_cast<int>(ps.n_positive());
      if (ps.empty()) continue;
      g_zr_i.zero();
      g_zn_i.zero();
      out.pcl += inv_sets * pcl::pcl_loss(z_r, z_n, ps, lc.tau, backward ? &g_zr_i : nullptr,
                                          backward ? &g_zn_i : nullptr, &pcl_diag_);
      if (backward)
        for (std::size_t k = 0; k < g_zr.size(); ++k) {
          g_zr[k] += static_cast<T>(weight * inv_sets * g_zr_i[k]);
          g_zn[k] += static_cast<T>(weight * inv_sets * g_zn_i[k]);
        }
    }
    if (!backward) return;
    add_into(g_h[kRgb], proj_rgb_.backward(g_zr, pc_r));
    add_into(g_h[kNoise], proj_noise_.backward(g_zn, pc_n));
  }

  std::vector<ImageResult> infer_chunk(const std::vector<const synth::Image*>& ptrs, const InferOptions& opt) const {
    const int n = static_cast<int>(ptrs.size());
    const double img_w = ptrs[0]->width, img_h = ptrs[0]->height;
    const Tensor<T> x = to_tensor(ptrs);
    Tensor<T> noise_in = noise_view(x);
    if (opt.zero_noise) noise_in.zero();
    typename Backbone<T>::Cache c_rgb, c_noise;
    const Tensor<T> fr = rgb_.forward(x, nn::Mode::eval, c_rgb);
    const Tensor<T> fn = noise_.forward(noise_in, nn::Mode::eval, c_noise);
    const RpnOutput rpn = rpn_forward(fr);

    std::vector<std::vector<Proposal>> props(static_cast<std::size_t>(n));
    std::vector<std::vector<Box>> rois(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      props[static_cast<std::size_t>(b)] =
          select_proposals(rpn.objectness[static_cast<std::size_t>(b)], rpn.deltas[static_cast<std::size_t>(b)], anchors_,
                           img_w, img_h, cfg_.proposals_test, cfg_.rpn_nms);
      for (const auto& p : props[static_cast<std::size_t>(b)]) rois[static_cast<std::size_t>(b)].push_back(p.box);
    }
    HeadCache hc;
    heads_forward(fr, fn, rois, hc);
    std::vector<ImageResult> results(static_cast<std::size_t>(n));
    int r = 0;
    for (int b = 0; b < n; ++b) {
      auto& res = results[static_cast<std::size_t>(b)];
      res.proposals = std::move(props[static_cast<std::size_t>(b)]);
      for (auto& p : res.proposals) {
        p.rcnn_score = tampered_probability(hc, r);
        for (int c = 0; c < 4; ++c) p.rcnn_deltas[static_cast<std::size_t>(c)] = hc.loc.at(r, c);
        if (opt.keep_features) {
          p.h_rgb.assign(hc.h[kRgb].data() + static_cast<std::size_t>(r) * cfg_.roi_dim,
                         hc.h[kRgb].data() + static_cast<std::size_t>(r + 1) * cfg_.roi_dim);
          p.h_noise.assign(hc.h[kNoise].data() + static_cast<std::size_t>(r) * cfg_.roi_dim,
                           hc.h[kNoise].data() + static_cast<std::size_t>(r + 1) * cfg_.roi_dim);
        }
        ++r;
      }
      res.detections = decode_and_finalize(res.proposals, img_w, img_h, cfg_.score_threshold, cfg_.detection_nms);
    }
    return results;
  }

  ModelConfig cfg_;
  nn::ParamStore<T> params_;
  nn::Param<T>* constrained_ = nullptr;
  bool validate_constraint_ = true;
  Backbone<T> rgb_, noise_;
  nn::Conv2d<T> rpn_conv_, rpn_cls_, rpn_reg_;
  nn::Linear<T> mlp_[2][2];
  nn::Linear<T> reduce_rgb_, reduce_noise_, cls_, loc_;
  pcl::ProjectionHead<T> proj_rgb_, proj_noise_;
  std::vector<Anchor> anchors_;
  GroupLoss last_labeled_, last_unlabeled_;
  pcl::LossDiagnostics pcl_diag_;
};

}  // namespace pclf::detect
