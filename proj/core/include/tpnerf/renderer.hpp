#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "tpnerf/geometry.hpp"
#include "tpnerf/model.hpp"
#include "tpnerf/volume_render.hpp"

namespace tpnerf {

enum class RenderMode { Full, Decomposed, ObjectsRemoved };

/// Posed source images: `images` is [V, H, W, 3] in [0, 1].
struct SourceViews {
  torch::Tensor images;
  std::vector<Camera> cameras;

  int64_t size() const { return static_cast<int64_t>(cameras.size()); }
  void validate() const;
  SourceViews select(const std::vector<int64_t>& indices) const;
};

/// Encoder output and per-view triplanes, computed once per source set.
struct EncodedViews {
  torch::Tensor features;  ///< [V, C, H/2, W/2]
  CameraPack cameras;
  std::optional<TriplaneSet> triplanes;

  int64_t size() const { return features.size(0); }
};

struct RenderSettings {
  SamplingConfig sampling;
  std::uint64_t seed = 0;
  RenderMode mode = RenderMode::Full;
  std::vector<OrientedBox> boxes;
  /// false: stratified samples only (sample positions independent of the
  /// model, which makes finite-difference checks well defined).
  bool hierarchical = true;
};

/// Samples and weights of one branch, [R, S]; rays the branch skips carry
/// zero weights.
struct BranchTrace {
  torch::Tensor t;          ///< ray parameter of each sample
  torch::Tensor positions;  ///< [R, S, 3] world positions
  torch::Tensor weights;
  torch::Tensor edges;  ///< [R, S + 1] normalized interval edges in [0, 1]
  torch::Tensor valid;  ///< [R] rays that have this segment
};

struct RayRender {
  torch::Tensor rgb;    ///< [R, 3]
  torch::Tensor depth;  ///< [R], expected ray parameter normalized by acc
  torch::Tensor acc;    ///< [R]
  BranchTrace near;
  BranchTrace far;  ///< empty when the model has no far decoder
  /// Per-source colors (decomposed mode only), each [R, 3].
  torch::Tensor objects_rgb, near_bg_rgb, far_bg_rgb;
};

struct RenderedImage {
  torch::Tensor rgb;    ///< [H, W, 3]
  torch::Tensor depth;  ///< [H, W]
  torch::Tensor acc;    ///< [H, W]
};

struct RenderRequest {
  SourceViews sources;
  RayBatch rays;
  RenderSettings settings;
  int64_t chunk_size = 4096;
};

struct RenderOutput {
  torch::Tensor rgb, depth, acc;
  torch::Tensor objects_rgb, near_bg_rgb, far_bg_rgb;
};

/// Margin keeping near samples strictly inside the unit sphere and far
/// samples strictly outside it.
inline constexpr double kRoutingMargin = 1e-5;

class Renderer {
 public:
  explicit Renderer(NerfModel model);

  NerfModel& model() { return model_; }

  /// Runs the encoder and builds the triplanes; gradients flow when enabled.
  EncodedViews encode(const SourceViews& views);

  RayRender render_rays(const EncodedViews& views, const RayBatch& rays,
                        const RenderSettings& settings);

  /// Renders every pixel of `camera` in chunks of `chunk_size` rays without
  /// gradients; results do not depend on the chunk size.
  RenderedImage render_image(const EncodedViews& views, const Camera& camera,
                             const RenderSettings& settings, int64_t chunk_size = 4096);

  /// Encodes the sources once and renders the requested rays without gradients.
  RenderOutput render(const RenderRequest& request);

  int64_t encode_calls() const { return encode_calls_; }
  int64_t triplane_calls() const { return triplane_calls_; }

 private:
  struct Decoded {
    torch::Tensor sigma;  ///< [R, S]
    torch::Tensor rgb;    ///< [R, S, 3]
  };

  Decoded decode(RadianceDecoder& decoder, const EncodedViews& views,
                 const torch::Tensor& positions, const torch::Tensor& conditioning,
                 const torch::Tensor& directions);

  struct BranchResult {
    CompositeBatch composite;
    BranchTrace trace;
    torch::Tensor sigma, rgb, deltas;
  };

  BranchResult render_near(const EncodedViews& views, const RayBatch& rays,
                           const torch::Tensor& t0, const torch::Tensor& t1,
                           const torch::Tensor& valid, const RenderSettings& settings);
  BranchResult render_far(const EncodedViews& views, const RayBatch& rays,
                          const SphereSplitBatch& split, const RenderSettings& settings);

  NerfModel model_;
  int64_t encode_calls_ = 0;
  int64_t triplane_calls_ = 0;
};

/// Points [..., 3] inside any of `boxes`.
torch::Tensor inside_any_box(const torch::Tensor& points, const std::vector<OrientedBox>& boxes);

}  // namespace tpnerf
