#include "tpnerf/renderer.hpp"

#include "tpnerf/errors.hpp"

namespace tpnerf {

namespace {

// Jitter streams; each sampling stage draws from its own.
constexpr std::uint64_t kNearCoarseStream = 10;
constexpr std::uint64_t kNearFineStream = 11;
constexpr std::uint64_t kFarCoarseStream = 20;
constexpr std::uint64_t kFarFineStream = 21;
constexpr std::uint64_t kObjectStream = 30;

torch::Tensor expand_rows(const torch::Tensor& src, const torch::Tensor& idx, int64_t rows) {
  auto shape = src.sizes().vec();
  shape[0] = rows;
  return torch::zeros(shape, src.options()).index_copy(0, idx, src);
}

RayBatch select_rays(const RayBatch& rays, const torch::Tensor& idx) {
  return {rays.origins.index_select(0, idx), rays.directions.index_select(0, idx),
          rays.ray_ids.index_select(0, idx)};
}

torch::Tensor points_along(const RayBatch& rays, const torch::Tensor& t) {
  return rays.origins.unsqueeze(1) + t.unsqueeze(-1) * rays.directions.unsqueeze(1);
}

torch::Tensor with_last(const torch::Tensor& values, const torch::Tensor& last) {
  return torch::cat({values, last.unsqueeze(-1)}, -1);
}

torch::Tensor interval_lengths(const torch::Tensor& samples, const torch::Tensor& end) {
  return with_last(samples, end).diff(1, -1);
}

}  // namespace

void SourceViews::validate() const {
  if (cameras.empty()) throw InputError("at least one source view is required");
  if (!images.defined() || images.dim() != 4 || images.size(3) != 3)
    throw InputError("source images must be [V, H, W, 3]");
  if (images.size(0) != size()) throw InputError("source image and camera counts differ");
  for (const auto& cam : cameras) {
    cam.validate();
    if (cam.height != images.size(1) || cam.width != images.size(2))
      throw InputError("source camera size does not match its image");
  }
}

SourceViews SourceViews::select(const std::vector<int64_t>& indices) const {
  SourceViews out;
  std::vector<Camera> cams;
  for (int64_t i : indices) {
    if (i < 0 || i >= size()) throw InputError("source view index out of range");
    cams.push_back(cameras[i]);
  }
  out.cameras = std::move(cams);
  out.images = images.index_select(0, torch::tensor(indices, torch::kInt64));
  return out;
}

torch::Tensor inside_any_box(const torch::Tensor& points, const std::vector<OrientedBox>& boxes) {
  auto inside = torch::zeros(points.sizes().slice(0, points.dim() - 1),
                             torch::TensorOptions().dtype(torch::kBool));
  const auto opts = points.options();
  for (const auto& box : boxes) {
    auto rot = torch::empty({3, 3}, torch::kFloat64);
    auto center = torch::empty({3}, torch::kFloat64);
    auto half = torch::empty({3}, torch::kFloat64);
    for (int a = 0; a < 3; ++a) {
      center[a] = box.center[a];
      half[a] = box.half_extents[a];
      for (int b = 0; b < 3; ++b) rot[a][b] = box.rotation(a, b);
    }
    const auto local = (points - center.to(opts)).matmul(rot.to(opts));
    inside = inside | (local.abs() <= half.to(opts)).all(-1);
  }
  return inside;
}

Renderer::Renderer(NerfModel model) : model_(std::move(model)) {}

EncodedViews Renderer::encode(const SourceViews& views) {
  views.validate();
  const auto dtype = views.images.scalar_type();
  EncodedViews out;
  out.cameras = CameraPack::from(views.cameras, dtype);
  out.features = model_->encoder->forward(views.images.permute({0, 3, 1, 2}).contiguous());
  ++encode_calls_;
  if (model_->config().use_triplane) {
    out.triplanes = build_triplanes(model_->triplane, out.features, out.cameras,
                                    model_->config().grid);
    ++triplane_calls_;
  }
  return out;
}

Renderer::Decoded Renderer::decode(RadianceDecoder& decoder, const EncodedViews& views,
                                   const torch::Tensor& positions,
                                   const torch::Tensor& conditioning,
                                   const torch::Tensor& directions) {
  const int64_t rays = positions.size(0);
  const int64_t samples = positions.size(1);
  const auto flat = positions.reshape({-1, 3});
  torch::Tensor f_tp;
  if (views.triplanes) f_tp = sample_triplane(*views.triplanes, flat);
  auto [f_r, valid] = sample_residual(views.features, views.cameras, flat);
  const auto dirs = directions.unsqueeze(1).expand({rays, samples, 3}).reshape({-1, 3});
  auto out = decoder->forward(conditioning.reshape({rays * samples, -1}), dirs, f_tp, f_r, valid);
  return {out.sigma.view({rays, samples}), out.rgb.view({rays, samples, 3})};
}

Renderer::BranchResult Renderer::render_near(const EncodedViews& views, const RayBatch& all_rays,
                                             const torch::Tensor& t0_all,
                                             const torch::Tensor& t1_all,
                                             const torch::Tensor& valid,
                                             const RenderSettings& settings) {
  const auto& cfg = settings.sampling;
  const int64_t total = all_rays.size();
  const auto idx = valid.nonzero().squeeze(-1);
  const bool subset = idx.size(0) != total;
  const auto rays = subset ? select_rays(all_rays, idx) : all_rays;
  const auto t0 = subset ? t0_all.index_select(0, idx) : t0_all;
  const auto t1 = subset ? t1_all.index_select(0, idx) : t1_all;
  const auto dtype = rays.origins.scalar_type();
  auto& decoder = model_->decoder_near;

  BranchResult out;
  const int64_t s_total =
      cfg.n_coarse + (settings.hierarchical ? static_cast<int64_t>(cfg.n_fine) : 0);
  if (rays.size() == 0) {
    const auto opts = all_rays.origins.options();
    out.composite = {torch::zeros({total, 3}, opts), torch::zeros({total}, opts),
                     torch::zeros({total, s_total}, opts), torch::zeros({total}, opts)};
    out.sigma = torch::zeros({total, s_total}, opts);
    out.rgb = torch::zeros({total, s_total, 3}, opts);
    out.deltas = torch::zeros({total, s_total}, opts);
    out.trace = {torch::zeros({total, s_total}, opts), torch::zeros({total, s_total, 3}, opts),
                 out.composite.weights, torch::zeros({total, s_total + 1}, opts), valid};
    return out;
  }

  const auto u = jitter_uniforms(rays.ray_ids, cfg.n_coarse, cfg.stratified_jitter, settings.seed,
                                 kNearCoarseStream, dtype);
  auto [edges, t] = stratified_samples(t0, t1, cfg.n_coarse, u);
  if (settings.hierarchical && cfg.n_fine > 0) {
    torch::Tensor coarse_weights;
    {
      torch::NoGradGuard no_grad;
      const auto pos = points_along(rays, t);
      const auto coarse = decode(decoder, views, pos, pos, rays.directions);
      coarse_weights =
          composite(coarse.sigma, coarse.rgb, interval_lengths(t, t1), t).weights;
    }
    const auto uf = stratified_uniforms(rays.ray_ids, cfg.n_fine, cfg.stratified_jitter,
                                        settings.seed, kNearFineStream, dtype);
    const auto fine = sample_pdf(edges, coarse_weights, uf);
    t = std::get<0>(torch::sort(torch::cat({t, fine}, -1), -1));
  }
  t = t.detach();

  const auto positions = points_along(rays, t);
  auto dec = decode(decoder, views, positions, positions, rays.directions);
  const auto deltas = interval_lengths(t, t1);
  auto comp = composite(dec.sigma, dec.rgb, deltas, t);
  const auto span = torch::clamp_min(t1 - t0, 1e-12).unsqueeze(-1);
  auto norm_edges = (with_last(t, t1) - t0.unsqueeze(-1)) / span;

  if (subset) {
    comp = {expand_rows(comp.rgb, idx, total), expand_rows(comp.acc, idx, total),
            expand_rows(comp.weights, idx, total), expand_rows(comp.depth, idx, total)};
    out.sigma = expand_rows(dec.sigma, idx, total);
    out.rgb = expand_rows(dec.rgb, idx, total);
    out.deltas = expand_rows(deltas, idx, total);
    out.trace = {expand_rows(t, idx, total), expand_rows(positions, idx, total), comp.weights,
                 expand_rows(norm_edges, idx, total), valid};
  } else {
    out.sigma = dec.sigma;
    out.rgb = dec.rgb;
    out.deltas = deltas;
    out.trace = {t, positions, comp.weights, norm_edges, valid};
  }
  out.composite = comp;
  return out;
}

Renderer::BranchResult Renderer::render_far(const EncodedViews& views, const RayBatch& all_rays,
                                            const SphereSplitBatch& split,
                                            const RenderSettings& settings) {
  const auto& cfg = settings.sampling;
  const int64_t total = all_rays.size();
  const auto idx = split.far_valid.nonzero().squeeze(-1);
  const bool subset = idx.size(0) != total;
  const auto rays = subset ? select_rays(all_rays, idx) : all_rays;
  const auto pick = [&](const torch::Tensor& x) { return subset ? x.index_select(0, idx) : x; };
  const auto dtype = rays.origins.scalar_type();
  auto& decoder = model_->decoder_far;

  BranchResult out;
  const int64_t s_total =
      cfg.n_coarse + (settings.hierarchical ? static_cast<int64_t>(cfg.n_fine) : 0);
  if (rays.size() == 0) {
    const auto opts = all_rays.origins.options();
    out.composite = {torch::zeros({total, 3}, opts), torch::zeros({total}, opts),
                     torch::zeros({total, s_total}, opts), torch::zeros({total}, opts)};
    out.trace = {torch::zeros({total, s_total}, opts), torch::zeros({total, s_total, 3}, opts),
                 out.composite.weights, torch::zeros({total, s_total + 1}, opts),
                 split.far_valid};
    return out;
  }

  // Samples are placed in v = 1 - 1/r, which increases along the ray.
  const auto radius_at = [&](const torch::Tensor& t) {
    return (rays.origins + t.unsqueeze(-1) * rays.directions).norm(2, -1);
  };
  const auto u_hi = torch::clamp_max(1.0 / radius_at(pick(split.far_t0)), 1.0 - kRoutingMargin);
  const auto u_lo = torch::minimum(1.0 / radius_at(pick(split.far_t1)), u_hi - kRoutingMargin);
  const auto v0 = 1.0 - u_hi;
  const auto v1 = 1.0 - u_lo;

  const auto u = jitter_uniforms(rays.ray_ids, cfg.n_coarse, cfg.stratified_jitter, settings.seed,
                                 kFarCoarseStream, dtype);
  auto [edges, v] = stratified_samples(v0, v1, cfg.n_coarse, u);
  const auto ones = torch::ones_like(v0);
  const auto to_points = [&](const torch::Tensor& vs) {
    const auto t = t_at_radius(rays, 1.0 / (1.0 - vs));
    return std::make_pair(t, points_along(rays, t));
  };
  if (settings.hierarchical && cfg.n_fine > 0) {
    torch::Tensor coarse_weights;
    {
      torch::NoGradGuard no_grad;
      auto [t, pos] = to_points(v);
      const auto coarse = decode(decoder, views, pos, contract(pos), rays.directions);
      coarse_weights = composite(coarse.sigma, coarse.rgb, interval_lengths(v, ones), t).weights;
    }
    const auto uf = stratified_uniforms(rays.ray_ids, cfg.n_fine, cfg.stratified_jitter,
                                        settings.seed, kFarFineStream, dtype);
    const auto fine = sample_pdf(edges, coarse_weights, uf);
    v = std::get<0>(torch::sort(torch::cat({v, fine}, -1), -1));
  }
  v = v.detach();

  auto [t, positions] = to_points(v);
  auto dec = decode(decoder, views, positions, contract(positions), rays.directions);
  // The last interval runs to 1/r = 0.
  const auto deltas = interval_lengths(v, ones);
  auto comp = composite(dec.sigma, dec.rgb, deltas, t);
  auto norm_edges = with_last(v, ones);

  if (subset) {
    comp = {expand_rows(comp.rgb, idx, total), expand_rows(comp.acc, idx, total),
            expand_rows(comp.weights, idx, total), expand_rows(comp.depth, idx, total)};
    out.trace = {expand_rows(t, idx, total), expand_rows(positions, idx, total), comp.weights,
                 expand_rows(norm_edges, idx, total), split.far_valid};
  } else {
    out.trace = {t, positions, comp.weights, norm_edges, split.far_valid};
  }
  out.composite = comp;
  return out;
}

RayRender Renderer::render_rays(const EncodedViews& views, const RayBatch& input_rays,
                                const RenderSettings& settings) {
  settings.sampling.validate();
  if (views.size() < 1) throw InputError("at least one source view is required");
  for (const auto& box : settings.boxes) box.validate();
  const auto dtype = views.features.scalar_type();
  const auto rays = input_rays.to(dtype);
  const auto& cfg = settings.sampling;
  const int64_t total = rays.size();
  const bool near_far = model_->config().use_near_far;

  RayRender out;
  BranchResult near;
  BranchResult far;
  torch::Tensor near_t0;
  torch::Tensor near_t1;
  if (near_far) {
    const auto split = ray_sphere_split(rays, cfg.near, cfg.far);
    near_t0 = split.near_t0;
    near_t1 = torch::maximum(split.near_t1 - kRoutingMargin, near_t0);
    const auto near_valid = split.near_valid & (near_t1 > near_t0);
    near = render_near(views, rays, near_t0, near_t1, near_valid, settings);
    far = render_far(views, rays, split, settings);
  } else {
    near_t0 = torch::full({total}, cfg.near, rays.origins.options());
    near_t1 = torch::full({total}, cfg.far, rays.origins.options());
    near = render_near(views, rays, near_t0, near_t1,
                       torch::ones({total}, torch::TensorOptions().dtype(torch::kBool)), settings);
  }
  out.near = near.trace;
  if (near_far) out.far = far.trace;

  const auto far_rgb = near_far ? far.composite.rgb : torch::zeros_like(near.composite.rgb);
  const auto far_acc = near_far ? far.composite.acc : torch::zeros_like(near.composite.acc);
  const auto far_depth_sum =
      near_far ? far.composite.depth * far.composite.acc : torch::zeros_like(far_acc);

  const bool edit = settings.mode != RenderMode::Full && !settings.boxes.empty();
  if (!edit) {
    const auto keep = 1.0 - near.composite.acc;
    out.rgb = near.composite.rgb + keep.unsqueeze(-1) * far_rgb;
    out.acc = near.composite.acc + keep * far_acc;
    out.depth = (near.composite.depth * near.composite.acc + keep * far_depth_sum) /
                torch::clamp_min(out.acc, 1e-8);
    if (settings.mode == RenderMode::Decomposed) {
      out.objects_rgb = torch::zeros_like(out.rgb);
      out.near_bg_rgb = near.composite.rgb;
      out.far_bg_rgb = keep.unsqueeze(-1) * far_rgb;
    }
    return out;
  }

  // Near-field samples inside any box are pruned; decomposed mode re-inserts
  // the box contents as separately decoded object samples.
  const auto inside = inside_any_box(near.trace.positions, settings.boxes);
  const auto pruned = prune_density(near.sigma, inside);
  std::vector<torch::Tensor> alphas{alpha_from_density(pruned, near.deltas)};
  std::vector<torch::Tensor> colors{near.rgb};
  std::vector<torch::Tensor> ts{near.trace.t};
  std::vector<torch::Tensor> is_object{torch::zeros_like(pruned)};

  if (settings.mode == RenderMode::Decomposed) {
    const auto near_valid = near.trace.valid;
    for (std::size_t b = 0; b < settings.boxes.size(); ++b) {
      const auto hit = ray_box_intersect(rays, settings.boxes[b]);
      auto s0 = torch::maximum(hit.t0, near_t0);
      auto s1 = torch::minimum(hit.t1, near_t1);
      const auto ok = hit.hit & near_valid & (s1 > s0);
      s0 = torch::where(ok, s0, near_t0);
      s1 = torch::where(ok, s1, near_t0 + 1e-6);
      const auto u = jitter_uniforms(rays.ray_ids, cfg.n_coarse, cfg.stratified_jitter,
                                     settings.seed, kObjectStream + b, dtype);
      auto t = stratified_samples(s0, s1, cfg.n_coarse, u).second.detach();
      const auto pos = points_along(rays, t);
      auto dec = decode(model_->decoder_near, views, pos, pos, rays.directions);
      const auto mask = ok.to(dtype).unsqueeze(-1);
      alphas.push_back(alpha_from_density(dec.sigma, interval_lengths(t, s1)) * mask);
      colors.push_back(dec.rgb);
      ts.push_back(t);
      is_object.push_back(torch::ones_like(t));
    }
  }

  auto t_all = torch::cat(ts, -1);
  auto [t_sorted, order] = torch::sort(t_all, -1, /*descending=*/false);
  const auto alpha_sorted = torch::cat(alphas, -1).gather(-1, order);
  const auto rgb_sorted =
      torch::cat(colors, 1).gather(1, order.unsqueeze(-1).expand({total, order.size(1), 3}));
  const auto obj_sorted = torch::cat(is_object, -1).gather(-1, order);
  const auto merged = composite_alphas(alpha_sorted, rgb_sorted, t_sorted);

  const auto keep = 1.0 - merged.acc;
  out.objects_rgb = ((merged.weights * obj_sorted).unsqueeze(-1) * rgb_sorted).sum(1);
  out.near_bg_rgb = merged.rgb - out.objects_rgb;
  out.far_bg_rgb = keep.unsqueeze(-1) * far_rgb;
  out.rgb = merged.rgb + out.far_bg_rgb;
  out.acc = merged.acc + keep * far_acc;
  out.depth = (merged.depth * merged.acc + keep * far_depth_sum) / torch::clamp_min(out.acc, 1e-8);
  return out;
}

RenderedImage Renderer::render_image(const EncodedViews& views, const Camera& camera,
                                     const RenderSettings& settings, int64_t chunk_size) {
  if (chunk_size < 1) throw InputError("chunk_size must be >= 1");
  camera.validate();
  torch::NoGradGuard no_grad;
  const auto rays = generate_all_rays(camera, views.features.scalar_type());
  std::vector<torch::Tensor> rgb, depth, acc;
  for (int64_t begin = 0; begin < rays.size(); begin += chunk_size) {
    const auto chunk = rays.slice(begin, std::min(begin + chunk_size, rays.size()));
    auto r = render_rays(views, chunk, settings);
    rgb.push_back(r.rgb);
    depth.push_back(r.depth);
    acc.push_back(r.acc);
  }
  const int64_t h = camera.height;
  const int64_t w = camera.width;
  return {torch::cat(rgb).view({h, w, 3}), torch::cat(depth).view({h, w}),
          torch::cat(acc).view({h, w})};
}

RenderOutput Renderer::render(const RenderRequest& request) {
  if (request.chunk_size < 1) throw InputError("chunk_size must be >= 1");
  torch::NoGradGuard no_grad;
  const auto views = encode(request.sources);
  RenderOutput out;
  std::vector<torch::Tensor> rgb, depth, acc, obj, near_bg, far_bg;
  const auto& rays = request.rays;
  for (int64_t begin = 0; begin < rays.size(); begin += request.chunk_size) {
    auto r = render_rays(views, rays.slice(begin, std::min(begin + request.chunk_size, rays.size())),
                         request.settings);
    rgb.push_back(r.rgb);
    depth.push_back(r.depth);
    acc.push_back(r.acc);
    if (r.objects_rgb.defined()) {
      obj.push_back(r.objects_rgb);
      near_bg.push_back(r.near_bg_rgb);
      far_bg.push_back(r.far_bg_rgb);
    }
  }
  if (rgb.empty()) {
    const auto opts = views.features.options();
    return {torch::zeros({0, 3}, opts), torch::zeros({0}, opts), torch::zeros({0}, opts),
            {}, {}, {}};
  }
  out.rgb = torch::cat(rgb);
  out.depth = torch::cat(depth);
  out.acc = torch::cat(acc);
  if (!obj.empty()) {
    out.objects_rgb = torch::cat(obj);
    out.near_bg_rgb = torch::cat(near_bg);
    out.far_bg_rgb = torch::cat(far_bg);
  }
  return out;
}

}  // namespace tpnerf
