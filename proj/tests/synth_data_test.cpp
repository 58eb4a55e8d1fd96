#include <gtest/gtest.h>

#include <filesystem>

#include "test_support.hpp"
#include "votebody/camera.hpp"
#include "votebody/rasterizer.hpp"
#include "votebody/synth_data.hpp"

using namespace votebody;

TEST(Camera, ProjectBackProjectRoundTrip) {
  Rng rng(3);
  const Camera cam = make_orbit_camera({0.1, -0.2, 0.3}, 2.5, 0.7, 0.2, 160, 120);
  for (int trial = 0; trial < 100; ++trial) {
    const std::array<double, 3> p = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const auto c = cam.world_to_camera(p);
    ASSERT_GT(c[2], cam.znear);
    const auto uv = cam.project(c);
    const auto back = cam.back_project(uv[0], uv[1], c[2]);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[static_cast<size_t>(i)], p[static_cast<size_t>(i)], 1e-9);
  }
  const auto rec = cam.to_record();
  const Camera c2 = Camera::from_record(rec);
  EXPECT_EQ(c2.width, cam.width);
  EXPECT_NEAR(c2.fx, cam.fx, 1e-4);
}

TEST(Rasterizer, TrianglePixelsLieOnItsPlane) {
  // triangle in the x = 0 plane, camera on the +x axis looking at the origin
  Tensor<double> verts({3, 3}, {0, -0.5, -0.5, 0, 0.5, -0.5, 0, 0, 0.6});
  const std::vector<int64_t> faces = {0, 1, 2};
  const Camera cam = make_orbit_camera({0, 0, 0}, 2.0, 0.0, 0.0, 80, 60);
  const auto out = render_partial(verts, faces, cam);
  EXPECT_GT(out.points.size(), 20u);
  EXPECT_LE(out.points.size(), 80u * 60u);
  for (const auto& p : out.points) EXPECT_NEAR(p[0], 0.0, 1e-4);
  for (int64_t t : out.triangles) EXPECT_EQ(t, 0);
}

TEST(Rasterizer, NearSurfaceOccludesFar) {
  // big far quad at x=0, small near quad at x=1, camera at x=3
  Tensor<double> verts({8, 3}, {
      0, -0.6, -0.6,  0, 0.6, -0.6,  0, 0.6, 0.6,  0, -0.6, 0.6,      // far
      1, -0.2, -0.2,  1, 0.2, -0.2,  1, 0.2, 0.2,  1, -0.2, 0.2});    // near
  const std::vector<int64_t> faces = {0, 1, 2, 0, 2, 3, 4, 5, 6, 4, 6, 7};
  const Camera cam = make_orbit_camera({0, 0, 0}, 3.0, 0.0, 0.0, 120, 90);
  const auto out = render_partial(verts, faces, cam);
  bool saw_near = false, saw_far = false;
  for (const auto& p : out.points) {
    if (std::fabs(p[0] - 1.0) < 1e-6) saw_near = true;
    if (std::fabs(p[0]) < 1e-6) {
      saw_far = true;
      // rays through the strict interior of the near quad never reach the far one
      const bool behind_near = std::fabs(p[1]) < 0.15 && std::fabs(p[2]) < 0.15;
      EXPECT_FALSE(behind_near) << "far point visible behind the near quad at y=" << p[1] << " z=" << p[2];
    }
  }
  EXPECT_TRUE(saw_near);
  EXPECT_TRUE(saw_far);
}

TEST(Rasterizer, EmptyViewRejected) {
  Tensor<double> verts({3, 3}, {0, -0.5, -0.5, 0, 0.5, -0.5, 0, 0, 0.6});
  const std::vector<int64_t> faces = {0, 1, 2};
  // camera orbiting a target far away from the triangle, looking away from it
  const Camera cam = make_orbit_camera({100, 0, 0}, 1.0, 0.0, 0.0, 32, 32);
  EXPECT_THROW(render_partial(verts, faces, cam), EmptyRenderError);
}

TEST(ExactOffset, SumBitMatchesTarget) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<float, 3> joint, point;
    for (int c = 0; c < 3; ++c) {
      joint[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(-2.0, 2.0));
      point[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(-2.0, 2.0));
    }
    const auto off = exact_offset(joint, point);
    for (int c = 0; c < 3; ++c)
      EXPECT_EQ(point[static_cast<size_t>(c)] + off[static_cast<size_t>(c)], joint[static_cast<size_t>(c)]);
  }
}

TEST(Annotate, CoincidentPointInheritsLabel) {
  const auto model = make_toy_model<double>(8, 64, 11);
  const auto posed = lbs_forward(model, BodyParams<double>::identity(8));
  std::vector<std::array<double, 3>> pts;
  for (int64_t m = 0; m < 10; ++m)
    pts.push_back({posed.vertices.at(m, 0), posed.vertices.at(m, 1), posed.vertices.at(m, 2)});
  const auto labels = annotate_labels(pts, model, posed.vertices);
  for (int64_t m = 0; m < 10; ++m) EXPECT_EQ(labels[static_cast<size_t>(m)], model.part_labels[static_cast<size_t>(m)]);
}

TEST(Annotate, MatchesExhaustiveScan) {
  const auto model = make_toy_model<double>(12, 96, 13);
  const auto posed = lbs_forward(model, BodyParams<double>::identity(12));
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::array<double, 3>> pts(32);
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto labels = annotate_labels(pts, model, posed.vertices);
    for (size_t i = 0; i < pts.size(); ++i) {
      double best = 1e30;
      int64_t arg = -1;
      for (int64_t m = 0; m < model.num_vertices(); ++m) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double d = pts[i][static_cast<size_t>(c)] - posed.vertices.at(m, c);
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          arg = m;
        }
      }
      EXPECT_EQ(labels[i], model.part_labels[static_cast<size_t>(arg)]);
    }
  }
}

TEST(SampleFixed, PermutationWhenSizesMatch) {
  Rng rng(19);
  const auto idx = sample_fixed_indices(10, 10, rng);
  std::vector<int64_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  for (int64_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[static_cast<size_t>(i)], i);
}

TEST(SampleFixed, WithoutThenWithReplacement) {
  Rng a(23);
  const auto big = sample_fixed_indices(100, 40, a);
  std::vector<int64_t> sorted = big;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());  // distinct

  Rng b(23);
  const auto small = sample_fixed_indices(5, 40, b);
  EXPECT_EQ(small.size(), 40u);
  for (int64_t i : small) {
    EXPECT_GE(i, 0);
    EXPECT_LT(i, 5);
  }
  EXPECT_THROW(sample_fixed_indices(0, 10, a), std::invalid_argument);

  Rng c(29), d(29);
  EXPECT_EQ(sample_fixed_indices(50, 20, c), sample_fixed_indices(50, 20, d));
}

TEST(Noise, ZeroSigmaIsIdentity) {
  Rng rng(31);
  std::vector<std::array<double, 3>> pts = {{1, 2, 3}, {4, 5, 6}};
  auto copy = pts;
  add_noise(copy, 0.0, rng);
  EXPECT_EQ(copy[0], pts[0]);
  EXPECT_EQ(copy[1], pts[1]);
}

TEST(Noise, EmpiricalStdMatchesSigma) {
  Rng rng(37);
  const double sigma = 0.010;  // the 10mm training level
  std::vector<std::array<double, 3>> pts(100000, {0, 0, 0});
  add_noise(pts, sigma, rng);
  for (int c = 0; c < 3; ++c) {
    double mean = 0;
    for (const auto& p : pts) mean += p[static_cast<size_t>(c)];
    mean /= static_cast<double>(pts.size());
    double var = 0;
    for (const auto& p : pts) var += (p[static_cast<size_t>(c)] - mean) * (p[static_cast<size_t>(c)] - mean);
    var /= static_cast<double>(pts.size() - 1);
    EXPECT_NEAR(std::sqrt(var), sigma, 0.05 * sigma);
  }
}

TEST(Generate, SampleInvariantsNoiseless) {
  const auto model = make_toy_model<double>(16, 400, 41);
  GenerateOptions opt;
  opt.num_samples = 4;
  opt.points_per_sample = 512;
  opt.noise_sigma = 0.0;
  opt.seed = 99;
  const auto data = generate_dataset(model, opt);
  ASSERT_EQ(data.size(), 4u);
  for (const auto& s : data) {
    EXPECT_EQ(s.points.shape, (Shape{512, 3}));
    EXPECT_TRUE(s.points.all_finite());
    EXPECT_TRUE(s.gt_offsets.all_finite());
    // centroid at the origin
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int64_t i = 0; i < 512; ++i) mean += s.points.at(i, c);
      EXPECT_LT(std::fabs(mean / 512.0), 1e-5);
    }
    // labels valid; point + offset hits the labeled joint bit-exactly
    for (int64_t i = 0; i < 512; ++i) {
      const int64_t l = s.gt_labels[static_cast<size_t>(i)];
      ASSERT_GE(l, 0);
      ASSERT_LT(l, 16);
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(s.points.at(i, c) + s.gt_offsets.at(i, c), s.gt_joints.at(l, c));
    }
  }
}

TEST(Generate, DeterministicAndNoiseKeepsAnnotations) {
  const auto model = make_toy_model<double>(16, 400, 41);
  GenerateOptions opt;
  opt.num_samples = 1;
  opt.points_per_sample = 256;
  opt.seed = 7;

  const auto a = generate_sample(model, opt, 0);
  const auto b = generate_sample(model, opt, 0);
  EXPECT_EQ(a.points.data, b.points.data);
  EXPECT_EQ(a.gt_offsets.data, b.gt_offsets.data);
  EXPECT_EQ(a.gt_labels, b.gt_labels);

  GenerateOptions noisy = opt;
  noisy.noise_sigma = 0.010;
  const auto n = generate_sample(model, noisy, 0);
  EXPECT_EQ(n.gt_labels, a.gt_labels);  // annotations come from pre-noise geometry
  EXPECT_NE(n.points.data, a.points.data);
  for (size_t i = 0; i < n.gt_offsets.data.size(); ++i)
    EXPECT_NEAR(n.gt_offsets.data[i], a.gt_offsets.data[i], 1e-5);
  // gt joints shift only by the centroid difference between the two frames
  std::array<double, 3> shift = {n.gt_params.translation.at(0) - a.gt_params.translation.at(0),
                                 n.gt_params.translation.at(1) - a.gt_params.translation.at(1),
                                 n.gt_params.translation.at(2) - a.gt_params.translation.at(2)};
  for (int64_t k = 0; k < 16; ++k)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(n.gt_joints.at(k, c) - a.gt_joints.at(k, c), shift[static_cast<size_t>(c)], 1e-5);
}

TEST(Generate, SinglePartBodyLabelsPerfectly) {
  // all vertices share one part: rendered points must all annotate to it, in
  // agreement with nearest-populated-bone assignment
  auto model = make_toy_model<double>(2, 24, 5);
  for (auto& l : model.part_labels) l = 1;
  GenerateOptions opt;
  opt.num_samples = 1;
  opt.points_per_sample = 128;
  opt.seed = 3;
  const auto s = generate_sample(model, opt, 0);
  for (int64_t l : s.gt_labels) EXPECT_EQ(l, 1);
}

TEST(Generate, FewerPixelsThanRequestedStillFillsN) {
  const auto model = make_toy_model<double>(8, 64, 43);
  GenerateOptions opt;
  opt.num_samples = 1;
  opt.points_per_sample = 3000;  // far above the pixel yield at 160x120 for a small body
  opt.seed = 11;
  const auto s = generate_sample(model, opt, 0);
  EXPECT_EQ(s.points.shape[0], 3000);
}

TEST(Shard, RoundTripBitExact) {
  const auto path = std::filesystem::temp_directory_path() / "vb_shard_test.bin";
  const auto model = make_toy_model<double>(8, 80, 47);
  GenerateOptions opt;
  opt.num_samples = 3;
  opt.points_per_sample = 128;
  opt.noise_sigma = 0.005;
  opt.seed = 13;
  const auto data = generate_dataset(model, opt);
  save_shard(path.string(), data);
  const auto loaded = load_shard(path.string());
  ASSERT_EQ(loaded.size(), data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(loaded[i].points.data, data[i].points.data);
    EXPECT_EQ(loaded[i].gt_offsets.data, data[i].gt_offsets.data);
    EXPECT_EQ(loaded[i].gt_labels, data[i].gt_labels);
    EXPECT_EQ(loaded[i].gt_joints.data, data[i].gt_joints.data);
    EXPECT_EQ(loaded[i].gt_vertices.data, data[i].gt_vertices.data);
    EXPECT_EQ(loaded[i].gt_params.betas.data, data[i].gt_params.betas.data);
    EXPECT_EQ(loaded[i].gt_params.root_rotation.data, data[i].gt_params.root_rotation.data);
    EXPECT_EQ(loaded[i].gt_params.local_rotations.data, data[i].gt_params.local_rotations.data);
    EXPECT_EQ(loaded[i].gt_params.translation.data, data[i].gt_params.translation.data);
    EXPECT_EQ(loaded[i].noise_sigma, data[i].noise_sigma);
    EXPECT_EQ(loaded[i].camera.data, data[i].camera.data);
  }
  std::filesystem::remove(path);
}

TEST(Generate, TranslationRecoversWorldFrame) {
  // adding back -translation restores the uncentered (world) joint positions
  const auto model = make_toy_model<double>(8, 80, 53);
  GenerateOptions opt;
  opt.num_samples = 1;
  opt.points_per_sample = 200;
  opt.seed = 19;
  const auto s = generate_sample(model, opt, 0);
  Rng rng = Rng::fork(opt.seed, 0);
  const auto pose = sample_pose<double>(8, rng, opt.beta_range, opt.max_angle);
  const auto posed = lbs_forward(model, pose);
  for (int64_t k = 0; k < 8; ++k)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(s.gt_joints.at(k, c) - s.gt_params.translation.at(c), posed.joints.at(k, c), 1e-5);
}
