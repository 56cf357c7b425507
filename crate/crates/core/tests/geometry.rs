use flowdist::flow::FlowEstimator;
use flowdist::latent::{dot, norm};
use flowdist::metrics::epe_avg;
use flowdist::nearby::{expected_chord, perturb_along, project_to_tangent};
use flowdist::{
    block_matching_flow, estimate_distribution, perturb_on_shell, sample_neighbors, synth_scene, warp_image,
    BlockMatchParams, BlockMatcher, FlowField, ImagePlane, LatentCodec, LatentState, NearbyConfig, RngStream,
    SceneSpec,
};
use proptest::prelude::*;

fn random_latent(seed: u64, dim: usize, scale: f64) -> LatentState {
    let data = RngStream::new(seed, 0)
        .standard_normal_vector(dim)
        .unwrap()
        .into_iter()
        .map(|x| scale * x)
        .collect();
    LatentState::from_vec(data).unwrap()
}

/// Uniform noise image of any size (scene synthesis insists on 8x8 or more).
fn noise_image(seed: u64, h: usize, w: usize, c: usize) -> ImagePlane {
    let mut rng = RngStream::new(seed, 3);
    ImagePlane::new(h, w, c, (0..h * w * c).map(|_| rng.uniform()).collect()).unwrap()
}

fn texture(seed: u64, h: usize, w: usize, c: usize) -> ImagePlane {
    let spec = SceneSpec::RandomTexture {
        height: h,
        width: w,
        channels: c,
    };
    synth_scene(&spec, &mut RngStream::new(seed, 0)).unwrap()
}

#[test]
fn projection_examples() {
    let z = LatentState::from_vec(vec![1.0, 0.0]).unwrap();
    assert_eq!(project_to_tangent(&[1.0, 1.0], &z).unwrap(), vec![0.0, 1.0]);
    let z = LatentState::from_vec(vec![0.0, 2.0]).unwrap();
    assert_eq!(project_to_tangent(&[3.0, 5.0], &z).unwrap(), vec![3.0, 0.0]);
    let z = LatentState::from_vec(vec![1.0, 0.0]).unwrap();
    assert_eq!(project_to_tangent(&[2.0, 0.0], &z).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn forced_direction_examples() {
    let z = LatentState::from_vec(vec![1.0, 0.0]).unwrap();
    let out = perturb_along(&z, &[0.0, 1.0], 1.0).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((out.data()[0] - h).abs() < 1e-15 && (out.data()[1] - h).abs() < 1e-15);
    let chord = norm(&[out.data()[0] - 1.0, out.data()[1]]);
    assert!((chord - 2.0 * (0.5 * 1f64.atan()).sin()).abs() < 1e-12);
    assert!((chord - 0.76537).abs() < 1e-5);
}

#[test]
fn large_batch_stays_on_shell() {
    let z0 = random_latent(1, 16384, 1.0);
    let out = sample_neighbors(&z0, &NearbyConfig::new(30.0, 500), 42).unwrap();
    assert_eq!(out.len(), 500);
    let r = z0.norm();
    for z in &out {
        assert!((z.norm() - r).abs() <= 1e-12 * r);
    }
}

#[test]
fn directions_are_isotropic_in_the_tangent_plane() {
    let dim = 1024;
    let n = 10_000;
    let z0 = random_latent(2, dim, 1.0);
    let r = z0.norm();
    let zhat: Vec<f64> = z0.data().iter().map(|x| x / r).collect();

    let delta = 5.0;
    // recover d from the output: out = (z0 + delta d) * r / sqrt(r^2 + delta^2)
    let lift = (r * r + delta * delta).sqrt() / r;
    let mut mean = vec![0.0; dim];
    let mut second = vec![0.0; dim];
    let mut pair_dots = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    for i in 0..n {
        let out = perturb_on_shell(&z0, delta, &mut RngStream::new(77, i as u64)).unwrap();
        let d: Vec<f64> = out
            .data()
            .iter()
            .zip(z0.data())
            .map(|(o, z)| (o * lift - z) / delta)
            .collect();
        assert!((norm(&d) - 1.0).abs() < 1e-9);
        assert!(dot(&d, &zhat).abs() < 1e-9);
        for k in 0..dim {
            mean[k] += d[k];
            second[k] += d[k] * d[k];
        }
        if let Some(p) = &prev {
            pair_dots += dot(p, &d);
        }
        prev = Some(d);
    }
    let mean: Vec<f64> = mean.iter().map(|m| m / n as f64).collect();
    // ||mean|| of n uniform unit vectors concentrates at 1/sqrt(n)
    assert!(norm(&mean) * (n as f64).sqrt() < 4.0, "mean norm {}", norm(&mean));
    assert!((pair_dots / (n - 1) as f64).abs() < 0.01);

    let target = 1.0 / (dim - 1) as f64;
    let mut pooled = 0.0;
    for k in 0..dim {
        // the tangent-plane marginal of coordinate k
        let expected = (1.0 - zhat[k] * zhat[k]) * target;
        pooled += second[k] / n as f64 / expected;
    }
    let pooled = pooled / dim as f64;
    assert!((pooled - 1.0).abs() < 0.05, "pooled variance ratio {pooled}");
    for k in [0, 100, 511, 1023] {
        let v = second[k] / n as f64;
        let expected = (1.0 - zhat[k] * zhat[k]) * target;
        assert!((v / expected - 1.0).abs() < 0.05, "coordinate {k}: {v}");
    }
}

#[test]
fn block_matching_recovers_shifts_with_high_probability() {
    let params = BlockMatchParams {
        patch_radius: 3,
        search_radius: 3,
        ..Default::default()
    };
    let margin = params.patch_radius + params.search_radius;
    let mut failures = 0;
    let trials = 60;
    for seed in 0..trials {
        let x0 = texture(seed, 32, 32, 1);
        let mut rng = RngStream::new(seed, 1);
        let s = (
            rng.uniform_int(0, 6) as f64 - 3.0,
            rng.uniform_int(0, 6) as f64 - 3.0,
        );
        let x1 = warp_image(&x0, &FlowField::constant(32, 32, s.0, s.1)).unwrap();
        let f = block_matching_flow(&x0, &x1, &params).unwrap();
        let mut ok = true;
        for y in margin..32 - margin {
            for x in margin..32 - margin {
                ok &= f.at(y, x) == s;
            }
        }
        failures += usize::from(!ok);
    }
    assert_eq!(failures, 0, "{failures}/{trials} images not recovered");
}

#[test]
fn warped_distribution_has_zero_epe() {
    let x0 = texture(3, 24, 24, 3);
    let fields: Vec<FlowField> = [(1.0, 0.0), (0.0, -2.0), (-1.0, 1.0), (2.0, 2.0)]
        .iter()
        .map(|&(u, v)| FlowField::constant(24, 24, u, v))
        .collect();
    let frames: Vec<ImagePlane> = fields.iter().map(|f| warp_image(&x0, f).unwrap()).collect();
    let est = BlockMatcher::new(BlockMatchParams {
        patch_radius: 2,
        search_radius: 3,
        ..Default::default()
    })
    .unwrap();
    let dist = estimate_distribution(&x0, &frames, &est).unwrap();
    assert_eq!(dist.len(), 4);
    // warping clamps at the border, so compare on the interior only
    let c = 5;
    for (member, gt) in dist.members().iter().zip(&fields) {
        let inner = |f: &FlowField| {
            FlowField::from_fn(24 - 2 * c, 24 - 2 * c, |y, x| f.at(y + c, x + c)).unwrap()
        };
        let single = flowdist::FlowDistribution::new(vec![inner(member)]).unwrap();
        assert_eq!(epe_avg(&single, &inner(gt)).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbours_share_norm_and_chord(
        dim in 2usize..300,
        delta in 0.0f64..80.0,
        scale in 0.01f64..50.0,
        seed in any::<u64>(),
    ) {
        let z0 = random_latent(seed, dim, scale);
        let r = z0.norm();
        let out = sample_neighbors(&z0, &NearbyConfig::new(delta, 6), seed ^ 1).unwrap();
        let chord = expected_chord(r, delta);
        for z in &out {
            prop_assert!((z.norm() - r).abs() <= 1e-12 * r);
            let c = norm(&z.data().iter().zip(z0.data()).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!((c - chord).abs() <= 1e-9 * chord.max(1e-300) + 1e-12 * r);
        }
    }

    #[test]
    fn projection_is_tangent(dim in 2usize..200, seed in any::<u64>()) {
        let z0 = random_latent(seed, dim, 3.0);
        let eta = RngStream::new(seed, 9).standard_normal_vector(dim).unwrap();
        let p = project_to_tangent(&eta, &z0).unwrap();
        prop_assert!(dot(&p, z0.data()).abs() <= 1e-9 * norm(&p) * z0.norm());
    }

    #[test]
    fn prefixes_are_stable(n in 1usize..12, extra in 1usize..6, seed in any::<u64>()) {
        let z0 = random_latent(seed, 32, 1.0);
        let short = sample_neighbors(&z0, &NearbyConfig::new(3.0, n), seed).unwrap();
        let long = sample_neighbors(&z0, &NearbyConfig::new(3.0, n + extra), seed).unwrap();
        prop_assert_eq!(&short[..], &long[..n]);
    }

    #[test]
    fn warp_is_linear(seed in any::<u64>(), a in 0.0f64..0.5, b in 0.0f64..0.5, u in -3.0f64..3.0, v in -3.0f64..3.0) {
        let i1 = noise_image(seed, 10, 12, 3);
        let i2 = noise_image(seed ^ 7, 10, 12, 3);
        let combo = ImagePlane::new(
            10, 12, 3,
            i1.pixels().iter().zip(i2.pixels()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let flow = FlowField::from_fn(10, 12, |y, x| (u + 0.1 * x as f64, v - 0.2 * y as f64)).unwrap();
        let lhs = warp_image(&combo, &flow).unwrap();
        let (w1, w2) = (warp_image(&i1, &flow).unwrap(), warp_image(&i2, &flow).unwrap());
        for ((l, p), q) in lhs.pixels().iter().zip(w1.pixels()).zip(w2.pixels()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-9);
        }
    }

    #[test]
    fn codecs_preserve_dims(seed in any::<u64>(), hb in 1usize..6, wb in 1usize..6, c in prop_oneof![Just(1usize), Just(3usize)], k in 1usize..4) {
        let img = noise_image(seed, hb * k, wb * k, c);
        for codec in [LatentCodec::Identity, LatentCodec::BlockAverage { factor: k }] {
            let back = codec.decode(&codec.encode(&img).unwrap()).unwrap();
            prop_assert_eq!(back.dims(), img.dims());
        }
        let id = LatentCodec::Identity;
        prop_assert_eq!(id.decode(&id.encode(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn estimator_output_matches_input_dims(seed in any::<u64>(), h in 3usize..14, w in 3usize..14, c in prop_oneof![Just(1usize), Just(3usize)]) {
        let x0 = noise_image(seed, h, w, c);
        let x1 = noise_image(seed ^ 3, h, w, c);
        let est = BlockMatcher::new(BlockMatchParams { patch_radius: 1, search_radius: 2, ..Default::default() }).unwrap();
        let f = est.estimate(&x0, &x1).unwrap();
        prop_assert_eq!(f.dims(), (h, w));
        prop_assert_eq!(est.estimate(&x0, &x1).unwrap(), f);
    }
}
