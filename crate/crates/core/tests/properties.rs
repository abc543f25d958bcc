use catseye::designs::{
    build_stack, preset, retro_mirror_radius, DesignFamily, Preset, UnitDesign, N_FUSED_SILICA,
};
use catseye::geometry::{Ray, Vec3};
use catseye::metrics::FractionEstimate;
use catseye::sampling::StreamFamily;
use catseye::scene::{design_envelope_scene, experiment_scene, MarkerPose};
use catseye::tracer::{
    trace_bundle, trace_nonsequential_mc, trace_unit, BundleSpec, BundleStats, Outcome,
};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn family() -> impl Strategy<Value = DesignFamily> {
    prop_oneof![
        Just(DesignFamily::BiconvexA),
        Just(DesignFamily::PlanoconvexB),
        Just(DesignFamily::BallC)
    ]
}

fn design() -> impl Strategy<Value = UnitDesign> {
    (
        family(),
        0.1..1.0f64,
        0.0..0.25f64,
        0.0..=1.0f64,
        any::<bool>(),
    )
        .prop_filter_map("buildable", |(f, r, offset_frac, refl, fresnel)| {
            let a = if f == DesignFamily::PlanoconvexB {
                r
            } else {
                2.0 * r
            };
            let mut d =
                UnitDesign::from_focus_offset(f, r, N_FUSED_SILICA, a, offset_frac * r).ok()?;
            d.mirror_reflectivity = refl;
            d.fresnel_enabled = fresnel;
            build_stack(&d).ok().map(|_| d)
        })
}

fn incoming(radius: f64, z: f64, u: f64, phi: f64, tilt_deg: f64, az: f64) -> Ray {
    let t = tilt_deg.to_radians();
    let dir = Vec3::new(t.sin() * az.cos(), t.sin() * az.sin(), t.cos());
    let target = Vec3::new(
        radius * u.sqrt() * phi.cos(),
        radius * u.sqrt() * phi.sin(),
        z,
    );
    Ray::new(target - dir * 5.0, dir)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exit_weights_are_bounded(d in design(), u in 0.0..1.0f64, phi in 0.0..TAU, tilt in 0.0..25.0f64, az in 0.0..TAU) {
        let stack = build_stack(&d).unwrap();
        let ray = incoming(stack.cell_radius, stack.aperture_z, u, phi, tilt, az);
        let mut s = StreamFamily::new(0, 0).tracing(0);
        if let Some(exit) = trace_unit(&stack, ray, &mut s, false).exit_ray {
            prop_assert!((0.0..=1.0).contains(&exit.weight));
            prop_assert!(exit.direction.z < 0.0);
            if !d.fresnel_enabled && d.mirror_reflectivity == 1.0 {
                prop_assert_eq!(exit.weight, 1.0);
            }
        }
    }

    #[test]
    fn mirrored_rays_exit_mirrored(d in design(), u in 0.0..1.0f64, phi in 0.0..TAU, tilt in 0.0..25.0f64, az in 0.0..TAU) {
        let stack = build_stack(&d).unwrap();
        let ray = incoming(stack.cell_radius, stack.aperture_z, u, phi, tilt, az);
        let flip = |v: Vec3| Vec3::new(-v.x, v.y, v.z);
        let mirrored = Ray { origin: flip(ray.origin), direction: flip(ray.direction), ..ray };
        let mut s = StreamFamily::new(0, 0).tracing(0);
        let a = trace_unit(&stack, ray, &mut s, false);
        let b = trace_unit(&stack, mirrored, &mut s, false);
        prop_assert_eq!(a.outcome, b.outcome);
        if let (Some(x), Some(y)) = (a.exit_ray, b.exit_ray) {
            prop_assert!((flip(x.direction) - y.direction).norm() < 1e-9);
            prop_assert!((flip(x.origin) - y.origin).norm() < 1e-9);
        }
    }

    #[test]
    fn candidates_satisfy_the_retro_condition(f in family(), r in 0.1..1.0f64, n in 1.3..1.9f64, offset in 0.0..0.1f64) {
        if let Ok(d) = UnitDesign::from_focus_offset(f, r, n, r, offset) {
            prop_assert_eq!(d.mirror_radius, retro_mirror_radius(f, r, n, d.gap).unwrap());
        }
    }

    #[test]
    fn stats_merge_is_associative(outcomes in prop::collection::vec((0usize..5, prop::option::of(0.0..1.0f64)), 0..60), cut1 in 0usize..60, cut2 in 0usize..60) {
        let all = [Outcome::Returned, Outcome::LostAperture, Outcome::LostTir, Outcome::LostMiss, Outcome::Absorbed];
        let tally = |xs: &[(usize, Option<f64>)]| {
            let mut s = BundleStats::default();
            for &(o, w) in xs {
                let o = all[o];
                s.record(o, if o == Outcome::Returned { w } else { None });
            }
            s
        };
        let (i, j) = (cut1.min(outcomes.len()), cut2.min(outcomes.len()));
        let (i, j) = (i.min(j), i.max(j));
        let (a, b, c) = (tally(&outcomes[..i]), tally(&outcomes[i..j]), tally(&outcomes[j..]));
        let mut left = a.clone();
        left.merge(&b);
        left.merge(&c);
        let mut bc = b.clone();
        bc.merge(&c);
        let mut right = a;
        right.merge(&bc);
        prop_assert_eq!(left.emitted, outcomes.len() as u64);
        prop_assert_eq!(left.returned, right.returned);
        prop_assert_eq!(left.on_detector, right.on_detector);
        prop_assert!((left.weight_on_detector.value() - right.weight_on_detector.value()).abs() < 1e-12);
        let lost: u64 = left.losses().values().sum();
        prop_assert_eq!(lost + left.returned, left.emitted);
    }
}

#[test]
fn counts_do_not_depend_on_worker_count() {
    let stack = build_stack(&preset(Preset::SelectedA)).unwrap();
    let scene = experiment_scene().with_rays(30_000);
    let spec = BundleSpec::new(&stack, &scene, MarkerPose::rotated(-7.0), 500.0, 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| (trace_bundle(&spec), trace_nonsequential_mc(&spec)))
    };
    let one = run(1);
    for threads in [2, 4, 8] {
        assert_eq!(run(threads), one);
    }
}

#[test]
fn doubling_rays_keeps_fraction_within_three_sigma() {
    let stack = build_stack(&preset(Preset::SelectedC)).unwrap();
    let scene = design_envelope_scene();
    let at = |n: u64| {
        let spec = BundleSpec {
            rays: n,
            ..BundleSpec::new(&stack, &scene, MarkerPose::rotated(6.0), 300.0, 0)
        };
        FractionEstimate::from_stats(&[trace_bundle(&spec)], 1.0)
    };
    let (small, large) = (at(20_000), at(40_000));
    let sigma = (small.stderr.powi(2) + large.stderr.powi(2)).sqrt();
    assert!((small.fraction - large.fraction).abs() < 3.0 * sigma);
}

#[test]
fn sequential_and_nonsequential_tracers_agree() {
    let scene = design_envelope_scene();
    for p in Preset::ALL {
        let stack = build_stack(&preset(p)).unwrap();
        for theta in [0.0, 12.0] {
            let spec = BundleSpec {
                rays: 20_000,
                ..BundleSpec::new(&stack, &scene, MarkerPose::rotated(theta), 300.0, 0)
            };
            let (a, b) = (trace_bundle(&spec), trace_nonsequential_mc(&spec));
            let pa = a.hit_fraction();
            let pb = b.hit_fraction();
            let sigma = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / 20_000.0).sqrt();
            assert!((pa - pb).abs() <= 3.0 * sigma, "{p} {theta}: {pa} vs {pb}");
        }
    }
}
