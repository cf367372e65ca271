use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ikk_core::arm::{null_space_basis, range_null_dims};
use ikk_core::capture::{segment_steady, synthesize_calibration, SynthConfig};
use ikk_core::control::{evaluate_basis, SignalFilter};
use ikk_core::experiments::{fit_learning_curve, learning_curve, rmse, FitOptions, XMin};
use ikk_core::identify::{align_signs, identify_session, kmeans, pca, IdentifyConfig};
use ikk_core::interp::build_volume;
use ikk_core::{ArmModel, ControlConfig, ControlEngine, Frame, InterpolationVolume, JointVector, Recording, SignalBasis, SignalMode, SteadyParams};

fn fixture() -> &'static (ArmModel, Vec<SignalBasis>, InterpolationVolume) {
    static F: OnceLock<(ArmModel, Vec<SignalBasis>, InterpolationVolume)> = OnceLock::new();
    F.get_or_init(|| {
        let model = ArmModel::default();
        let session = synthesize_calibration(&model, 42, &SynthConfig::default()).unwrap();
        let bases = identify_session(&session, &IdentifyConfig::default()).unwrap();
        let volume = build_volume(bases.clone()).unwrap();
        (model, bases, volume)
    })
}

fn node_box(v: &InterpolationVolume, pad: f64) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for n in &v.nodes {
        lo = lo.inf(&n.position());
        hi = hi.sup(&n.position());
    }
    (lo.add_scalar(-pad), hi.add_scalar(pad))
}

fn point_in(lo: &Vector3<f64>, hi: &Vector3<f64>, u: [f64; 3]) -> Vector3<f64> {
    Vector3::from_fn(|i, _| lo[i] + u[i] * (hi[i] - lo[i]))
}

/// Signed distance margin of `q` against every supporting plane through three
/// nodes. Positive means strictly inside, negative strictly outside.
fn brute_force_hull_margin(points: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                let len = normal.norm();
                if len < 1e-12 {
                    continue;
                }
                let normal = normal / len;
                let side: Vec<f64> = points.iter().map(|p| normal.dot(&(p - points[i]))).collect();
                let max = side.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = side.iter().cloned().fold(f64::INFINITY, f64::min);
                let d = normal.dot(&(q - points[i]));
                if max <= 1e-12 {
                    margin = margin.min(-d);
                } else if min >= -1e-12 {
                    margin = margin.min(d);
                }
            }
        }
    }
    margin
}

/// Random walk recording with interleaved dwells.
fn random_recording(model: &ArmModel, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = model.random_config(&mut rng);
    let mut frames = Vec::new();
    let mut t = 0.0;
    for _ in 0..6 {
        let hold = rng.gen_range(60..200);
        for _ in 0..hold {
            let mut qn = q.clone();
            for x in qn.iter_mut() {
                *x += rng.gen_range(-2e-4..2e-4);
            }
            frames.push(Frame::from_config(model, t, qn).unwrap());
            t += 0.01;
        }
        let vel = JointVector::from_fn(model.dof(), |_, _| rng.gen_range(-0.8..0.8));
        for _ in 0..rng.gen_range(30..120) {
            q += &vel * 0.01;
            model.clamp_to_limits(&mut q);
            frames.push(Frame::from_config(model, t, q.clone()).unwrap());
            t += 0.01;
        }
    }
    Recording::new(frames, 100.0, "walk").unwrap()
}

fn steady_frames(rec: &Recording, params: &SteadyParams) -> Vec<bool> {
    let mut mask = vec![false; rec.len()];
    for s in segment_steady(rec, params).unwrap() {
        mask[s.begin..s.end].iter_mut().for_each(|m| *m = true);
    }
    mask
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_is_a_metric_on_traces(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..200),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = rmse(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(d == 0.0, a == b);
        let mirrored: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * y - x).collect();
        prop_assert!((rmse(&mirrored, &b).unwrap() - d).abs() <= 1e-9 * (1.0 + d));
        prop_assert!((rmse(&b, &a).unwrap() - d).abs() <= 1e-12 * (1.0 + d));
    }

    #[test]
    fn null_space_is_sound_and_dimensions_add_up(seed in any::<u64>()) {
        let model = ArmModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = model.random_config(&mut rng);
        if seed % 5 == 0 {
            q[3] = 0.0;
        }
        let j = model.jacobian(&q).unwrap();
        let basis = null_space_basis(&j, 1e-9).unwrap();
        let norm = j.entries.clone().svd(false, false).singular_values.max();
        for c in basis.column_iter() {
            prop_assert!((&j.entries * c).norm() <= 1e-8 * norm.max(1.0));
        }
        let (r, k) = range_null_dims(&j, 1e-9).unwrap();
        prop_assert_eq!(r + k, model.dof());
        prop_assert_eq!(k, basis.ncols());
    }

    #[test]
    fn jacobian_columns_match_finite_differences(seed in any::<u64>()) {
        let model = ArmModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = model.random_config(&mut rng);
        let j = model.jacobian(&q).unwrap();
        let h = 1e-6;
        for c in 0..model.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let p = model.forward_kinematics(&qp).unwrap();
            let m = model.forward_kinematics(&qm).unwrap();
            let lin = (p.position - m.position) / (2.0 * h);
            let ang = (p.orientation * m.orientation.inverse()).scaled_axis() / (2.0 * h);
            for r in 0..3 {
                prop_assert!((j.entries[(r, c)] - lin[r]).abs() <= 1e-6);
                prop_assert!((j.entries[(r + 3, c)] - ang[r]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 12..80),
        k in 1usize..6,
    ) {
        let points: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::from(*p)).collect();
        let set = kmeans(&points, k, 100).unwrap();
        for w in set.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn pca_reconstructs_centered_data(seed in any::<u64>(), m in 10usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, 7, |_, _| rng.gen_range(-1.0..1.0));
        let p = pca(&x).unwrap();
        for r in 0..m {
            let c: DVector<f64> = x.row(r).transpose() - &p.mean;
            let back = p.components.iter().fold(DVector::zeros(7), |acc, v| acc + v * v.dot(&c));
            prop_assert!((back - &c).norm() <= 1e-9);
        }
    }

    #[test]
    fn learning_curve_fit_best_residual_is_monotone(seed in any::<u64>(), n in 8usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = [-0.3, 0.5, 0.2, 20.0];
        let y: Vec<f64> = (1..=n)
            .map(|x| learning_curve(&theta, 10.0, x as f64) * (1.0 + rng.gen_range(-0.05..0.05)))
            .collect();
        let fit = fit_learning_curve(&y, &FitOptions { restarts: 8, seed, max_iters: 300, x_min: XMin::Observed }).unwrap();
        prop_assert!(!fit.best_trace.is_empty());
        for w in fit.best_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert_eq!(*fit.best_trace.last().unwrap(), fit.rss);
    }

    #[test]
    fn filter_respects_slew_and_range(
        vals in prop::collection::vec(0.0f64..100.0, 2..300),
        tau in 0.0f64..0.3,
        slew in 10.0f64..1000.0,
    ) {
        let mut f = SignalFilter::new(ControlConfig { time_constant: tau, slew_rate: slew, invert: false });
        let mut prev: Option<f64> = None;
        for (i, v) in vals.iter().enumerate() {
            let y = f.push(i as f64 * 0.01, *v).unwrap();
            prop_assert!((0.0..=100.0).contains(&y));
            if let Some(p) = prev {
                prop_assert!((y - p).abs() <= slew * 0.01 * (1.0 + 1e-9));
            }
            prev = Some(y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sibson_weights_partition_unity(u in prop::array::uniform3(0.0f64..1.0)) {
        let (_, _, volume) = fixture();
        let (lo, hi) = node_box(volume, 0.0);
        let q = point_in(&lo, &hi, u);
        if let Some(w) = volume.sibson_weights(&q) {
            let s: f64 = w.iter().map(|(_, w)| w).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|(_, w)| *w >= -1e-12));
        }
    }

    #[test]
    fn hull_classification_matches_brute_force(u in prop::array::uniform3(0.0f64..1.0)) {
        let (_, _, volume) = fixture();
        let (lo, hi) = node_box(volume, 0.05);
        let q = point_in(&lo, &hi, u);
        let pts: Vec<Vector3<f64>> = volume.nodes.iter().map(|n| n.position()).collect();
        let margin = brute_force_hull_margin(&pts, &q);
        prop_assume!(margin.abs() > 1e-9);
        prop_assert_eq!(volume.hull_side(&q) == 1, margin > 0.0);
        prop_assert_eq!(volume.hull_side(&q) == -1, margin < 0.0);
    }

    #[test]
    fn interpolation_is_continuous_along_paths(a in prop::array::uniform3(0.0f64..1.0), b in prop::array::uniform3(0.0f64..1.0)) {
        let (_, _, volume) = fixture();
        let pts: Vec<Vector3<f64>> = volume.nodes.iter().map(|n| n.position()).collect();
        let (lo, hi) = node_box(volume, 0.0);
        let (pa, pb) = (point_in(&lo, &hi, a), point_in(&lo, &hi, b));
        let steps = ((pb - pa).norm() / 1e-3).ceil().max(1.0) as usize;
        let step = (pb - pa) / steps as f64;
        let angle = |x: &ikk_core::InterpolatedBasis, y: &ikk_core::InterpolatedBasis| {
            x.directions[0].dot(&y.directions[0]).abs().min(1.0).acos().to_degrees()
        };
        for s in 0..steps {
            let p = pa + step * s as f64;
            if volume.hull_side(&p) != 1 || volume.hull_side(&(p + step)) != 1 {
                continue;
            }
            let (x, y) = (volume.interpolate(&p).unwrap(), volume.interpolate(&(p + step)).unwrap());
            let span = x.span().max(y.span());
            prop_assert!((x.range[0] - y.range[0]).abs() < 0.01 * span);
            prop_assert!((x.range[1] - y.range[1]).abs() < 0.01 * span);
            if brute_force_hull_margin(&pts, &p) >= 5e-3 {
                prop_assert!(angle(&x, &y) < 1.0);
            } else {
                // Exact Sibson weights steepen close to a hull facet; check that
                // the change shrinks with the step instead of jumping.
                let fine = volume.interpolate(&(p + step * 0.1)).unwrap();
                prop_assert!(angle(&x, &fine) < 0.5);
            }
        }
    }

    #[test]
    fn control_value_stays_in_range(seed in any::<u64>()) {
        let (model, _, volume) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut engine = ControlEngine::new(volume, ControlConfig::default());
        for i in 0..20 {
            let q = model.random_config(&mut rng);
            let s = engine.push(&Frame::from_config(model, i as f64 * 0.01, q).unwrap()).unwrap();
            prop_assert!((0.0..=100.0).contains(&s.value));
            prop_assert!((0.0..=100.0).contains(&s.instant));
        }
    }

    #[test]
    fn one_pc_response_is_monotone(u in prop::array::uniform3(0.0f64..1.0), steps in prop::collection::vec(0.0f64..0.2, 1..20)) {
        let (_, _, volume) = fixture();
        let (lo, hi) = node_box(volume, 0.0);
        let basis = volume.interpolate(&point_in(&lo, &hi, u)).unwrap();
        prop_assume!(basis.mode == SignalMode::OnePC);
        let d = basis.directions[0].normalize();
        let mut q = basis.mean.clone() - &d * 1.0;
        let mut last = evaluate_basis(&basis, &q).unwrap().1;
        for s in steps {
            q += &d * s;
            let v = evaluate_basis(&basis, &q).unwrap().1;
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn sign_alignment_ignores_global_negation(flip in prop::collection::vec(any::<bool>(), 64)) {
        let (_, bases, _) = fixture();
        let mut scrambled = bases.clone();
        for (b, f) in scrambled.iter_mut().zip(&flip) {
            if *f {
                b.directions[0] = -&b.directions[0];
            }
        }
        let negated: Vec<SignalBasis> = scrambled
            .iter()
            .cloned()
            .map(|mut b| {
                b.directions[0] = -&b.directions[0];
                b
            })
            .collect();
        let x = align_signs(&scrambled);
        let y = align_signs(&negated);
        let global = x[0].directions[0].dot(&y[0].directions[0]).signum();
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((&a.directions[0] * global - &b.directions[0]).norm() <= 1e-12);
        }
    }

    #[test]
    fn raising_linear_threshold_keeps_steady_frames(seed in any::<u64>(), bump in 0.0f64..0.1) {
        let model = ArmModel::default();
        let rec = random_recording(&model, seed);
        let base = SteadyParams::default();
        let raised = SteadyParams { v_lin_max: base.v_lin_max + bump, ..base.clone() };
        let a = steady_frames(&rec, &base);
        let b = steady_frames(&rec, &raised);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(!*x || *y);
        }
    }
}
