use proptest::prelude::*;

use gimm::baselines::{fwarp_motion, linear_motion};
use gimm::eval::{epe, flow_psnr};
use gimm::flow::{decode_flo, encode_flo};
use gimm::losses::{census, charbonnier, laplacian, CHARBONNIER_EPS};
use gimm::model::gimm_loss;
use gimm::normalization::{compute_scale, coord_grid, denormalize, normalize, scaled_bidirectional, split_bilateral};
use gimm::synth::{synth_flow, synth_sample, Motion, MotionSpec};
use gimm::synthesis::fuse;
use gimm::warping::{backward_warp, flow_consistency, flow_variance, forward_splat, splat_weights};
use gimm::{FlowField, FrameImage, NormalizedFlow, Tensor};

fn field(h: usize, w: usize, c: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, h * w * c).prop_map(move |v| Tensor::new(&[h, w, c], v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=7, 1usize..=7)
}

fn flow_pair(mag: f64) -> impl Strategy<Value = (FlowField, FlowField)> {
    dims().prop_flat_map(move |(h, w)| (field(h, w, 2, -mag, mag), field(h, w, 2, -mag, mag)))
        .prop_map(|(a, b)| (FlowField::from_tensor(a).unwrap(), FlowField::from_tensor(b).unwrap()))
}

fn translation() -> impl Strategy<Value = MotionSpec> {
    (-4.0f64..4.0, -4.0f64..4.0, any::<u64>()).prop_map(|(u, v, seed)| MotionSpec::new(Motion::Translation { velocity: [u, v] }, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flo_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 2..=98)) {
        let n = vals.len() / 2;
        let data: Vec<f64> = vals[..2 * n].iter().map(|&v| v as f64).collect();
        let f = FlowField::from_tensor(Tensor::new(&[1, n, 2], data.clone()).unwrap()).unwrap();
        let back = decode_flo(&encode_flo(&f)).unwrap();
        let bits = |d: &[f64]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.as_tensor().data()), bits(&data));
    }

    #[test]
    fn translation_flow_is_linear_in_time(spec in translation(), t in 0.0f64..=1.0) {
        let full = synth_flow(&spec, 0.0, 1.0, 6, 5).unwrap();
        let part = synth_flow(&spec, 0.0, t, 6, 5).unwrap();
        let back = synth_flow(&spec, 1.0, 0.0, 6, 5).unwrap();
        for (p, f) in part.as_tensor().data().iter().zip(full.as_tensor().data()) {
            prop_assert!((p - t * f).abs() <= 1e-12 * (1.0 + f.abs()));
        }
        prop_assert_eq!(back, full.neg());
    }

    #[test]
    fn sample_boundaries_are_exactly_zero(spec in translation(), q in -2.0f64..2.0) {
        let specs = [spec.clone(), MotionSpec::new(Motion::Quadratic { velocity: [q, 1.0], acceleration: [1.0, q] }, spec.texture_seed)];
        for s in &specs {
            let smp = synth_sample(s, 10, 9, &[0.0, 0.5, 1.0]).unwrap();
            prop_assert_eq!(smp.gt[0].ft0.max_abs(), 0.0);
            prop_assert_eq!(smp.gt[2].ft1.max_abs(), 0.0);
        }
    }

    #[test]
    fn normalization_round_trip_and_exact_split((f01, f10) in flow_pair(50.0), t in 0.0f64..=1.0) {
        let s = compute_scale(&f01, &f10);
        let v = normalize(&f01, s).unwrap();
        let back = denormalize(&v);
        for (a, b) in back.as_tensor().data().iter().zip(f01.as_tensor().data()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let (ft0, ft1) = split_bilateral(&v, t).unwrap();
        prop_assert_eq!(ft1.sub(&ft0), back);
    }

    #[test]
    fn scaled_bidirectional_is_linear((f01, f10) in flow_pair(10.0), t in 0.0f64..=1.0, k in -3.0f64..3.0) {
        let (a, b) = scaled_bidirectional(&f01, &f10, t).unwrap();
        let (ka, kb) = scaled_bidirectional(&f01.scaled(k), &f10.scaled(k), t).unwrap();
        for (x, y) in a.scaled(k).as_tensor().data().iter().zip(ka.as_tensor().data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        for (x, y) in b.scaled(k).as_tensor().data().iter().zip(kb.as_tensor().data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        prop_assert_eq!(a, f01.scaled(t));
        prop_assert_eq!(b, f10.scaled(1.0 - t));
    }

    #[test]
    fn coord_grid_is_monotone_with_unit_borders(h in 2usize..12, w in 2usize..12, t in 0.0f64..=1.0) {
        let g = coord_grid(h, w, t).unwrap().into_tensor();
        for y in 0..h {
            prop_assert_eq!(g.at(y, 0, 0), -1.0);
            prop_assert_eq!(g.at(y, w - 1, 0), 1.0);
            for x in 1..w {
                prop_assert!(g.at(y, x, 0) > g.at(y, x - 1, 0));
            }
        }
        for x in 0..w {
            prop_assert_eq!(g.at(0, x, 1), -1.0);
            prop_assert_eq!(g.at(h - 1, x, 1), 1.0);
            for y in 1..h {
                prop_assert!(g.at(y, x, 1) > g.at(y - 1, x, 1));
            }
        }
        prop_assert!(g.data().chunks(3).all(|p| p[2] == 2.0 * t - 1.0));
    }

    #[test]
    fn integer_backward_warp_is_a_shift(f in field(5, 6, 2, -1.0, 1.0), du in -7i64..7, dv in -7i64..7) {
        let fl = Tensor::from_fn_hwc(5, 6, 2, |_, _, c| if c == 0 { du as f64 } else { dv as f64 });
        let out = backward_warp(&f, &fl).unwrap();
        for y in 0..5i64 {
            for x in 0..6i64 {
                let (sy, sx) = ((y + dv).clamp(0, 4) as usize, (x + du).clamp(0, 5) as usize);
                for c in 0..2 {
                    prop_assert_eq!(out.at(y as usize, x as usize, c), f.at(sy, sx, c));
                }
            }
        }
    }

    #[test]
    fn zero_flow_splat_is_identity(f in field(4, 5, 3, -2.0, 2.0), z in field(4, 5, 1, -5.0, 5.0)) {
        let (out, _) = forward_splat(&f, &Tensor::zeros(&[4, 5, 2]), &z).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn flow_metrics_are_well_behaved((a, b) in flow_pair(4.0), u in -3.0f64..3.0, v in -3.0f64..3.0) {
        let c = flow_consistency(a.as_tensor(), b.as_tensor()).unwrap();
        prop_assert!(c.data().iter().all(|&x| x >= 0.0));
        let w = backward_warp(b.as_tensor(), a.as_tensor()).unwrap();
        for (k, &x) in c.data().iter().enumerate() {
            let cancels = w.data()[2 * k] == -a.as_tensor().data()[2 * k] && w.data()[2 * k + 1] == -a.as_tensor().data()[2 * k + 1];
            prop_assert_eq!(x == 0.0, cancels);
        }
        let (h, w) = (a.height(), a.width());
        let cst = FlowField::constant(h, w, u.round(), v.round());
        prop_assert!(flow_consistency(cst.as_tensor(), cst.neg().as_tensor()).unwrap().data().iter().all(|&x| x == 0.0));
        let cst = FlowField::constant(h, w, u, v);
        prop_assert!(flow_variance(cst.as_tensor()).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn splat_weights_stay_within_zero_and_two(uf in field(3, 4, 1, 0.0, 50.0), uv in field(3, 4, 1, 0.0, 50.0), af in 0.0f64..10.0, av in 0.0f64..10.0) {
        let z = splat_weights(&uf, &uv, af, av).unwrap();
        prop_assert!(z.data().iter().all(|&x| x > 0.0 && x <= 2.0));
        let zero = Tensor::zeros(&[3, 4, 1]);
        prop_assert!(splat_weights(&zero, &zero, af, av).unwrap().data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn flow_loss_is_symmetric_and_zero_only_on_equality(a in field(3, 3, 2, 0.0, 1.0), b in field(3, 3, 2, 0.0, 1.0)) {
        let (p, q) = (NormalizedFlow::new(a, 2.0).unwrap(), NormalizedFlow::new(b, 2.0).unwrap());
        prop_assert_eq!(gimm_loss(&p, &q).unwrap(), gimm_loss(&q, &p).unwrap());
        prop_assert_eq!(gimm_loss(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(gimm_loss(&p, &q).unwrap() == 0.0, p.data() == q.data());
    }

    #[test]
    fn baselines_hold_boundary_identities((f01, f10) in flow_pair(5.0)) {
        for m in [linear_motion, fwarp_motion] {
            let (a, _) = m(&f01, &f10, 0.0).unwrap();
            let (_, b) = m(&f01, &f10, 1.0).unwrap();
            prop_assert_eq!(a.max_abs(), 0.0);
            prop_assert_eq!(b.max_abs(), 0.0);
        }
    }

    #[test]
    fn fusion_stays_in_envelope(a in field(4, 4, 3, 0.0, 1.0), b in field(4, 4, 3, 0.0, 1.0), m in field(4, 4, 1, 0.0, 1.0)) {
        let (fa, fb) = (FrameImage::from_tensor(a.clone()).unwrap(), FrameImage::from_tensor(b.clone()).unwrap());
        let out = fuse(&fa, &fb, &m, None).unwrap();
        for ((o, x), y) in out.as_tensor().data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!(*o >= x.min(*y) - 1e-15 && *o <= x.max(*y) + 1e-15);
        }
    }

    #[test]
    fn losses_respect_their_floors(a in field(16, 16, 3, 0.0, 1.0), b in field(16, 16, 3, 0.0, 1.0)) {
        prop_assert!(charbonnier(&a, &b).unwrap() >= CHARBONNIER_EPS);
        prop_assert_eq!(charbonnier(&a, &a).unwrap(), CHARBONNIER_EPS);
        prop_assert!(laplacian(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(laplacian(&a, &a).unwrap(), 0.0);
        let floor = census(&a, &a).unwrap();
        prop_assert!((floor - CHARBONNIER_EPS).abs() <= 1e-15);
        prop_assert!(census(&a, &b).unwrap() >= floor);
    }

    #[test]
    fn metrics_are_symmetric_and_permutation_invariant((p, q) in flow_pair(5.0), seed in any::<u64>()) {
        prop_assert_eq!(epe(&p, &q).unwrap(), epe(&q, &p).unwrap());
        let n = p.height() * p.width();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffle = |f: &FlowField| {
            let d = f.as_tensor().data();
            let v: Vec<f64> = order.iter().flat_map(|&k| [d[2 * k], d[2 * k + 1]]).collect();
            FlowField::from_tensor(Tensor::new(&[p.height(), p.width(), 2], v).unwrap()).unwrap()
        };
        let (e0, e1) = (epe(&p, &q).unwrap(), epe(&shuffle(&p), &shuffle(&q)).unwrap());
        prop_assert!((e0 - e1).abs() <= 1e-12 * (1.0 + e0));
        let s = compute_scale(&p, &q);
        let (vp, vq) = (normalize(&p, s).unwrap(), normalize(&q, s).unwrap());
        let (sp, sq) = (normalize(&shuffle(&p), s).unwrap(), normalize(&shuffle(&q), s).unwrap());
        let (a, b, c) = (flow_psnr(&vp, &vq).unwrap(), flow_psnr(&vq, &vp).unwrap(), flow_psnr(&sp, &sq).unwrap());
        prop_assert_eq!(a, b);
        prop_assert!(a == c || (a - c).abs() <= 1e-9);
    }

    #[test]
    fn flow_psnr_falls_with_perturbation(base in field(4, 4, 2, 0.2, 0.8), d1 in 1e-4f64..0.1, k in 1.01f64..3.0) {
        let v = NormalizedFlow::new(base.clone(), 3.0).unwrap();
        let near = NormalizedFlow::new(base.map(|x| x + d1), 3.0).unwrap();
        let far = NormalizedFlow::new(base.map(|x| x + k * d1), 3.0).unwrap();
        prop_assert!(flow_psnr(&far, &v).unwrap() < flow_psnr(&near, &v).unwrap());
    }
}
