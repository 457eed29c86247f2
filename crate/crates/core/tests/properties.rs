use proptest::prelude::*;

use cvegan::evalcli::{bd_rate, MetricId, RDCurve};
use cvegan::metrics::{l1_loss, l2_loss, msssim_loss, srocc, ssim_loss};
use cvegan::nnarch::{CveNet, NetConfig};
use cvegan::spheregan::{inverse_stereographic, north_pole_distance, relativistic_distance};
use cvegan::tensor::{no_grad, Tensor};
use cvegan::trainer::epoch_order;
use cvegan::videopipe::{
    aggregate_blocks, convert_444_to_420, nn_upsample2x, segment_blocks, to_444, ChromaFormat, PlanarFrame, Plane,
};
use cvegan::BlockTensor;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), -2.0f64..2.0)
        .prop_map(|(v, e)| v.into_iter().map(|x| x * 10f64.powf(e)).collect())
}

fn frame(max_w: usize, max_h: usize) -> impl Strategy<Value = PlanarFrame> {
    (2..=max_w / 2, 2..=max_h / 2, prop::bool::ANY, any::<u64>()).prop_map(|(hw, hh, ten, seed)| {
        let (w, h) = (2 * hw, 2 * hh);
        let bd = if ten { 10 } else { 8 };
        let mut f = PlanarFrame::new(w, h, bd, ChromaFormat::Yuv420).unwrap();
        let max = f.max_value() as u64;
        let mut s = seed | 1;
        for p in [Plane::Y, Plane::Cb, Plane::Cr] {
            for v in f.plane_mut(p) {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                *v = (s % (max + 1)) as u16;
            }
        }
        f
    })
}

fn image_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let n = 3 * 24 * 24;
    (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_on_the_sphere(x in point(12)) {
        prop_assert!((inverse_stereographic(&x).unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn geodesic_distances_are_bounded_and_symmetric(x in point(6), y in point(6), m in 1u32..4) {
        let d = relativistic_distance(&x, &y, m);
        prop_assert!((d - relativistic_distance(&y, &x, m)).abs() < 1e-12);
        prop_assert!(d >= 0.0 && d <= std::f64::consts::PI.powi(m as i32) + 1e-12);
        let n = north_pole_distance(&x, 1);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&n));
        // the first moment is the angle itself
        prop_assert!((north_pole_distance(&x, m) - n.powi(m as i32)).abs() < 1e-9 * (1.0 + n.powi(m as i32)));
    }

    #[test]
    fn losses_are_unit_bounded_symmetric_and_vanish_on_identity((a, b) in image_pair()) {
        let shape = [1, 3, 24, 24];
        let ta = Tensor::<f64>::from_vec(&shape, a).unwrap();
        let tb = Tensor::<f64>::from_vec(&shape, b).unwrap();
        let _g = no_grad();
        for f in [l1_loss::<f64>, l2_loss::<f64>, ssim_loss::<f64>] {
            let v = f(&ta, &tb).unwrap().item().unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - f(&tb, &ta).unwrap().item().unwrap()).abs() < 1e-12);
            prop_assert!(f(&ta, &ta).unwrap().item().unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn srocc_is_rank_invariant(x in prop::collection::vec(-5.0f64..5.0, 3..30), seed in any::<u64>()) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + (seed.wrapping_mul(i as u64 + 1) % 7) as f64).collect();
        if let Some(r) = srocc(&x, &y) {
            let fx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert!((srocc(&fx, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn epoch_order_permutes(seed in any::<u64>(), epoch in 0usize..500, n in 0usize..200) {
        let mut o = epoch_order(seed, epoch, n, true);
        prop_assert_eq!(o.clone(), epoch_order(seed, epoch, n, true));
        o.sort_unstable();
        prop_assert_eq!(o, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn bd_rate_ignores_common_rate_scaling(
        q0 in 25.0f64..35.0,
        steps in prop::collection::vec(1.0f64..4.0, 4),
        gains in prop::collection::vec(0.6f64..1.4, 4),
        scale in 0.01f64..100.0,
    ) {
        let mut q = q0;
        let mut anchor = Vec::new();
        let mut test = Vec::new();
        for (i, (s, g)) in steps.iter().zip(&gains).enumerate() {
            q += s;
            let r = 100.0 * 2f64.powi(i as i32);
            anchor.push((r, q));
            test.push((r * g, q));
        }
        let curve = |p: &[(f64, f64)], k: f64| RDCurve::new(p.iter().map(|&(r, q)| (r * k, q)).collect(), MetricId::Psnr).unwrap();
        let base = bd_rate(&curve(&anchor, 1.0), &curve(&test, 1.0)).unwrap();
        let scaled = bd_rate(&curve(&anchor, scale), &curve(&test, scale)).unwrap();
        prop_assert!((base - scaled).abs() < 1e-6 * (1.0 + base.abs()));
        prop_assert!(bd_rate(&curve(&anchor, 1.0), &curve(&anchor, 1.0)).unwrap().abs() < 1e-9);
        // uniformly cheaper at equal quality is a gain
        let cheaper = bd_rate(&curve(&anchor, 1.0), &curve(&anchor, 0.8)).unwrap();
        prop_assert!(cheaper < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segment_then_aggregate_is_identity(f in frame(260, 200)) {
        let (blocks, map) = segment_blocks(&f).unwrap();
        let back = aggregate_blocks(&blocks, &map).unwrap();
        prop_assert_eq!(back.plane(Plane::Y), f.plane(Plane::Y));
        prop_assert!(back.same_format(&f));
    }

    #[test]
    fn nn_upsampling_and_chroma_round_trips(f in frame(64, 48)) {
        // replicating 2x then averaging 2x2 recovers every plane exactly
        let up = nn_upsample2x(&f).unwrap();
        for p in [Plane::Y, Plane::Cb, Plane::Cr] {
            let (w, h) = f.plane_dims(p);
            for y in 0..h {
                for x in 0..w {
                    let v = up.get(p, 2 * x, 2 * y);
                    prop_assert!(v == f.get(p, x, y) && v == up.get(p, 2 * x + 1, 2 * y + 1));
                }
            }
        }
        prop_assert_eq!(convert_444_to_420(&to_444(&f).unwrap()).unwrap(), f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn generator_is_batch_independent(seed in any::<u64>()) {
        let g = CveNet::new(&NetConfig { seed, ..NetConfig::desk(4, 16) }).unwrap();
        let mut s = seed | 1;
        let data: Vec<f32> = (0..2 * 3 * 16 * 16)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 40) as f32 / (1u64 << 24) as f32
            })
            .collect();
        let both = BlockTensor::from_planar(2, 16, 16, data).unwrap();
        let joint = g.enhance(&both).unwrap();
        for i in 0..2 {
            let alone = g.enhance(&both.sample(i)).unwrap();
            let part = joint.sample(i);
            prop_assert_eq!(alone.planar(), part.planar());
        }
    }
}

#[test]
fn msssim_loss_is_zero_for_identical_blocks() {
    let t = Tensor::<f64>::from_vec(&[1, 3, 96, 96], (0..3 * 96 * 96).map(|i| (i % 97) as f64 / 97.0).collect()).unwrap();
    assert!(msssim_loss(&t, &t).unwrap().item().unwrap().abs() < 1e-12);
}
