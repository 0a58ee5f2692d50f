use approx::assert_relative_eq;
use proptest::prelude::*;

use fcan::attention::{apply_attention, attention_map, CrossLinkLayer, DEFAULT_NORM_EPS};
use fcan::autograd::Tape;
use fcan::flow::{compensate, decode_gray, encode_gray, induced_flow, FlowField, Homography};
use fcan::metrics::{average_precision, fg_ratio};
use fcan::network::{late_fuse, predict_video, FcanModel, FusionWeights, NetworkConfig};
use fcan::train::TrainConfig;
use fcan::Tensor;

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn tiny_config(depth: usize) -> NetworkConfig {
    NetworkConfig {
        frames: 4,
        height: 8,
        width: 8,
        conv_channels: vec![2, 3],
        pools: vec![[1, 2, 2], [2, 2, 2]],
        fc_hidden: 5,
        num_classes: 3,
        crosslink_depth: depth,
        seed: 9,
        ..NetworkConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_strictly_inside_unit_interval(
        x in tensor(&[2, 3, 2, 3, 3], -50.0, 50.0),
        w in tensor(&[1, 3, 1, 1, 1], -2.0, 2.0),
    ) {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.constant(w);
        let a = attention_map(&mut tape, wv, xv, DEFAULT_NORM_EPS).unwrap();
        for &v in tape.value(a).data() {
            prop_assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn uniform_flow_halves_rgb(c in -5.0f64..5.0, x in tensor(&[1, 4, 2, 3, 3], -3.0, 3.0)) {
        let link = CrossLinkLayer::<f64>::init(4, 1).unwrap();
        let mut tape = Tape::new();
        let flow = tape.constant(Tensor::full(&[1, 4, 2, 3, 3], c));
        let rgb = tape.constant(x.clone());
        let w = tape.constant(link.w_link.clone());
        let a = attention_map(&mut tape, w, flow, link.eps).unwrap();
        prop_assert!(tape.value(a).data().iter().all(|&v| v == 0.5));
        let y = apply_attention(&mut tape, rgb, a).unwrap();
        for (&o, &i) in tape.value(y).data().iter().zip(x.data()) {
            prop_assert_eq!(o, i * 0.5);
        }
    }

    #[test]
    fn normalized_map_has_zero_mean_unit_variance(x in tensor(&[1, 1, 2, 4, 4], -10.0, 10.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.mean_var_normalize(v, 1e-12).unwrap();
        let d = tape.value(y).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flow_codec_round_trip(
        u in prop::collection::vec(-25.0f64..25.0, 12),
        v in prop::collection::vec(-25.0f64..25.0, 12),
        bound in 1.0f64..30.0,
    ) {
        let f = FlowField::new(4, 3, u, v).unwrap();
        let (gx, gy) = encode_gray(&f, bound).unwrap();
        let back = decode_gray(&gx, &gy, bound).unwrap();
        for i in 0..12 {
            let top = bound * 127.0 / 128.0;
            let (a, b) = (f.u()[i].clamp(-bound, top), f.v()[i].clamp(-bound, top));
            prop_assert!((back.u()[i] - a).abs() <= bound / 256.0 + 1e-12);
            prop_assert!((back.v()[i] - b).abs() <= bound / 256.0 + 1e-12);
        }
    }

    #[test]
    fn compensating_induced_flow_leaves_nothing(
        tx in -3.0f64..3.0, ty in -3.0f64..3.0, deg in -3.0f64..3.0, s in 0.95f64..1.05,
    ) {
        let h = Homography::translation(tx, ty)
            .compose(&Homography::rotation_about(deg.to_radians(), 8.0, 6.0)).unwrap()
            .compose(&Homography::scale_about(s, 8.0, 6.0)).unwrap();
        let flow = induced_flow(&h, 16, 12).unwrap();
        let r = compensate(&flow, &h).unwrap();
        prop_assert!(r.u().iter().chain(r.v()).all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn homography_inverse_round_trip(
        tx in -5.0f64..5.0, ty in -5.0f64..5.0, deg in -20.0f64..20.0,
        x in 0.0f64..32.0, y in 0.0f64..32.0,
    ) {
        let h = Homography::translation(tx, ty)
            .compose(&Homography::rotation_about(deg.to_radians(), 16.0, 16.0)).unwrap();
        let (a, b) = h.apply(x, y).unwrap();
        let (x2, y2) = h.inverse().unwrap().apply(a, b).unwrap();
        prop_assert!((x - x2).abs() < 1e-9 && (y - y2).abs() < 1e-9);
    }

    #[test]
    fn late_fuse_is_weighted_mean(
        s in tensor(&[2, 3], -5.0, 5.0), t in tensor(&[2, 3], -5.0, 5.0),
        ws in 0.0f64..3.0, wt in 0.01f64..3.0,
    ) {
        let f = late_fuse(&s, &t, FusionWeights { spatial: ws, temporal: wt }).unwrap();
        for i in 0..6 {
            let want = (ws * s.data()[i] + wt * t.data()[i]) / (ws + wt);
            assert_relative_eq!(f.data()[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn average_precision_in_unit_interval(
        scores in prop::collection::vec(0u8..5, 1..20),
        pos in prop::collection::vec(any::<bool>(), 20),
    ) {
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let p = &pos[..s.len()];
        match average_precision(&s, p) {
            Some(ap) => prop_assert!(ap > 0.0 && ap <= 1.0),
            None => prop_assert!(p.iter().all(|&b| !b)),
        }
    }

    #[test]
    fn fg_ratio_of_constant_map_is_one(c in 0.01f64..1.0, mask in prop::collection::vec(any::<bool>(), 16)) {
        let a = vec![c; 16];
        match fg_ratio(&a, &mask) {
            Some(r) => assert_relative_eq!(r, 1.0, epsilon = 1e-12),
            None => prop_assert!(mask.iter().all(|&m| m) || mask.iter().all(|&m| !m)),
        }
    }

    #[test]
    fn lr_schedule_is_closed_form(iter in 0usize..1000) {
        let cfg = TrainConfig::default();
        let k = cfg.decay_iters.iter().filter(|&&d| d <= iter).count();
        prop_assert_eq!(cfg.lr_at(iter), 1e-4 * 0.1f64.powi(k as i32));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn video_prediction_ignores_segment_order(seed in 0u64..1000, perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let model = FcanModel::<f64>::build(&NetworkConfig { seed, ..tiny_config(1) }).unwrap();
        let segs: Vec<(Tensor<f64>, Tensor<f64>)> = (0..4)
            .map(|i| {
                (
                    Tensor::from_fn(&[3, 4, 8, 8], |j| ((j * 31 + i * 7 + seed as usize) % 17) as f64 / 17.0 - 0.5),
                    Tensor::from_fn(&[2, 4, 8, 8], |j| ((j * 13 + i * 5) % 11) as f64 / 5.0 - 1.0),
                )
            })
            .collect();
        let shuffled: Vec<_> = perm.iter().map(|&i| segs[i].clone()).collect();
        let a = predict_video(&model, &segs, FusionWeights::default()).unwrap();
        let b = predict_video(&model, &shuffled, FusionWeights::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
