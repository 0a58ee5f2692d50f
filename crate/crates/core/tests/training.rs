use fcan::autograd::Tape;
use fcan::network::{FcanModel, ForwardOptions, NetworkConfig};
use fcan::synth::PreparedVideo;
use fcan::train::{train, TrainConfig, TrainMode};
use fcan::Tensor;

fn tiny_config(depth: usize) -> NetworkConfig {
    NetworkConfig {
        frames: 4,
        height: 8,
        width: 8,
        conv_channels: vec![3, 4],
        pools: vec![[1, 2, 2], [2, 2, 2]],
        fc_hidden: 8,
        num_classes: 3,
        crosslink_depth: depth,
        dropout_fc: [0.0, 0.0],
        seed: 5,
        ..NetworkConfig::default()
    }
}

fn video(label: usize, frames: usize, salt: usize) -> PreparedVideo {
    let rgb = Tensor::from_fn(&[3, frames, 8, 8], |i| {
        (((i * 7 + salt * 13 + label * 29) % 23) as f32 / 23.0) - 0.5
    });
    let flow = Tensor::from_fn(&[2, frames, 8, 8], |i| {
        (((i * 11 + salt * 5 + label * 17) % 19) as f32 / 9.5) - 1.0
    });
    PreparedVideo {
        label,
        rgb,
        flow,
        masks: Vec::new(),
        low_confidence: 0,
    }
}

fn batched<T: fcan::Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(&shape).unwrap()
}

fn cfg(iters: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        lr_initial: lr,
        decay_iters: vec![],
        total_iters: iters,
        batch_size: 2,
        dropout_fc: [0.0, 0.0],
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_a_single_sample() {
    let mut model = FcanModel::<f64>::build(&tiny_config(1)).unwrap();
    let videos = [video(2, 4, 0)];
    let report = train(&mut model, &videos, &cfg(200, 0.05), None).unwrap();
    let last = report.loss_curve.last().unwrap().loss;
    assert!(last < 0.01, "final loss {last}");
    assert!(report.loss_curve[0].loss > last);
}

#[test]
fn training_is_deterministic() {
    let videos: Vec<_> = (0..3).map(|c| video(c, 6, c)).collect();
    let c = TrainConfig {
        dropout_fc: [0.5, 0.5],
        ..cfg(6, 0.01)
    };
    let run = || {
        let mut m = FcanModel::<f32>::build(&tiny_config(2)).unwrap();
        let r = train(&mut m, &videos, &c, None).unwrap();
        (m, r)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    for ((n, a), (_, b)) in m1.parameters().into_iter().zip(m2.parameters()) {
        assert_eq!(a, b, "{n}");
    }
}

#[test]
fn detached_crosslink_blocks_spatial_loss_from_temporal_stream() {
    let model = FcanModel::<f64>::build(&tiny_config(2)).unwrap();
    let v = video(1, 4, 3);
    let (rgb, flow) = (batched(&v.rgb.cast::<f64>()), batched(&v.flow.cast::<f64>()));
    for detach in [false, true] {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let r = tape.constant(rgb.clone());
        let f = tape.constant(flow.clone());
        let opts = ForwardOptions {
            detach_crosslink: detach,
            ..ForwardOptions::inference()
        };
        let out = model.forward(&mut tape, &bound, r, Some(f), opts).unwrap();
        let loss = tape.softmax_cross_entropy(out.spatial_logits, &[1]).unwrap();
        tape.backward(loss).unwrap();
        let temporal = bound.temporal.as_ref().unwrap();
        let conv_grad: f64 = temporal
            .convs
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .map(|p| tape.grad(p).data().iter().map(|g| g.abs()).sum::<f64>())
            .sum();
        let link_grad: f64 = bound.links.iter().map(|&w| tape.grad(w).data().iter().map(|g| g.abs()).sum::<f64>()).sum();
        assert!(link_grad > 0.0);
        if detach {
            assert_eq!(conv_grad, 0.0);
        } else {
            assert!(conv_grad > 0.0);
        }
    }
}

#[test]
fn depth_zero_spatial_logits_match_standalone_network() {
    let two = FcanModel::<f32>::build(&tiny_config(0)).unwrap();
    let alone = FcanModel::<f32>::build(&NetworkConfig {
        two_stream: false,
        ..tiny_config(0)
    })
    .unwrap();
    let v = video(0, 4, 1);
    let opts = ForwardOptions {
        training: true,
        detach_crosslink: false,
        dropout_seed: 77,
    };
    let mut two_cfg = two.clone();
    let mut alone_cfg = alone.clone();
    two_cfg.config.dropout_fc = [0.5, 0.5];
    alone_cfg.config.dropout_fc = [0.5, 0.5];

    let (rgb, flow) = (batched(&v.rgb), batched(&v.flow));
    let mut t1 = Tape::new();
    let b1 = two_cfg.bind(&mut t1, false);
    let (r1, f1) = (t1.constant(rgb.clone()), t1.constant(flow));
    let out = two_cfg.forward(&mut t1, &b1, r1, Some(f1), opts).unwrap();

    let mut t2 = Tape::new();
    let b2 = alone_cfg.bind(&mut t2, false);
    let r2 = t2.constant(rgb);
    let logits = alone_cfg.forward(&mut t2, &b2, r2, None, opts).unwrap().spatial_logits;

    let a: Vec<u32> = t1.value(out.spatial_logits).data().iter().map(|x| x.to_bits()).collect();
    let b: Vec<u32> = t2.value(logits).data().iter().map(|x| x.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn stagewise_training_freezes_temporal_stream_late() {
    let videos: Vec<_> = (0..3).map(|c| video(c, 4, c)).collect();
    let before = FcanModel::<f64>::build(&tiny_config(1)).unwrap();
    let run = |iters: usize| {
        let mut m = before.clone();
        let c = TrainConfig {
            mode: TrainMode::Stagewise,
            momentum: 0.0,
            ..cfg(iters, 0.01)
        };
        train(&mut m, &videos, &c, None).unwrap();
        m
    };
    // Two iterations switch stages after one; three after one as well.
    let (two, three) = (run(2), run(3));
    assert_ne!(two.temporal, before.temporal);
    assert_eq!(two.temporal, three.temporal);
    assert_ne!(two.spatial, three.spatial);
    assert_ne!(two.crosslinks, three.crosslinks);
}

#[test]
fn non_finite_loss_is_reported() {
    let mut model = FcanModel::<f32>::build(&tiny_config(1)).unwrap();
    let videos: Vec<_> = (0..3).map(|c| video(c, 4, c)).collect();
    let err = train(&mut model, &videos, &cfg(50, 1e12), None).unwrap_err();
    assert!(err.to_string().contains("non-finite at iteration"), "{err}");
}
