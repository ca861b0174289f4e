use super::*;
use crate::datagen::{toy_catalog, write_shards, read_shards};
use crate::fusion::FusionWeights;
use crate::nn::Grads;
use crate::suppressor::{init_model, SuppressorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn wave(v: Vec<f32>) -> Waveform {
    Waveform::new(v, MODEL_RATE).unwrap()
}

fn small() -> SuppressorModel<f32> {
    let cfg = SuppressorConfig { channels: vec![2, 2, 4, 4], lstm_hidden: 4, ..SuppressorConfig::default() };
    init_model(&cfg, 3).unwrap()
}

fn quick_cfg(steps: u64) -> TrainConfig {
    TrainConfig { steps, batch: 2, crop_secs: 0.25, epoch_steps: 4, embed_recordings: 1, val_examples: 0, checkpoint_every: 0, ..TrainConfig::default() }
}

#[test]
fn perfect_estimate_hits_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r: Vec<f32> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
    assert_eq!(neg_si_snr_loss(&wave(r.clone()), &wave(r.clone())).unwrap(), -60.0);
    let doubled: Vec<f32> = r.iter().map(|x| 2.0 * x).collect();
    assert_eq!(neg_si_snr_loss(&wave(doubled), &wave(r)).unwrap(), -60.0);
}

#[test]
fn loss_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r: Vec<f32> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f32> = r.iter().map(|v| v + rng.gen_range(-0.7..0.7)).collect();
    let base = neg_si_snr_loss(&wave(x.clone()), &wave(r.clone())).unwrap();
    for a in [0.01f32, 0.5, 3.0, 250.0] {
        let s = neg_si_snr_loss(&wave(x.iter().map(|v| v * a).collect()), &wave(r.clone())).unwrap();
        assert!((s - base).abs() <= 1e-4, "a={a}: {s} vs {base}");
    }
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = r.iter().map(|v| 0.8 * v + rng.gen_range(-0.5..0.5)).collect();
    let mut g = vec![0.0; 100];
    neg_si_snr_loss_with_grad(&x, &r, Some(&mut g)).unwrap();
    let h = 1e-6;
    for i in 0..100 {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[i] += h;
        m[i] -= h;
        let num = (neg_si_snr_loss_with_grad(&p, &r, None).unwrap() - neg_si_snr_loss_with_grad(&m, &r, None).unwrap()) / (2.0 * h);
        assert!((num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-8) <= 1e-3, "{i}: {num} vs {}", g[i]);
    }
}

#[test]
fn silent_reference_is_a_degenerate_loss() {
    let r = wave(vec![0.0; 64]);
    let x = wave(vec![0.1; 64]);
    assert!(matches!(neg_si_snr_loss(&x, &r), Err(Error::DegenerateLoss(_))));
}

/// Loss through fusion, network and SI-SNR, differentiated with respect to
/// every parameter tensor including the fusion weights.
#[test]
fn end_to_end_gradient_with_fusion() {
    let cfg = SuppressorConfig::tiny();
    let model = init_model::<f64>(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mix: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let res: Vec<f64> = mix.iter().map(|v| 0.6 * v + rng.gen_range(-0.3..0.3)).collect();
    let embs: Vec<Vec<f64>> = (0..2).map(|_| (0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let loss = |m: &SuppressorModel<f64>| -> f64 {
        let fw = FusionWeights::from_params(&m.params).unwrap();
        let mut cache = FusionCache::default();
        let mut fused = Vec::new();
        fuse_forward(&embs, &fw, &mut cache, &mut fused).unwrap();
        let mut ws = Workspace::new(&cfg).unwrap();
        m.run(&mut ws, &mix, MODEL_RATE, &fused, None).unwrap();
        neg_si_snr_loss_with_grad(&ws.output, &res, None).unwrap()
    };
    let fw = FusionWeights::from_params(&model.params).unwrap();
    let mut cache = FusionCache::default();
    let mut fused = Vec::new();
    fuse_forward(&embs, &fw, &mut cache, &mut fused).unwrap();
    let mut ws = Workspace::new(&cfg).unwrap();
    model.run(&mut ws, &mix, MODEL_RATE, &fused, None).unwrap();
    let mut go = vec![0.0; ws.output.len()];
    neg_si_snr_loss_with_grad(&ws.output, &res, Some(&mut go)).unwrap();
    let mut grads: Grads<f64> = model.params.zero_grads();
    let mut ge = Vec::new();
    model.backward(&mut ws, &fused, &go, &mut grads, &mut ge).unwrap();
    let (mut w1, mut b1, mut w2, mut b2) = (grads.take(W1), grads.take(B1), grads.take(W2), grads.take(B2));
    fuse_backward(&embs, &fw, &cache, &ge, FusionGrads { w1: &mut w1, b1: &mut b1, w2: &mut w2, b2: &mut b2 }, None);
    grads.put(W1, w1);
    grads.put(B1, b1);
    grads.put(W2, w2);
    grads.put(B2, b2);

    let eps = 1e-6;
    let mut checked = 0;
    for (name, t) in model.params.iter() {
        let g = grads.get(name).unwrap();
        let stride = (t.numel() / 3).max(1);
        for i in (0..t.numel()).step_by(stride) {
            let (mut p, mut m) = (model.clone(), model.clone());
            p.params.get_mut(name).unwrap().data[i] += eps;
            m.params.get_mut(name).unwrap().data[i] -= eps;
            let num = (loss(&p) - loss(&m)) / (2.0 * eps);
            let denom = num.abs().max(g[i].abs()).max(1e-6);
            assert!((num - g[i]).abs() / denom <= 1e-2, "{name}[{i}]: numeric {num} analytic {}", g[i]);
            checked += 1;
        }
    }
    assert!(checked > 60, "{checked}");
}

#[test]
fn zero_steps_leave_the_model_unchanged() {
    let cat = toy_catalog(&["tone", "hum", "hiss"], 1, 4.0, 1).unwrap();
    let m = small();
    let out = train(m.clone(), &cat, &quick_cfg(0)).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.model.param_hash(), m.param_hash());
}

#[test]
fn ten_steps_are_bit_reproducible() {
    let cat = toy_catalog(&["tone", "hum", "hiss", "chirp"], 2, 4.0, 2).unwrap();
    let cfg = quick_cfg(10);
    let a = train(small(), &cat, &cfg).unwrap();
    let b = train(small(), &cat, &cfg).unwrap();
    assert_eq!(a.log.len(), 10);
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.param_hash(), b.model.param_hash());
    assert_ne!(a.model.param_hash(), small().param_hash());
    assert!(a.log.iter().all(|r| r.loss.is_finite() && r.grad_norm.is_finite()));
    assert!(a.log_text().lines().next().unwrap().starts_with("step=0 loss="));
}

#[test]
fn conditioning_changes_the_output_after_training() {
    let cat = toy_catalog(&["tone", "hum", "hiss"], 1, 4.0, 3).unwrap();
    let out = train(small(), &cat, &quick_cfg(3)).unwrap();
    let fw = out.model.fusion().unwrap();
    let mix = cat.clips[0][0].as_ref().clone();
    let ya = out.model.suppress(&mix, &crate::fusion::fuse_embeddings(&[out.store.embedding("tone").unwrap().as_slice()], &fw).unwrap()).unwrap();
    let yb = out.model.suppress(&mix, &crate::fusion::fuse_embeddings(&[out.store.embedding("hiss").unwrap().as_slice()], &fw).unwrap()).unwrap();
    assert_ne!(ya, yb);
}

#[test]
fn shards_source_and_outputs_on_disk() {
    let cat = toy_catalog(&["tone", "hum", "hiss"], 1, 4.0, 4).unwrap();
    let exs: Vec<_> = (0..2).map(|i| crate::datagen::make_example(&cat, &mut example_rng(9, i)).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    write_shards(dir.path().join("shards"), &exs).unwrap();
    let shards = read_shards(dir.path().join("shards")).unwrap();
    let cfg = TrainConfig {
        data: DataSource::Shards(shards),
        out_dir: Some(dir.path().join("run")),
        checkpoint_every: 1,
        val_examples: 1,
        val_conditions: vec![1, 2],
        ..quick_cfg(2)
    };
    let out = train(small(), &cat, &cfg).unwrap();
    let run = dir.path().join("run");
    assert!(run.join("step_000001.ckpt").exists());
    let reloaded = SuppressorModel::<f32>::load(run.join("model.ckpt")).unwrap();
    assert_eq!(reloaded.param_hash(), out.model.param_hash());
    assert_eq!(std::fs::read_to_string(run.join("train.log")).unwrap().lines().count(), 2);
    let base = out.baseline.as_ref().unwrap();
    assert_eq!(base.row(1).unwrap().count, 1);
    assert_eq!(out.final_validation().unwrap().row(2).unwrap().count, 1);
}

#[test]
fn config_overrides_and_validation() {
    let mut c = TrainConfig::default();
    c.set("steps", "12").unwrap();
    c.set("val_conditions", "1,3").unwrap();
    assert_eq!((c.steps, c.val_conditions.clone()), (12, vec![1, 3]));
    assert!(c.set("steps", "many").is_err());
    assert!(c.set("colour", "blue").is_err());
    c.batch = 0;
    assert!(c.validate().is_err());
}
