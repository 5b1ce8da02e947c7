use onestep::dataio::{synth_image, DataConfig, PairDataset};
use onestep::evalkit::psnr;
use onestep::losses::LossWeights;
use onestep::models::{Codec, CodecConfig, Denoise, Denoiser, DenoiserConfig, DiscriminatorConfig, Embedder, EmbedderConfig};
use onestep::trainer::{
    distill, load_student, load_teacher, pretrain_codec, train_teacher, CodecTrainConfig, Distiller, RunSpec,
    ScheduleConfig, TrainConfig, TrainLog,
};
use onestep::{Error, Schedule, Tensor};

const PATCH: usize = 32;

fn dataset(n: usize, size: usize) -> PairDataset<f32> {
    let imgs: Vec<Tensor<f32>> = (0..n).map(|i| synth_image(size, 500 + i as u64)).collect();
    PairDataset::from_images(imgs, vec![Default::default(); n]).unwrap()
}

fn data_cfg() -> DataConfig {
    DataConfig { patch: PATCH, ..Default::default() }
}

fn pixel_codec() -> Codec<f32> {
    let mut c = Codec::identity(3);
    c.freeze();
    c
}

fn small_denoiser() -> DenoiserConfig {
    DenoiserConfig { latent_channels: 3, base_channels: 8, time_features: 8, seed: 3 }
}

fn small_disc(seed: u64) -> DiscriminatorConfig {
    DiscriminatorConfig { latent_channels: 3, base_channels: 8, seed, ..Default::default() }
}

fn schedule() -> Schedule {
    ScheduleConfig::default().build().unwrap()
}

fn train_cfg(teacher_iterations: usize, iterations: usize) -> TrainConfig {
    TrainConfig {
        teacher_iterations,
        iterations,
        batch_size: 2,
        lr_teacher: 1e-3,
        lr_student: 1e-4,
        checkpoint_every: 0,
        log_every: 1,
        seed: 5,
        ..Default::default()
    }
}

fn run(dir: &std::path::Path) -> RunSpec {
    RunSpec::new(dir, serde_json::json!({ "test": true }))
}

fn trained_teacher(dir: &std::path::Path, iters: usize) -> Denoiser<f32> {
    let ds = dataset(4, PATCH);
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let mut t = Denoiser::new(&small_denoiser());
    train_teacher(&train_cfg(iters, 1), &schedule(), &pixel_codec(), &mut t, &mut st, &run(dir), None).unwrap();
    t
}

#[test]
fn first_teacher_loss_is_finite_and_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(2, PATCH);
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let mut t = Denoiser::new(&small_denoiser());
    let out = train_teacher(&train_cfg(1, 1), &schedule(), &pixel_codec(), &mut t, &mut st, &run(tmp.path()), None)
        .unwrap();
    assert_eq!(out.losses.len(), 1);
    assert!(out.losses[0].is_finite() && out.losses[0] > 0.0, "{:?}", out.losses);
    assert!(out.checkpoint.is_file());
    assert!(tmp.path().join("teacher_log.jsonl").is_file());
}

#[test]
fn teacher_overfits_a_single_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(1, PATCH);
    let mut st = ds.stream(&data_cfg(), 1, 1).unwrap();
    let mut t = Denoiser::new(&small_denoiser());
    let cfg = TrainConfig { batch_size: 1, lr_teacher: 2e-3, log_every: 0, ..train_cfg(500, 1) };
    let out = train_teacher(&cfg, &schedule(), &pixel_codec(), &mut t, &mut st, &run(tmp.path()), None).unwrap();
    let tail = &out.losses[out.losses.len() - 50..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let first = out.losses[..10].iter().sum::<f64>() / 10.0;
    assert!(mean < 1e-2, "final loss {mean:.4e} (initial {first:.4e})");
    assert!(mean < first);
}

#[test]
fn weighted_teacher_loss_changes_training() {
    let ds = dataset(2, PATCH);
    let mut losses = Vec::new();
    for weighted in [false, true] {
        let tmp = tempfile::tempdir().unwrap();
        let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
        let mut t = Denoiser::new(&small_denoiser());
        let cfg = TrainConfig { weighted_teacher_loss: weighted, ..train_cfg(3, 1) };
        let out = train_teacher(&cfg, &schedule(), &pixel_codec(), &mut t, &mut st, &run(tmp.path()), None).unwrap();
        assert!(out.losses.iter().all(|l| l.is_finite()));
        losses.push(out.losses);
    }
    assert_ne!(losses[0], losses[1]);
}

#[test]
fn non_finite_loss_aborts_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(2, PATCH);
    let s = schedule();
    let mut t = Denoiser::new(&small_denoiser());
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let out = train_teacher(&train_cfg(2, 1), &s, &pixel_codec(), &mut t, &mut st, &run(tmp.path()), None).unwrap();
    let before = std::fs::read(&out.checkpoint).unwrap();
    let blob_before = std::fs::read(out.checkpoint.with_extension("bin")).unwrap();

    let cfg = TrainConfig { lr_teacher: 1e30, ..train_cfg(50, 1) };
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let err = train_teacher(&cfg, &s, &pixel_codec(), &mut t, &mut st, &run(tmp.path()), None).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert_eq!(std::fs::read(&out.checkpoint).unwrap(), before);
    assert_eq!(std::fs::read(out.checkpoint.with_extension("bin")).unwrap(), blob_before);
}

#[test]
fn teacher_timestep_conditioning_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = Denoiser::<f32>::new(&small_denoiser());
    let t = trained_teacher(tmp.path(), 1);
    let changed: Vec<&str> = fresh
        .store()
        .iter()
        .zip(t.store().iter())
        .filter(|((_, a), (_, b))| a != b)
        .map(|((n, _), _)| n)
        .collect();
    assert!(changed.iter().any(|n| n.starts_with("temb.")), "{changed:?}");
    assert!(changed.iter().any(|n| n.contains(".temb")), "{changed:?}");
}

#[test]
fn teacher_resume_matches_uninterrupted_run() {
    let ds = dataset(4, PATCH);
    let s = schedule();
    let a = tempfile::tempdir().unwrap();
    let mut full = Denoiser::new(&small_denoiser());
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    train_teacher(&train_cfg(4, 1), &s, &pixel_codec(), &mut full, &mut st, &run(a.path()), None).unwrap();

    let b = tempfile::tempdir().unwrap();
    let mut part = Denoiser::new(&small_denoiser());
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let first = train_teacher(&train_cfg(2, 1), &s, &pixel_codec(), &mut part, &mut st, &run(b.path()), None).unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut resumed = Denoiser::new(&small_denoiser());
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    train_teacher(&train_cfg(4, 1), &s, &pixel_codec(), &mut resumed, &mut st, &run(c.path()), Some(&first.checkpoint))
        .unwrap();
    assert_eq!(resumed.store().checksum(), full.store().checksum());
    let loaded = load_teacher::<f32>(&c.path().join("teacher.json"), &small_denoiser()).unwrap();
    assert_eq!(loaded.store().checksum(), full.store().checksum());
}

fn embedder() -> Embedder<f32> {
    Embedder::new(&EmbedderConfig::default())
}

#[test]
fn student_starts_as_teacher_copy() {
    let tmp = tempfile::tempdir().unwrap();
    let t = trained_teacher(tmp.path(), 2);
    let d = Distiller::new(&train_cfg(2, 2), &t, &small_disc(1)).unwrap();
    assert_eq!(d.student.store().checksum(), t.store().checksum());
    assert_eq!(d.initial_checksum(), t.store().checksum());
    assert!(!d.student.store().is_frozen());
}

#[test]
fn student_gradient_ignores_discriminator_when_adv_weight_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let t = trained_teacher(tmp.path(), 2);
    let s = schedule();
    let codec = pixel_codec();
    let emb = embedder();
    let ds = dataset(2, PATCH);
    let batch = ds.stream(&data_cfg(), 2, 1).unwrap().next_batch().unwrap();
    let grads = |adv: f64, disc_seed: u64| {
        let cfg = TrainConfig { weights: LossWeights { lambda_adv: adv, ..Default::default() }, ..train_cfg(1, 1) };
        let mut d = Distiller::new(&cfg, &t, &small_disc(disc_seed)).unwrap();
        let x = d.prepare(&s, &codec, &t, &emb, &batch).unwrap();
        d.student_pass(&s, &codec, &emb, &x).unwrap()
    };
    let (a, b) = (grads(0.0, 1), grads(0.0, 2));
    assert_eq!(a.grads, b.grads);
    assert_ne!(a.parts.adv_gen, b.parts.adv_gen, "the adversarial term is still evaluated");
    let (c, e) = (grads(0.1, 1), grads(0.1, 2));
    assert_ne!(c.grads, e.grads);
}

#[test]
fn distillation_leaves_frozen_networks_untouched_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = trained_teacher(tmp.path(), 2);
    let s = schedule();
    let codec = pixel_codec();
    let emb = embedder();
    let ds = dataset(4, PATCH);
    let sums = (codec.store().checksum(), t.store().checksum(), emb.store().checksum());

    let a = tempfile::tempdir().unwrap();
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let full = distill(&train_cfg(1, 4), &s, &codec, &t, &emb, &small_disc(1), &mut st, &run(a.path()), None).unwrap();
    assert_eq!((codec.store().checksum(), t.store().checksum(), emb.store().checksum()), sums);
    assert_eq!(full.initial_checksum, sums.1);
    assert_eq!(full.history.len(), 4);
    assert!(full.history.iter().all(|r| r.total.is_finite() && r.disc.is_some()));
    assert_ne!(full.student.store().checksum(), sums.1);

    let b = tempfile::tempdir().unwrap();
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let half = distill(&train_cfg(1, 2), &s, &codec, &t, &emb, &small_disc(1), &mut st, &run(b.path()), None).unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let rest =
        distill(&train_cfg(1, 4), &s, &codec, &t, &emb, &small_disc(1), &mut st, &run(c.path()), Some(&half.checkpoint))
            .unwrap();
    assert_eq!(rest.history.len(), 2);
    assert_eq!(rest.student.store().checksum(), full.student.store().checksum());
    assert_eq!(rest.disc.store().checksum(), full.disc.store().checksum());
    let loaded = load_student::<f32>(&rest.checkpoint, &small_denoiser()).unwrap();
    assert_eq!(loaded.store().checksum(), full.student.store().checksum());
}

#[test]
fn pretrained_codec_reconstructs_held_out_images() {
    let ds = dataset(48, 64);
    let cfg = DataConfig { patch: 64, ..Default::default() };
    let mut st = ds.stream(&cfg, 16, 1).unwrap();
    let mut codec = Codec::<f32>::new(&CodecConfig::default());
    let tc = CodecTrainConfig { iterations: 150, log_every: 0, ..Default::default() };
    pretrain_codec(&mut codec, &mut st, &tc, &mut TrainLog::sink()).unwrap();
    assert!(codec.is_frozen());
    let held: Vec<Tensor<f32>> = (0..16).map(|i| synth_image(64, 9_000 + i)).collect();
    let x = Tensor::cat(&held).unwrap();
    let rec = codec.decode(&codec.encode(&x).unwrap()).unwrap();
    let p = psnr(&rec, &x).unwrap();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    assert!(mean >= 30.0, "held-out reconstruction {mean:.2} dB");
    let z = codec.encode(&x).unwrap();
    let std = (z.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    assert!((0.5..2.0).contains(&std), "latent rms {std}");
}

#[test]
fn untrained_codec_cannot_train_a_teacher() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(2, PATCH);
    let mut st = ds.stream(&data_cfg(), 2, 1).unwrap();
    let codec = Codec::<f32>::new(&CodecConfig { latent_channels: 3, ..Default::default() });
    let mut t = Denoiser::new(&small_denoiser());
    let err = train_teacher(&train_cfg(1, 1), &schedule(), &codec, &mut t, &mut st, &run(tmp.path()), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let _ = t.predict(&Tensor::zeros(&[1, 3, 8, 8]), &Tensor::zeros(&[1, 3, 8, 8]), 1).unwrap();
}
