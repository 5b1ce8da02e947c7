use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    encode_cached, finite, load_adam, read_resume, save_adam, store_codec, teacher_loss_weights, ResumeState, RunSpec,
    TargetCache, TrainConfig, TrainLog,
};
use crate::autograd::Graph;
use crate::dataio::PairStream;
use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::{Codec, Denoiser, DenoiserConfig};
use crate::nn::Adam;
use crate::scalar::Scalar;
use crate::schedule::Schedule;
use crate::tensor::Tensor;

const TEACHER_STREAM: u64 = 1;
pub(crate) const TEACHER_CKPT: &str = "teacher.json";

#[derive(Clone, Debug)]
pub struct TeacherOutcome {
    pub checkpoint: PathBuf,
    pub iterations: usize,
    /// Training loss of every iteration run in this call.
    pub losses: Vec<f64>,
}

#[derive(Serialize)]
struct TeacherLogLine {
    phase: &'static str,
    iteration: usize,
    loss: f64,
    mean_t: f64,
    elapsed_s: f64,
}

fn save<T: Scalar>(
    path: &Path,
    run: &RunSpec,
    s: &Schedule,
    codec: &Codec<T>,
    teacher: &Denoiser<T>,
    opt: &Adam<T>,
    iteration: usize,
    rng: &ChaCha8Rng,
    data: &PairStream<'_, T>,
) -> Result<()> {
    let mut ck = Checkpoint::new();
    store_codec(&mut ck, codec);
    ck.insert_store("teacher", teacher.store());
    let step = save_adam(&mut ck, "optim/teacher", opt);
    let state = ResumeState { cursor: data.cursor(), opt_steps: vec![step] };
    ck.write(path, run.meta(s, iteration as u64, rng, serde_json::to_value(state)?))
}

/// Train the teacher denoiser to predict clean latents from diffused ones.
///
/// Each iteration encodes a batch with the frozen codec, draws one uniform
/// timestep and fresh noise per item, and takes an Adam step on the mean
/// squared error to the clean latent (optionally weighted by `w_t`). The
/// checkpoint `teacher.json` in `run.dir` is refreshed every
/// `checkpoint_every` iterations and at the end; a non-finite loss aborts
/// without touching it. With `resume`, training continues from the iteration,
/// weights, optimizer, RNG and data position stored there.
pub fn train_teacher<T: Scalar>(
    cfg: &TrainConfig,
    s: &Schedule,
    codec: &Codec<T>,
    teacher: &mut Denoiser<T>,
    data: &mut PairStream<'_, T>,
    run: &RunSpec,
    resume: Option<&Path>,
) -> Result<TeacherOutcome> {
    cfg.validate()?;
    if !codec.is_frozen() {
        return Err(Error::Config("the codec must be pretrained and frozen before teacher training".into()));
    }
    let weights = if cfg.weighted_teacher_loss { Some(teacher_loss_weights(s)?) } else { None };
    let path = run.dir.join(TEACHER_CKPT);
    let mut opt = Adam::new(teacher.store(), cfg.lr_teacher);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TEACHER_STREAM);
    let mut start_iter = 0;
    if let Some(p) = resume {
        let (ck, state, r) = read_resume::<T>(p)?;
        ck.load_store("teacher", teacher.store_mut())?;
        load_adam(&ck, "optim/teacher", &mut opt, state.opt_steps.first().copied().unwrap_or(0))?;
        data.seek(state.cursor);
        rng = r;
        start_iter = ck.manifest.iteration as usize;
    }
    let mut log = TrainLog::open(&run.dir.join("teacher_log.jsonl"))?;
    let mut cache = TargetCache::new();
    let clock = Instant::now();
    let mut losses = Vec::new();
    let t_lo = if weights.is_some() { 2 } else { 1 };
    for it in start_iter..cfg.teacher_iterations {
        let b = data.next_batch()?;
        let z0 = encode_cached(codec, &b.hr, &mut cache)?;
        let zy = encode_cached(codec, &b.lr_up, &mut cache)?;
        let n = z0.batch();
        let ts: Vec<usize> = (0..n).map(|_| rng.random_range(t_lo..=s.steps())).collect();
        let noise = Tensor::randn(z0.shape(), &mut rng);
        let x_t = s.forward_diffuse_each(&z0, &zy, &ts, &noise)?;

        let g = Graph::new();
        let pred = teacher.forward(&g, g.input(x_t), g.input(zy), &ts)?;
        let target = g.input(z0.clone());
        let loss = match &weights {
            None => pred.mse(target)?,
            Some(w) => {
                let per = z0.len() / n;
                let wt = Tensor::from_fn(z0.shape(), |k| T::lit(w[ts[k / per] - 2]));
                pred.sub(target)?.square().mul(g.input(wt))?.mean()
            }
        };
        let lv = finite("teacher_mse", loss.item().as_f64())?;
        let grads = g.backward(loss).for_store(teacher.store());
        drop(g);
        opt.step(teacher.store_mut(), &grads)?;
        losses.push(lv);

        let done = it + 1;
        if cfg.log_every > 0 && done % cfg.log_every == 0 {
            log.write(&TeacherLogLine {
                phase: "teacher",
                iteration: done,
                loss: lv,
                mean_t: ts.iter().sum::<usize>() as f64 / n as f64,
                elapsed_s: clock.elapsed().as_secs_f64(),
            })?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.teacher_iterations {
            save(&path, run, s, codec, teacher, &opt, done, &rng, data)?;
        }
    }
    save(&path, run, s, codec, teacher, &opt, cfg.teacher_iterations.max(start_iter), &rng, data)?;
    Ok(TeacherOutcome { checkpoint: path, iterations: cfg.teacher_iterations, losses })
}

/// Load teacher weights saved by [`train_teacher`]. A missing file is a
/// configuration error.
pub fn load_teacher<T: Scalar>(path: &Path, cfg: &DenoiserConfig) -> Result<Denoiser<T>> {
    if !path.is_file() {
        return Err(Error::Config(format!("teacher checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::<T>::read(path)?;
    if !ck.has_prefix("teacher") {
        return Err(Error::Config(format!("{} holds no teacher weights", path.display())));
    }
    let mut d = Denoiser::new(cfg);
    ck.load_store("teacher", d.store_mut())?;
    Ok(d)
}
