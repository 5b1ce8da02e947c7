use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    encode_cached, finite, load_adam, read_resume, save_adam, store_codec, ResumeState, RunSpec, TargetCache,
    TrainConfig, TrainLog,
};
use crate::autograd::Graph;
use crate::dataio::{PairBatch, PairStream};
use crate::error::{Error, Result};
use crate::losses::{graph as lg, total_student_loss, LossParts, LossReport};
use crate::models::checkpoint::Checkpoint;
use crate::models::{Codec, Denoiser, DenoiserConfig, DiscriminatorConfig, Embed, Embedder, PatchDiscriminator};
use crate::nn::Adam;
use crate::sampler::teacher_target;
use crate::scalar::Scalar;
use crate::schedule::Schedule;
use crate::tensor::{ImageBatch, LatentBatch, Tensor};

const DISTILL_STREAM: u64 = 2;
pub(crate) const STUDENT_CKPT: &str = "student.json";

/// Everything one distillation step consumes, prepared without gradients.
#[derive(Clone, Debug)]
pub struct StepInputs<T> {
    pub hr: ImageBatch<T>,
    /// Encoded HR, the discriminator's real sample.
    pub z0: LatentBatch<T>,
    pub zy: LatentBatch<T>,
    /// Shared initial state `z_y + kappa sqrt(eta_T) noise`.
    pub z_t: LatentBatch<T>,
    pub z_tch: LatentBatch<T>,
    pub v_gt: Tensor<T>,
}

/// Student loss terms and gradients for one batch.
pub struct StudentPass<T> {
    pub parts: LossParts,
    pub grads: Vec<Option<Tensor<T>>>,
    pub z_stu: LatentBatch<T>,
}

/// State of a distillation run: student and discriminator with their
/// optimizers, the sampling RNG and the no-gradient caches.
pub struct Distiller<T: Scalar> {
    cfg: TrainConfig,
    pub student: Denoiser<T>,
    pub disc: PatchDiscriminator<T>,
    opt_student: Adam<T>,
    opt_disc: Adam<T>,
    rng: ChaCha8Rng,
    latents: TargetCache<T>,
    targets: TargetCache<T>,
    embeddings: TargetCache<T>,
    iteration: usize,
    initial_checksum: String,
}

#[derive(Serialize)]
struct DistillLogLine {
    phase: &'static str,
    iteration: usize,
    #[serde(flatten)]
    losses: LossReport,
    target_cache_hits: u64,
    elapsed_s: f64,
}

fn hash_seed(hash: &str) -> u64 {
    u64::from_str_radix(&hash[..16], 16).unwrap_or(0)
}

impl<T: Scalar> Distiller<T> {
    /// Student initialized as an exact copy of `teacher`.
    pub fn new(cfg: &TrainConfig, teacher: &Denoiser<T>, disc_cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        if disc_cfg.latent_channels != teacher.config().latent_channels {
            return Err(Error::Config(format!(
                "discriminator expects {} latent channels, teacher has {}",
                disc_cfg.latent_channels,
                teacher.config().latent_channels
            )));
        }
        let mut student = teacher.clone();
        student.store_mut().set_frozen(false);
        let initial_checksum = student.store().checksum();
        if initial_checksum != teacher.store().checksum() {
            return Err(Error::Config("student does not match the teacher at initialization".into()));
        }
        let disc = PatchDiscriminator::new(disc_cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(DISTILL_STREAM);
        Ok(Self {
            opt_student: Adam::new(student.store(), cfg.lr_student),
            opt_disc: Adam::new(disc.store(), cfg.lr_discriminator),
            cfg: cfg.clone(),
            student,
            disc,
            rng,
            latents: TargetCache::new(),
            targets: TargetCache::new(),
            embeddings: TargetCache::new(),
            iteration: 0,
            initial_checksum,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Student parameter checksum taken right after copying the teacher.
    pub fn initial_checksum(&self) -> &str {
        &self.initial_checksum
    }

    pub fn target_cache_hits(&self) -> u64 {
        self.targets.hits
    }

    /// Encode the pair, draw the shared initial noise and obtain the teacher
    /// target, all without gradients.
    pub fn prepare(
        &mut self,
        s: &Schedule,
        codec: &Codec<T>,
        teacher: &Denoiser<T>,
        embedder: &Embedder<T>,
        b: &PairBatch<T>,
    ) -> Result<StepInputs<T>> {
        let z0 = encode_cached(codec, &b.hr, &mut self.latents)?;
        let zy = encode_cached(codec, &b.lr_up, &mut self.latents)?;
        let n = zy.batch();
        let pool = self.cfg.noise_pool as u64;
        let mut noises = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        for i in 0..n {
            let zi = zy.item_at(i);
            if pool == 0 {
                noises.push(Tensor::randn(zi.shape(), &mut self.rng));
                keys.push(None);
            } else {
                // the k-th pooled draw of a pair is a pure function of the pair
                let k = self.rng.random_range(0..pool);
                let h = b.lr_up.item_at(i).content_hash();
                let mut r = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ hash_seed(&h));
                r.set_stream(k + 1);
                noises.push(Tensor::randn(zi.shape(), &mut r));
                keys.push(Some((h, k)));
            }
        }
        let z_t = s.init_state(&zy, &Tensor::cat(&noises)?)?;

        let mut targets: Vec<Option<Tensor<T>>> = vec![None; n];
        if self.cfg.cache_teacher_targets {
            for (i, key) in keys.iter().enumerate() {
                if let Some((h, k)) = key {
                    targets[i] = self.targets.get(h, *k);
                }
            }
        }
        let miss: Vec<usize> = (0..n).filter(|&i| targets[i].is_none()).collect();
        if !miss.is_empty() {
            let zt_m = Tensor::cat(&miss.iter().map(|&i| z_t.item_at(i)).collect::<Vec<_>>())?;
            let zy_m = Tensor::cat(&miss.iter().map(|&i| zy.item_at(i)).collect::<Vec<_>>())?;
            let out = teacher_target(teacher, &zt_m, &zy_m, s, self.cfg.teacher_target)?;
            for (j, &i) in miss.iter().enumerate() {
                let t = out.item_at(j);
                if let (true, Some((h, k))) = (self.cfg.cache_teacher_targets, &keys[i]) {
                    self.targets.insert(h, *k, t.clone());
                }
                targets[i] = Some(t);
            }
        }
        let z_tch = Tensor::cat(&targets.into_iter().flatten().collect::<Vec<_>>())?;

        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let item = b.hr.item_at(i);
            let h = item.content_hash();
            let e = match self.embeddings.get(&h, 0) {
                Some(e) => e,
                None => {
                    let e = embedder.embed(&item)?;
                    self.embeddings.insert(&h, 0, e.clone());
                    e
                }
            };
            v.push(e);
        }
        Ok(StepInputs { hr: b.hr.clone(), z0, zy, z_t, z_tch, v_gt: Tensor::cat(&v)? })
    }

    /// Student forward and backward. Terms whose weight is zero are computed
    /// for the log without entering the graph, so they contribute nothing to
    /// the student gradient.
    pub fn student_pass(
        &self,
        s: &Schedule,
        codec: &Codec<T>,
        embedder: &Embedder<T>,
        x: &StepInputs<T>,
    ) -> Result<StudentPass<T>> {
        let w = self.cfg.weights;
        let g = Graph::new();
        let ng = Graph::no_grad();
        let ts = vec![s.steps(); x.zy.batch()];
        let z_stu = self.student.forward(&g, g.input(x.z_t.clone()), g.input(x.zy.clone()), &ts)?;
        let z_tch = g.input(x.z_tch.clone());
        let l_distill = lg::distill(z_tch, z_stu)?;
        let mut total = l_distill;
        let mut parts = LossParts { distill: l_distill.item().as_f64(), ..Default::default() };

        if w.lambda_hfp > 0.0 {
            let l = lg::hfp(z_tch, z_stu)?;
            parts.hfp = l.item().as_f64();
            total = total.add(l.scale(T::lit(w.lambda_hfp)))?;
        } else {
            parts.hfp = crate::losses::hfp_loss(&x.z_tch, &z_stu.value())?.as_f64();
        }

        let sd_graph = if w.lambda_sd > 0.0 { &g } else { &ng };
        let z_in = if w.lambda_sd > 0.0 { z_stu } else { sd_graph.input(z_stu.value()) };
        let x_sr = codec.decode_var(sd_graph, z_in)?;
        let l_sd = lg::semantic(sd_graph.input(x.v_gt.clone()), embedder.embed_var(sd_graph, x_sr)?)?;
        parts.sd = l_sd.item().as_f64();
        if w.lambda_sd > 0.0 {
            total = total.add(l_sd.scale(T::lit(w.lambda_sd)))?;
        }

        let adv_graph = if w.lambda_adv > 0.0 { &g } else { &ng };
        let z_in = if w.lambda_adv > 0.0 { z_stu } else { adv_graph.input(z_stu.value()) };
        let l_adv = lg::gen_adv(self.disc.forward(adv_graph, z_in)?);
        parts.adv_gen = l_adv.item().as_f64();
        if w.lambda_adv > 0.0 {
            total = total.add(l_adv.scale(T::lit(w.lambda_adv)))?;
        }

        let report = total_student_loss(parts, &w)?;
        finite("total", report.total)?;
        let z_stu_value = z_stu.value();
        let grads = g.backward(total).for_store(self.student.store());
        Ok(StudentPass { parts, grads, z_stu: z_stu_value })
    }

    /// One iteration: student update against the current discriminator, then
    /// a hinge-loss discriminator update on the encoded HR and the detached
    /// student output.
    pub fn step(
        &mut self,
        s: &Schedule,
        codec: &Codec<T>,
        teacher: &Denoiser<T>,
        embedder: &Embedder<T>,
        b: &PairBatch<T>,
    ) -> Result<LossReport> {
        let x = self.prepare(s, codec, teacher, embedder, b)?;
        let pass = self.student_pass(s, codec, embedder, &x)?;
        let mut report = total_student_loss(pass.parts, &self.cfg.weights)?;
        self.opt_student.step(self.student.store_mut(), &pass.grads)?;

        let g = Graph::new();
        let real = self.disc.forward(&g, g.input(x.z0))?;
        let fake = self.disc.forward(&g, g.input(pass.z_stu))?;
        let l = lg::disc(real, fake)?;
        report.disc = Some(finite("disc", l.item().as_f64())?);
        let grads = g.backward(l).for_store(self.disc.store());
        drop(g);
        self.opt_disc.step(self.disc.store_mut(), &grads)?;
        self.iteration += 1;
        Ok(report)
    }

    pub fn save(&self, path: &Path, run: &RunSpec, s: &Schedule, codec: &Codec<T>, data: &PairStream<'_, T>) -> Result<()> {
        let mut ck = Checkpoint::new();
        store_codec(&mut ck, codec);
        ck.insert_store("student", self.student.store());
        ck.insert_store("disc", self.disc.store());
        let a = save_adam(&mut ck, "optim/student", &self.opt_student);
        let d = save_adam(&mut ck, "optim/disc", &self.opt_disc);
        let state = ResumeState { cursor: data.cursor(), opt_steps: vec![a, d] };
        let mut meta = run.meta(s, self.iteration as u64, &self.rng, serde_json::to_value(state)?);
        if let serde_json::Value::Object(m) = &mut meta.state {
            m.insert("initial_checksum".into(), self.initial_checksum.clone().into());
        }
        ck.write(path, meta)
    }

    /// Restore weights, optimizers, RNG and data position from a checkpoint
    /// written by [`Distiller::save`]. Caches restart empty; they only hold
    /// values that are recomputed identically.
    pub fn resume(&mut self, path: &Path, data: &mut PairStream<'_, T>) -> Result<()> {
        let (ck, state, rng) = read_resume::<T>(path)?;
        ck.load_store("student", self.student.store_mut())?;
        ck.load_store("disc", self.disc.store_mut())?;
        let step = |i: usize| state.opt_steps.get(i).copied().unwrap_or(0);
        load_adam(&ck, "optim/student", &mut self.opt_student, step(0))?;
        load_adam(&ck, "optim/disc", &mut self.opt_disc, step(1))?;
        data.seek(state.cursor);
        self.rng = rng;
        self.iteration = ck.manifest.iteration as usize;
        Ok(())
    }
}

pub struct DistillOutcome<T: Scalar> {
    pub checkpoint: PathBuf,
    pub student: Denoiser<T>,
    pub disc: PatchDiscriminator<T>,
    pub history: Vec<LossReport>,
    pub initial_checksum: String,
}

/// Distill `teacher` into a one-step student for `cfg.iterations`
/// iterations, writing `student.json` and `distill_log.jsonl` to `run.dir`.
#[allow(clippy::too_many_arguments)]
pub fn distill<T: Scalar>(
    cfg: &TrainConfig,
    s: &Schedule,
    codec: &Codec<T>,
    teacher: &Denoiser<T>,
    embedder: &Embedder<T>,
    disc_cfg: &DiscriminatorConfig,
    data: &mut PairStream<'_, T>,
    run: &RunSpec,
    resume: Option<&Path>,
) -> Result<DistillOutcome<T>> {
    if !codec.is_frozen() {
        return Err(Error::Config("the codec must be frozen before distillation".into()));
    }
    let mut d = Distiller::new(cfg, teacher, disc_cfg)?;
    if let Some(p) = resume {
        d.resume(p, data)?;
    }
    let path = run.dir.join(STUDENT_CKPT);
    let mut log = TrainLog::open(&run.dir.join("distill_log.jsonl"))?;
    let clock = Instant::now();
    let mut history = Vec::new();
    while d.iteration() < cfg.iterations {
        let b = data.next_batch()?;
        let r = d.step(s, codec, teacher, embedder, &b)?;
        history.push(r);
        let done = d.iteration();
        if cfg.log_every > 0 && done % cfg.log_every == 0 {
            log.write(&DistillLogLine {
                phase: "distill",
                iteration: done,
                losses: r,
                target_cache_hits: d.target_cache_hits(),
                elapsed_s: clock.elapsed().as_secs_f64(),
            })?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
            d.save(&path, run, s, codec, data)?;
        }
    }
    d.save(&path, run, s, codec, data)?;
    Ok(DistillOutcome {
        checkpoint: path,
        initial_checksum: d.initial_checksum.clone(),
        student: d.student,
        disc: d.disc,
        history,
    })
}

/// Load the student weights saved by [`distill`].
pub fn load_student<T: Scalar>(path: &Path, cfg: &DenoiserConfig) -> Result<Denoiser<T>> {
    if !path.is_file() {
        return Err(Error::Config(format!("student checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::<T>::read(path)?;
    let mut d = Denoiser::new(cfg);
    ck.load_store("student", d.store_mut())?;
    Ok(d)
}
