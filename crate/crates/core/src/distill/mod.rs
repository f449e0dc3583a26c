//! Crop pairing, ridge-regression teacher solve, the reconstruction losses,
//! and the training loop.
//!
//! Per sample: two overlapping crops of the frame; the EMA teacher encodes
//! the first and a ridge solve gives the feature→flow map; the student
//! encodes the second and is trained to reproduce the flow crop through
//! that fixed map, with focal gradient matching on top.

mod config;
mod crops;
mod loss;
mod ridge;

pub use config::{Ablation, ConfigFile, FlowSource, TrainConfig};
pub use crops::{box_iou, sample_crop_pair, CropPair, CropSpec};
pub use loss::{focal_grad_loss, focal_weight, recon_loss, total_loss, GradAxis, LossBreakdown, ReconKind, ReconLoss};
pub use ridge::{ridge_solve, LinearMap};

use crate::dataio::{
    corrupt_flow, list_sequences, load_sequence, oracle_flow, read_flo, CorruptionConfig,
    DataError, FlowField, ImageF32, VideoSample,
};
use crate::decoder::{
    adamw_step, decoder_backward, decoder_forward, ema_update, init_params, load_checkpoint,
    save_checkpoint, AdamConfig, Checkpoint, DecoderConfig, DecoderError, DecoderGrads,
    DecoderParams, EmaParams, OptimizerState,
};
use crate::encoder::{EncoderError, FeatureGrid, FrozenEncoder};
use crate::numerics::{mix_seed, Matrix, NumericsError, RngStream};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("crop size {size} does not fit a {width}x{height} frame")]
    CropTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    NonFiniteLoss { step: u64, batch_seed: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Shared linear head for the naive ablation, trained by SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveHead {
    pub map: Matrix, // feature_dim × 2
    pub lr: f32,
}

/// Everything the training loop mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: DecoderParams,
    pub teacher: EmaParams,
    pub opt: OptimizerState,
    pub naive: Option<NaiveHead>,
    pub step: u64,
}

impl TrainState {
    /// Fresh state: the teacher starts as an exact copy of the student.
    pub fn new(cfg: &TrainConfig) -> TrainState {
        let dec_cfg = DecoderConfig {
            enc_dim: cfg.enc_dim,
            hidden: cfg.hidden,
            feature_dim: cfg.feature_dim,
        };
        let student = init_params(&dec_cfg, mix_seed(cfg.seed, "decoder-init", 0));
        let teacher = EmaParams::from_student(&student, cfg.ema_momentum);
        let opt = OptimizerState::new(
            &student,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        let naive = cfg.naive.then(|| NaiveHead {
            map: Matrix::zeros(cfg.feature_dim, 2),
            lr: cfg.naive_lr,
        });
        TrainState {
            student,
            teacher,
            opt,
            naive,
            step: 0,
        }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            opt: self.opt.clone(),
            step: self.step,
            train_seed: cfg.seed,
            encoder_seed: cfg.encoder_seed,
            encoder_patch: cfg.patch,
            encoder_dim: cfg.enc_dim,
            naive_map: self.naive.as_ref().map(|h| h.map.clone()),
            config_hash: cfg.content_hash(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, cfg: &TrainConfig) -> Result<TrainState, DistillError> {
        if ckpt.config_hash != cfg.content_hash() {
            return Err(DistillError::Config(format!(
                "checkpoint config hash {} does not match the resolved config {}",
                ckpt.config_hash,
                cfg.content_hash()
            )));
        }
        Ok(TrainState {
            student: ckpt.student,
            teacher: ckpt.teacher,
            opt: ckpt.opt,
            naive: ckpt.naive_map.map(|map| NaiveHead {
                map,
                lr: cfg.naive_lr,
            }),
            step: ckpt.step,
        })
    }
}

/// One training example: a frame and its flow target towards the sampled
/// counterpart frame.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub frame: ImageF32,
    pub flow: FlowField,
}

/// One optimizer step over a batch. Returns the batch-mean loss breakdown
/// and the batch-mean parameter gradients (before the update).
pub fn train_step(
    state: &mut TrainState,
    encoder: &FrozenEncoder,
    batch: &[BatchSample],
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(LossBreakdown, DecoderGrads), DistillError> {
    assert!(!batch.is_empty(), "empty batch");
    let mut grads = DecoderGrads::zeros_like(&state.student);
    let mut naive_grad = state
        .naive
        .as_ref()
        .map(|h| vec![0.0f64; h.map.rows() * 2]);
    let (mut sum_l1, mut sum_gx, mut sum_gy) = (0.0f64, 0.0f64, 0.0f64);

    for (slot, sample) in batch.iter().enumerate() {
        let mut crop_rng = rng.child("crop", slot as u64);
        let pair = sample_crop_pair(
            &sample.frame,
            &sample.flow,
            cfg.crop_size,
            cfg.min_overlap,
            &mut crop_rng,
        )?;
        let map = if let Some(head) = &state.naive {
            LinearMap {
                a: head.map.clone(),
            }
        } else {
            let enc1 = encoder.encode(&pair.v1)?;
            let (teacher_feat, _) = decoder_forward(&state.teacher.params, &enc1, &pair.v1)?;
            ridge_solve(&teacher_feat.as_matrix(), &pair.u1.as_matrix(), cfg.gamma)?
        };

        let enc2 = encoder.encode(&pair.v2)?;
        let (student_feat, cache) = decoder_forward(&state.student, &enc2, &pair.v2)?;
        let x2 = student_feat.as_matrix();
        let u2 = pair.u2.as_matrix();

        let recon = recon_loss(&x2, &map, &u2, cfg.recon)?;
        let mut grad_x2 = recon.grad_x2;
        grad_x2.scale(cfg.lambda);
        let mut grad_pred = recon.grad_pred;
        grad_pred.scale(cfg.lambda);

        let (mut lgx, mut lgy) = (0.0f64, 0.0f64);
        if cfg.use_grad_loss {
            let pred = FlowField::from_matrix(cfg.crop_size, cfg.crop_size, &x2.matmul(&map.a));
            let (lx, gx) = focal_grad_loss(&pred, &pair.u2, cfg.sigma, GradAxis::X)?;
            let (ly, gy) = focal_grad_loss(&pred, &pair.u2, cfg.sigma, GradAxis::Y)?;
            lgx = lx;
            lgy = ly;
            let mut dpred = gx.as_matrix();
            dpred.add_assign(&gy.as_matrix());
            grad_x2.add_assign(&dpred.matmul(&map.a.transpose()));
            grad_pred.add_assign(&dpred);
        }

        let grad_grid = FeatureGrid::from_matrix(cfg.crop_size, cfg.crop_size, &grad_x2);
        let sample_grads = decoder_backward(&state.student, &cache, &grad_grid)?;
        grads.add_assign(&sample_grads);
        if let Some(acc) = naive_grad.as_mut() {
            for (i, v) in x2.mul_tn_f64(&grad_pred).into_iter().enumerate() {
                acc[i] += v;
            }
        }
        sum_l1 += recon.loss;
        sum_gx += lgx;
        sum_gy += lgy;
    }

    let inv = 1.0 / batch.len() as f32;
    grads.scale(inv);
    let breakdown = total_loss(
        (sum_l1 / batch.len() as f64) as f32,
        (sum_gx / batch.len() as f64) as f32,
        (sum_gy / batch.len() as f64) as f32,
        cfg.lambda,
    );
    if !breakdown.total.is_finite() || !grads.is_finite() {
        return Err(DistillError::NonFiniteLoss {
            step: state.step,
            batch_seed: rng.seed(),
        });
    }

    adamw_step(&mut state.student, &grads, &mut state.opt)?;
    if let Some(head) = state.naive.as_mut() {
        let acc = naive_grad.unwrap();
        let lr = head.lr;
        for (i, g) in acc.into_iter().enumerate() {
            let avg = (g / batch.len() as f64) as f32;
            head.map.data_mut()[i] -= lr * avg;
        }
    }
    ema_update(&mut state.teacher, &state.student)?;
    state.step += 1;
    Ok((breakdown, grads))
}

/// Permutation of sequence indices for one epoch.
fn epoch_order(num_seqs: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_seqs).collect();
    let mut rng = RngStream::new(mix_seed(seed, "epoch", epoch));
    rng.shuffle(&mut order);
    order
}

/// Build the flow target for one sampled pair according to the flow source.
fn flow_for_pair(
    cfg: &TrainConfig,
    sample: &VideoSample,
    seq_dir: &Path,
    t: usize,
    tp: usize,
    global_sample: u64,
) -> Result<FlowField, DistillError> {
    match cfg.flow_source {
        FlowSource::Oracle => Ok(oracle_flow(sample, t, tp)?),
        FlowSource::Corrupted => {
            let clean = oracle_flow(sample, t, tp)?;
            let ccfg = CorruptionConfig::new(
                cfg.corrupt_sigma,
                cfg.corrupt_fraction,
                cfg.corrupt_patch,
                mix_seed(cfg.seed, "corrupt", global_sample),
            )?;
            Ok(corrupt_flow(&clean, &ccfg))
        }
        FlowSource::FloDir => {
            let path = seq_dir.join(format!("flow_{t:03}_{tp:03}.flo"));
            Ok(read_flo(&path)?)
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub final_loss: Option<LossBreakdown>,
    pub checkpoint_dir: PathBuf,
}

/// Full training run over a dataset directory. Writes a CSV loss log and a
/// final checkpoint (plus periodic snapshots) under `out_dir`; reruns with
/// the same config and seed are bit-identical, and resuming from a snapshot
/// reproduces the uninterrupted run exactly.
pub fn train(
    cfg: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    flo_dir: Option<&Path>,
    resume_from: Option<&Path>,
    extra_manifest: &[(String, String)],
) -> Result<TrainOutcome, DistillError> {
    cfg.validate()?;
    let seq_dirs = list_sequences(data_dir)?;
    let mut sequences = Vec::with_capacity(seq_dirs.len());
    for dir in &seq_dirs {
        sequences.push(load_sequence(dir)?);
    }
    for s in &sequences {
        if s.num_frames() < 2 {
            return Err(DistillError::Config(
                "sequences need at least two frames".into(),
            ));
        }
    }
    let encoder = FrozenEncoder::new(cfg.encoder_seed, cfg.patch, cfg.enc_dim);
    let encoder_fingerprint = {
        let p = encoder.projection();
        (p.frobenius(), p.data()[0], p.data()[p.data().len() - 1])
    };

    let mut state = match resume_from {
        Some(path) => TrainState::from_checkpoint(load_checkpoint(path)?, cfg)?,
        None => TrainState::new(cfg),
    };

    std::fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = if resume_from.is_some() && log_path.exists() {
        std::fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| DataError::io(&log_path, e))?
    } else {
        let mut f = std::fs::File::create(&log_path).map_err(|e| DataError::io(&log_path, e))?;
        f.write_all(b"step,l1,grad_x,grad_y,total\n")
            .map_err(|e| DataError::io(&log_path, e))?;
        f
    };

    let num_seqs = sequences.len();
    let steps_per_epoch = num_seqs.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let root = RngStream::new(cfg.seed);

    let mut final_loss = None;
    while state.step < total_steps {
        let step = state.step;
        let epoch = step / steps_per_epoch;
        let pos = (step % steps_per_epoch) as usize;
        let order = epoch_order(num_seqs, cfg.seed, epoch);
        let lo = pos * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(num_seqs);
        let mut batch = Vec::with_capacity(hi - lo);
        for (slot, &seq_idx) in order[lo..hi].iter().enumerate() {
            let global_sample = step * cfg.batch_size as u64 + slot as u64;
            let mut pair_rng = root.child("pair", global_sample);
            let sample = &sequences[seq_idx];
            let (t, tp) = crate::dataio::sample_frame_pair(
                sample.num_frames(),
                cfg.pair_mode,
                &mut pair_rng,
            );
            // flo files are looked up next to the frames unless an explicit
            // flow directory mirrors the sequence layout
            let flow_lookup = match flo_dir {
                Some(root) => root.join(seq_dirs[seq_idx].file_name().unwrap()),
                None => seq_dirs[seq_idx].clone(),
            };
            let flow = flow_for_pair(cfg, sample, &flow_lookup, t, tp, global_sample)?;
            batch.push(BatchSample {
                frame: sample.frames[t].clone(),
                flow,
            });
        }
        let step_rng = root.child("step", step);
        let (loss, _) = train_step(&mut state, &encoder, &batch, cfg, &step_rng)?;
        let mut row = String::new();
        let _ = writeln!(
            row,
            "{},{},{},{},{}",
            state.step, loss.l1, loss.grad_x, loss.grad_y, loss.total
        );
        log.write_all(row.as_bytes())
            .map_err(|e| DataError::io(&log_path, e))?;
        final_loss = Some(loss);

        if cfg.checkpoint_every > 0
            && state.step % cfg.checkpoint_every as u64 == 0
            && state.step < total_steps
        {
            let snap_dir = out_dir.join(format!("step_{:06}", state.step));
            save_checkpoint(&snap_dir, &state.to_checkpoint(cfg), extra_manifest)?;
        }
    }

    // the frozen encoder must be bit-identical after the run
    let p = encoder.projection();
    assert_eq!(
        encoder_fingerprint,
        (p.frobenius(), p.data()[0], p.data()[p.data().len() - 1]),
        "frozen encoder changed during training"
    );

    save_checkpoint(out_dir, &state.to_checkpoint(cfg), extra_manifest)?;
    Ok(TrainOutcome {
        steps: state.step,
        final_loss,
        checkpoint_dir: out_dir.to_path_buf(),
    })
}
