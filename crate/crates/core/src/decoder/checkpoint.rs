//! Checkpoint directory: one FLTF file per tensor plus a key = value
//! manifest carrying shapes, step, momentum and seeds.

use super::{
    AdamConfig, ConvLayer, DecoderGrads, DecoderParams, EmaParams, OptimizerState,
};
use crate::dataio::{read_fltf, write_fltf, DataError};
use crate::numerics::Matrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub student: DecoderParams,
    pub teacher: EmaParams,
    pub opt: OptimizerState,
    pub step: u64,
    pub train_seed: u64,
    pub encoder_seed: u64,
    pub encoder_patch: usize,
    pub encoder_dim: usize,
    /// Shared linear head of the naive ablation, when trained with it.
    pub naive_map: Option<Matrix>,
    pub config_hash: String,
}

fn conv_dims(layer: &ConvLayer) -> [u32; 4] {
    [3, 3, layer.in_ch as u32, layer.out_ch as u32]
}

fn write_conv(dir: &Path, stem: &str, layer: &ConvLayer) -> Result<(), DataError> {
    write_fltf(
        &dir.join(format!("{stem}_w.fltf")),
        &conv_dims(layer),
        &layer.weights,
    )?;
    write_fltf(
        &dir.join(format!("{stem}_b.fltf")),
        &[layer.out_ch as u32],
        &layer.bias,
    )
}

fn read_conv(dir: &Path, stem: &str) -> Result<ConvLayer, DataError> {
    let path = dir.join(format!("{stem}_w.fltf"));
    let (dims, weights) = read_fltf(&path)?;
    if dims.len() != 4 || dims[0] != 3 || dims[1] != 3 {
        return Err(DataError::InvalidHeader {
            path,
            reason: format!("unexpected conv dims {dims:?}"),
        });
    }
    let (_, bias) = read_fltf(&dir.join(format!("{stem}_b.fltf")))?;
    Ok(ConvLayer {
        in_ch: dims[2] as usize,
        out_ch: dims[3] as usize,
        weights,
        bias,
    })
}

fn write_params(dir: &Path, prefix: &str, p: &DecoderParams) -> Result<(), DataError> {
    write_conv(dir, &format!("{prefix}_conv1"), &p.conv1)?;
    write_conv(dir, &format!("{prefix}_conv2"), &p.conv2)
}

fn read_params(dir: &Path, prefix: &str) -> Result<DecoderParams, DataError> {
    Ok(DecoderParams {
        conv1: read_conv(dir, &format!("{prefix}_conv1"))?,
        conv2: read_conv(dir, &format!("{prefix}_conv2"))?,
    })
}

fn write_grads(dir: &Path, prefix: &str, g: &DecoderGrads, like: &DecoderParams) -> Result<(), DataError> {
    write_fltf(&dir.join(format!("{prefix}_conv1_w.fltf")), &conv_dims(&like.conv1), &g.conv1_w)?;
    write_fltf(&dir.join(format!("{prefix}_conv1_b.fltf")), &[like.conv1.out_ch as u32], &g.conv1_b)?;
    write_fltf(&dir.join(format!("{prefix}_conv2_w.fltf")), &conv_dims(&like.conv2), &g.conv2_w)?;
    write_fltf(&dir.join(format!("{prefix}_conv2_b.fltf")), &[like.conv2.out_ch as u32], &g.conv2_b)
}

fn read_grads(dir: &Path, prefix: &str) -> Result<DecoderGrads, DataError> {
    Ok(DecoderGrads {
        conv1_w: read_fltf(&dir.join(format!("{prefix}_conv1_w.fltf")))?.1,
        conv1_b: read_fltf(&dir.join(format!("{prefix}_conv1_b.fltf")))?.1,
        conv2_w: read_fltf(&dir.join(format!("{prefix}_conv2_w.fltf")))?.1,
        conv2_b: read_fltf(&dir.join(format!("{prefix}_conv2_b.fltf")))?.1,
    })
}

/// Save a checkpoint. `extra` key-value pairs (run provenance) are embedded
/// in the same manifest so a checkpoint directory has exactly one manifest.
pub fn save_checkpoint(
    dir: &Path,
    ckpt: &Checkpoint,
    extra: &[(String, String)],
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut m = String::new();
    let _ = writeln!(m, "format = flowdistill-checkpoint");
    let _ = writeln!(m, "version = 1");
    let _ = writeln!(m, "step = {}", ckpt.step);
    let _ = writeln!(m, "train_seed = {}", ckpt.train_seed);
    let _ = writeln!(m, "encoder_seed = {}", ckpt.encoder_seed);
    let _ = writeln!(m, "encoder_patch = {}", ckpt.encoder_patch);
    let _ = writeln!(m, "encoder_dim = {}", ckpt.encoder_dim);
    let _ = writeln!(m, "hidden = {}", ckpt.student.conv1.out_ch);
    let _ = writeln!(m, "feature_dim = {}", ckpt.student.conv2.out_ch);
    let _ = writeln!(m, "input_channels = {}", ckpt.student.conv1.in_ch);
    let _ = writeln!(m, "ema_momentum = {}", ckpt.teacher.momentum);
    let _ = writeln!(m, "adam_lr = {}", ckpt.opt.cfg.lr);
    let _ = writeln!(m, "adam_beta1 = {}", ckpt.opt.cfg.beta1);
    let _ = writeln!(m, "adam_beta2 = {}", ckpt.opt.cfg.beta2);
    let _ = writeln!(m, "adam_eps = {}", ckpt.opt.cfg.eps);
    let _ = writeln!(m, "adam_weight_decay = {}", ckpt.opt.cfg.weight_decay);
    let _ = writeln!(m, "adam_step = {}", ckpt.opt.step);
    let _ = writeln!(m, "naive = {}", u8::from(ckpt.naive_map.is_some()));
    let _ = writeln!(m, "config_hash = {}", ckpt.config_hash);
    for (k, v) in extra {
        let _ = writeln!(m, "{k} = {v}");
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, m).map_err(|e| DataError::io(&path, e))?;

    write_params(dir, "student", &ckpt.student)?;
    write_params(dir, "teacher", &ckpt.teacher.params)?;
    write_grads(dir, "opt_m", &ckpt.opt.m, &ckpt.student)?;
    write_grads(dir, "opt_v", &ckpt.opt.v, &ckpt.student)?;
    if let Some(a) = &ckpt.naive_map {
        write_fltf(
            &dir.join("naive_a.fltf"),
            &[a.rows() as u32, a.cols() as u32],
            a.data(),
        )?;
    }
    Ok(())
}

pub(crate) fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, DataError> {
    let manifest_path = dir.join("manifest.txt");
    let map = read_manifest(&manifest_path)?;
    if map.get("format").map(String::as_str) != Some("flowdistill-checkpoint") {
        return Err(DataError::InvalidHeader {
            path: manifest_path,
            reason: "not a checkpoint manifest".into(),
        });
    }
    let get = |key: &str| -> Result<&String, DataError> {
        map.get(key).ok_or_else(|| DataError::InvalidHeader {
            path: dir.join("manifest.txt"),
            reason: format!("missing key {key}"),
        })
    };
    macro_rules! parse {
        ($key:expr, $ty:ty) => {
            get($key)?
                .parse::<$ty>()
                .map_err(|_| DataError::InvalidHeader {
                    path: dir.join("manifest.txt"),
                    reason: format!("unparsable {}", $key),
                })?
        };
    }

    let student = read_params(dir, "student")?;
    let teacher_params = read_params(dir, "teacher")?;
    let cfg = AdamConfig {
        lr: parse!("adam_lr", f32),
        beta1: parse!("adam_beta1", f32),
        beta2: parse!("adam_beta2", f32),
        eps: parse!("adam_eps", f32),
        weight_decay: parse!("adam_weight_decay", f32),
        decoupled: true,
    };
    let opt = OptimizerState {
        cfg,
        step: parse!("adam_step", u64),
        m: read_grads(dir, "opt_m")?,
        v: read_grads(dir, "opt_v")?,
    };
    let naive_map = if parse!("naive", u8) == 1 {
        let (dims, data) = read_fltf(&dir.join("naive_a.fltf"))?;
        Some(Matrix::from_vec(dims[0] as usize, dims[1] as usize, data))
    } else {
        None
    };
    Ok(Checkpoint {
        student,
        teacher: EmaParams {
            params: teacher_params,
            momentum: parse!("ema_momentum", f32),
        },
        opt,
        step: parse!("step", u64),
        train_seed: parse!("train_seed", u64),
        encoder_seed: parse!("encoder_seed", u64),
        encoder_patch: parse!("encoder_patch", usize),
        encoder_dim: parse!("encoder_dim", usize),
        naive_map,
        config_hash: get("config_hash")?.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{init_params, DecoderConfig};

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(
            &DecoderConfig {
                enc_dim: 4,
                hidden: 6,
                feature_dim: 5,
            },
            3,
        );
        let mut opt = OptimizerState::new(&params, AdamConfig::default());
        opt.step = 17;
        for t in opt.m.tensors_mut() {
            for (i, v) in t.iter_mut().enumerate() {
                *v = i as f32 * 0.01;
            }
        }
        let ckpt = Checkpoint {
            teacher: EmaParams::from_student(&params, 0.97),
            opt,
            student: params,
            step: 42,
            train_seed: 7,
            encoder_seed: 9,
            encoder_patch: 8,
            encoder_dim: 4,
            naive_map: Some(Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f32)),
            config_hash: "abc123".into(),
        };
        save_checkpoint(dir.path(), &ckpt, &[("note".into(), "test".into())]).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.student, ckpt.student);
        assert_eq!(back.teacher, ckpt.teacher);
        assert_eq!(back.opt, ckpt.opt);
        assert_eq!(back.step, 42);
        assert_eq!(back.naive_map, ckpt.naive_map);
        assert_eq!(back.config_hash, "abc123");
        // exactly one manifest in the directory
        let manifests = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .contains("manifest")
            })
            .count();
        assert_eq!(manifests, 1);
    }

    #[test]
    fn missing_checkpoint_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(DataError::Io { .. })
        ));
    }
}
