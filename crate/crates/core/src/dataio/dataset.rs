//! Dataset directory layout.
//!
//! `seq_%05d/frame_%03d.ppm`, `seq_%05d/mask_%03d.pgm`, a `scene.txt` with
//! the parametric scene state (so oracle flow stays computable from disk),
//! and optional `flow_%03d_%03d.flo` files.

use super::scene::{Scene, Sprite, SpriteShape, Texture, VideoSample, Wave};
use super::{oracle_flow, read_pgm, read_ppm, write_flo, write_pgm, write_ppm_f32, DataError};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn fmt_texture(t: &Texture) -> String {
    let mut s = String::new();
    for w in &t.waves {
        let _ = write!(s, "{} {} {} {} ", w.amp, w.freq_x, w.freq_y, w.phase);
    }
    s.trim_end().to_string()
}

fn parse_texture(s: &str, path: &Path) -> Result<Texture, DataError> {
    let nums: Result<Vec<f32>, _> = s.split_whitespace().map(|t| t.parse::<f32>()).collect();
    let nums = nums.map_err(|_| DataError::InvalidHeader {
        path: path.to_path_buf(),
        reason: "unparsable texture floats".into(),
    })?;
    if nums.len() != 36 {
        return Err(DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("texture needs 36 floats, got {}", nums.len()),
        });
    }
    let waves = nums
        .chunks_exact(4)
        .map(|c| Wave {
            amp: c[0],
            freq_x: c[1],
            freq_y: c[2],
            phase: c[3],
        })
        .collect();
    Ok(Texture { waves })
}

pub(crate) fn write_scene(scene: &Scene, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    let _ = writeln!(out, "height = {}", scene.height);
    let _ = writeln!(out, "width = {}", scene.width);
    let _ = writeln!(out, "frames = {}", scene.frames);
    let _ = writeln!(out, "pan = {} {}", scene.pan.0, scene.pan.1);
    let _ = writeln!(out, "background = {}", fmt_texture(&scene.background));
    let _ = writeln!(out, "sprite_count = {}", scene.sprites.len());
    for (i, s) in scene.sprites.iter().enumerate() {
        let shape = match s.shape {
            SpriteShape::Disk => "disk",
            SpriteShape::Square => "square",
        };
        let _ = writeln!(out, "sprite.{i}.shape = {shape}");
        let _ = writeln!(out, "sprite.{i}.size = {}", s.size);
        let _ = writeln!(out, "sprite.{i}.center0 = {} {}", s.center0.0, s.center0.1);
        let _ = writeln!(out, "sprite.{i}.velocity = {} {}", s.velocity.0, s.velocity.1);
        let _ = writeln!(out, "sprite.{i}.angle0 = {}", s.angle0);
        let _ = writeln!(out, "sprite.{i}.spin = {}", s.spin);
        let _ = writeln!(out, "sprite.{i}.texture = {}", fmt_texture(&s.texture));
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub(crate) fn read_scene(path: &Path) -> Result<Scene, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("missing '=' in {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| -> Result<&String, DataError> {
        map.get(key).ok_or_else(|| DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("missing key {key}"),
        })
    };
    let parse_usize = |key: &str| -> Result<usize, DataError> {
        get(key)?.parse().map_err(|_| DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("unparsable {key}"),
        })
    };
    let parse_f32_pair = |key: &str| -> Result<(f32, f32), DataError> {
        let v = get(key)?;
        let mut it = v.split_whitespace();
        let a = it.next().and_then(|t| t.parse().ok());
        let b = it.next().and_then(|t| t.parse().ok());
        match (a, b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(DataError::InvalidHeader {
                path: path.to_path_buf(),
                reason: format!("unparsable pair {key}"),
            }),
        }
    };
    let parse_f32 = |key: &str| -> Result<f32, DataError> {
        get(key)?.parse().map_err(|_| DataError::InvalidHeader {
            path: path.to_path_buf(),
            reason: format!("unparsable {key}"),
        })
    };

    let sprite_count = parse_usize("sprite_count")?;
    let mut sprites = Vec::with_capacity(sprite_count);
    for i in 0..sprite_count {
        let shape = match get(&format!("sprite.{i}.shape"))?.as_str() {
            "disk" => SpriteShape::Disk,
            "square" => SpriteShape::Square,
            other => {
                return Err(DataError::InvalidHeader {
                    path: path.to_path_buf(),
                    reason: format!("unknown shape {other}"),
                })
            }
        };
        sprites.push(Sprite {
            shape,
            size: parse_f32(&format!("sprite.{i}.size"))?,
            center0: parse_f32_pair(&format!("sprite.{i}.center0"))?,
            velocity: parse_f32_pair(&format!("sprite.{i}.velocity"))?,
            angle0: parse_f32(&format!("sprite.{i}.angle0"))?,
            spin: parse_f32(&format!("sprite.{i}.spin"))?,
            texture: parse_texture(get(&format!("sprite.{i}.texture"))?, path)?,
        });
    }
    Ok(Scene {
        height: parse_usize("height")?,
        width: parse_usize("width")?,
        frames: parse_usize("frames")?,
        pan: parse_f32_pair("pan")?,
        background: parse_texture(get("background")?, path)?,
        sprites,
    })
}

pub fn sequence_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("seq_{index:05}"))
}

/// Write one sequence; `flow_window` additionally materializes oracle flow
/// for every ordered pair within that temporal distance.
pub fn write_sequence(
    root: &Path,
    index: usize,
    sample: &VideoSample,
    flow_window: Option<usize>,
) -> Result<(), DataError> {
    let dir = sequence_dir(root, index);
    fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    for (t, frame) in sample.frames.iter().enumerate() {
        write_ppm_f32(&dir.join(format!("frame_{t:03}.ppm")), frame)?;
    }
    for (t, mask) in sample.masks.iter().enumerate() {
        write_pgm(&dir.join(format!("mask_{t:03}.pgm")), mask)?;
    }
    write_scene(&sample.scene, &dir.join("scene.txt"))?;
    if let Some(w) = flow_window {
        let n = sample.num_frames();
        for t in 0..n {
            for tp in t.saturating_sub(w)..(t + w + 1).min(n) {
                if t == tp {
                    continue;
                }
                let flow = oracle_flow(sample, t, tp)?;
                write_flo(&flow, &dir.join(format!("flow_{t:03}_{tp:03}.flo")))?;
            }
        }
    }
    Ok(())
}

pub fn write_dataset(
    root: &Path,
    samples: &[VideoSample],
    flow_window: Option<usize>,
) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
    for (i, s) in samples.iter().enumerate() {
        write_sequence(root, i, s, flow_window)?;
    }
    Ok(())
}

/// Sorted `seq_*` directories under the dataset root.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| DataError::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seq_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DataError::InvalidConfig(format!(
            "no seq_* directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Load one sequence: quantized frames, masks, and the parametric scene.
pub fn load_sequence(dir: &Path) -> Result<VideoSample, DataError> {
    let scene = read_scene(&dir.join("scene.txt"))?;
    let mut frames = Vec::with_capacity(scene.frames);
    let mut masks = Vec::with_capacity(scene.frames);
    for t in 0..scene.frames {
        frames.push(read_ppm(&dir.join(format!("frame_{t:03}.ppm")))?);
        masks.push(read_pgm(&dir.join(format!("mask_{t:03}.pgm")))?);
    }
    Ok(VideoSample {
        frames,
        masks,
        scene,
        flows: BTreeMap::new(),
    })
}
