//! Track ingestion (JSONL), sliding-window samples, track-level splits, and
//! a synthetic generator in which camera ego-motion drifts the image-plane
//! trajectory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{behavior_label, EgoKind};
use crate::representation::BoundingBox;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: String,
    pub fps: f64,
    pub frames: Vec<i64>,
    pub boxes: Vec<BoundingBox>,
    /// Speed per frame, or behavior label per frame stored as an integer
    /// valued float.
    pub ego: Vec<f64>,
    pub ego_kind: EgoKind,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.track_id;
        let fail = |msg: String| Err(Error::Domain(format!("track {id}: {msg}")));
        if self.boxes.len() != self.frames.len() || self.ego.len() != self.frames.len() {
            return fail(format!(
                "length mismatch: {} frames, {} boxes, {} ego values",
                self.frames.len(),
                self.boxes.len(),
                self.ego.len()
            ));
        }
        if self.frames.is_empty() {
            return fail("no frames".into());
        }
        if !(self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        if let Some(w) = self.frames.windows(2).find(|w| w[1] != w[0] + 1) {
            return fail(format!("frames not contiguous: {} then {}", w[0], w[1]));
        }
        if let Some((i, b)) = self.boxes.iter().enumerate().find(|(_, b)| !b.is_valid()) {
            return fail(format!(
                "invalid box at frame {}: ({}, {}, {}, {})",
                self.frames[i], b.x, b.y, b.w, b.h
            ));
        }
        match self.ego_kind {
            EgoKind::Speed => {
                if let Some(v) = self.ego.iter().find(|v| !v.is_finite()) {
                    return fail(format!("non-finite ego speed {v}"));
                }
            }
            EgoKind::Behavior => {
                for &v in &self.ego {
                    if let Err(e) = behavior_label(v) {
                        return fail(e.to_string());
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct TrackIn {
    track_id: String,
    #[serde(default = "default_fps")]
    fps: f64,
    frames: Vec<i64>,
    boxes: Vec<[f64; 4]>,
    ego: Vec<f64>,
    ego_kind: String,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

#[derive(Serialize)]
#[serde(untagged)]
enum EgoOut {
    Labels(Vec<i64>),
    Speeds(Vec<f64>),
}

#[derive(Serialize)]
struct TrackOut<'a> {
    track_id: &'a str,
    fps: f64,
    frames: &'a [i64],
    boxes: Vec<[f64; 4]>,
    ego: EgoOut,
    ego_kind: String,
}

/// Parses one JSONL line.
pub fn parse_track(line: &str) -> Result<Track> {
    let raw: TrackIn = serde_json::from_str(line).map_err(|e| Error::Domain(e.to_string()))?;
    let track = Track {
        ego_kind: raw
            .ego_kind
            .parse()
            .map_err(|e: Error| Error::Domain(format!("track {}: {e}", raw.track_id)))?,
        track_id: raw.track_id,
        fps: raw.fps,
        frames: raw.frames,
        boxes: raw.boxes.into_iter().map(BoundingBox::from_array).collect(),
        ego: raw.ego,
    };
    track.validate()?;
    Ok(track)
}

/// Serializes a track as one JSON line (no trailing newline).
pub fn track_to_json(track: &Track) -> String {
    let ego = match track.ego_kind {
        EgoKind::Behavior => EgoOut::Labels(track.ego.iter().map(|&v| v as i64).collect()),
        EgoKind::Speed => EgoOut::Speeds(track.ego.clone()),
    };
    let out = TrackOut {
        track_id: &track.track_id,
        fps: track.fps,
        frames: &track.frames,
        boxes: track.boxes.iter().map(|b| b.to_array()).collect(),
        ego,
        ego_kind: track.ego_kind.to_string(),
    };
    serde_json::to_string(&out).expect("track serialization cannot fail")
}

/// Loads a JSONL file, one track per non-blank line.
pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tracks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let track = parse_track(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        tracks.push(track);
    }
    Ok(tracks)
}

/// Loads a single JSONL file, or every `*.jsonl` file of a directory in
/// file-name order.
pub fn load_dataset(path: &Path) -> Result<Vec<Track>> {
    if !path.is_dir() {
        return load_tracks(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut tracks = Vec::new();
    for f in files {
        tracks.extend(load_tracks(&f)?);
    }
    Ok(tracks)
}

pub fn save_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend_from_slice(track_to_json(t).as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// One observation/future window cut from a track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub obs_boxes: Vec<BoundingBox>,
    pub obs_ego: Vec<f64>,
    pub future_boxes: Vec<BoundingBox>,
    pub track_id: String,
    /// Frame number of the first observed box.
    pub start_frame: i64,
}

impl TrackSample {
    /// Frame number of the last observed box.
    pub fn last_obs_frame(&self) -> i64 {
        self.start_frame + self.obs_boxes.len() as i64 - 1
    }
}

/// Every window of `m_obs + n_pred` frames, starts spaced by `stride`, in
/// track order then frame order.
pub fn window_samples(tracks: &[Track], m_obs: usize, n_pred: usize, stride: usize) -> Result<Vec<TrackSample>> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let span = m_obs + n_pred;
    let mut out = Vec::new();
    for t in tracks {
        if t.len() < span {
            continue;
        }
        for s in (0..=t.len() - span).step_by(stride) {
            out.push(TrackSample {
                obs_boxes: t.boxes[s..s + m_obs].to_vec(),
                obs_ego: t.ego[s..s + m_obs].to_vec(),
                future_boxes: t.boxes[s + m_obs..s + span].to_vec(),
                track_id: t.track_id.clone(),
                start_frame: t.frames[s],
            });
        }
    }
    Ok(out)
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.5, 0.1, 0.4);

/// Track-level train/val/test partition. Sizes are `floor(r·n)` for train
/// and val with the remainder going to test; each part keeps input order.
pub fn split(tracks: &[Track], ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<Track>, Vec<Track>, Vec<Track>)> {
    if tracks.is_empty() {
        return Err(Error::EmptyDataset("split input"));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = tracks.len();
    let n_train = (a * n as f64).floor() as usize;
    let n_val = ((b * n as f64).floor() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| tracks[i].clone()).collect::<Vec<_>>()
    };
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Upper bound of the synthetic ego speed.
pub const SYNTH_MAX_SPEED: f64 = 15.0;
/// Persistence of the synthetic ego acceleration.
pub const SYNTH_ACCEL_PERSISTENCE: f64 = 0.95;
/// Standard deviation of the acceleration innovations.
pub const SYNTH_ACCEL_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub len: usize,
    pub seed: u64,
    /// Pixels of image-plane shift per unit of cumulative ego speed.
    pub ego_gain: f64,
    /// Standard deviation of the world-frame position jitter (pixels).
    pub noise: f64,
    pub ego_kind: EgoKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tracks: 100,
            len: 60,
            seed: 0,
            ego_gain: 0.8,
            noise: 0.5,
            ego_kind: EgoKind::Speed,
        }
    }
}

/// Ego speed and acceleration per frame, before quantization.
#[derive(Debug, Clone)]
struct EgoPath {
    speed: Vec<f64>,
    accel: Vec<f64>,
}

/// Speed follows `s_t = clamp(s_{t−1} + a_t, 0, MAX)` with AR(1)
/// acceleration `a_t = ρ·a_{t−1} + N(0, σ_a)`; the acceleration is reset to
/// zero when the speed hits a bound.
fn ego_path(len: usize, rng: &mut ChaCha8Rng) -> EgoPath {
    let innov = Normal::new(0.0, SYNTH_ACCEL_NOISE).expect("valid normal");
    let stationary = SYNTH_ACCEL_NOISE / (1.0 - SYNTH_ACCEL_PERSISTENCE.powi(2)).sqrt();
    let mut s = rng.gen_range(2.0..10.0);
    let mut a = Normal::new(0.0, stationary).expect("valid normal").sample(rng);
    let mut speed = Vec::with_capacity(len);
    let mut accel = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            a = SYNTH_ACCEL_PERSISTENCE * a + innov.sample(rng);
            let next = s + a;
            if !(0.0..=SYNTH_MAX_SPEED).contains(&next) {
                a = 0.0;
            }
            s = next.clamp(0.0, SYNTH_MAX_SPEED);
        }
        speed.push(s);
        accel.push(a);
    }
    EgoPath { speed, accel }
}

/// Five-level behavior label: 0 stopped, 1 moving slow, 2 moving fast,
/// 3 decelerating, 4 accelerating.
pub fn quantize_behavior(speed: f64, accel: f64) -> f64 {
    const STOPPED: f64 = 0.5;
    const ACCEL: f64 = 0.05;
    if speed < STOPPED {
        0.0
    } else if accel < -ACCEL {
        3.0
    } else if accel > ACCEL {
        4.0
    } else if speed < SYNTH_MAX_SPEED / 2.0 {
        1.0
    } else {
        2.0
    }
}

/// Synthetic tracks. Per track: the world-frame center moves at constant
/// velocity plus N(0, σ) jitter; the image-plane x is the world x minus
/// `γ · Σ_{k≤t} s_k`; width and height grow at one constant relative rate.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Track>> {
    if cfg.n_tracks == 0 || cfg.len < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs tracks >= 1 and len >= 2, got {} and {}",
            cfg.n_tracks, cfg.len
        )));
    }
    if !(cfg.noise >= 0.0) || !cfg.ego_gain.is_finite() {
        return Err(Error::Config("noise must be >= 0 and ego_gain finite".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut tracks = Vec::with_capacity(cfg.n_tracks);
    for i in 0..cfg.n_tracks {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let x0 = rng.gen_range(400.0..1500.0);
        let y0 = rng.gen_range(450.0..650.0);
        let vx = rng.gen_range(-3.0..3.0);
        let vy = rng.gen_range(-0.5..0.5);
        let w0 = rng.gen_range(25.0..60.0);
        let h0 = w0 * rng.gen_range(2.2..2.8);
        let rate: f64 = rng.gen_range(-0.004..0.008);
        let ego = ego_path(cfg.len, &mut rng);
        let mut cum = 0.0;
        let mut boxes = Vec::with_capacity(cfg.len);
        for t in 0..cfg.len {
            cum += ego.speed[t];
            let tf = t as f64;
            let (jx, jy) = if cfg.noise > 0.0 {
                (jitter.sample(&mut rng), jitter.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            let growth = (1.0 + rate).powi(t as i32);
            boxes.push(BoundingBox {
                x: x0 + vx * tf + jx - cfg.ego_gain * cum,
                y: y0 + vy * tf + jy,
                w: w0 * growth,
                h: h0 * growth,
            });
        }
        let ego_values = match cfg.ego_kind {
            EgoKind::Speed => ego.speed.clone(),
            EgoKind::Behavior => ego
                .speed
                .iter()
                .zip(&ego.accel)
                .map(|(&s, &a)| quantize_behavior(s, a))
                .collect(),
        };
        tracks.push(Track {
            track_id: format!("synth{i:05}"),
            fps: DEFAULT_FPS,
            frames: (0..cfg.len as i64).collect(),
            boxes,
            ego: ego_values,
            ego_kind: cfg.ego_kind,
        });
    }
    Ok(tracks)
}
