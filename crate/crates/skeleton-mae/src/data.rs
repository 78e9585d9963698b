//! Dataset plumbing: JSONL ingestion with validation and person padding,
//! temporal resampling, coordinate normalization, training-time noise, and
//! a synthetic generator for desk-scale experiments.
//!
//! JSONL schema, one object per line:
//! `{"label": int, "persons": [[[x, y] ×N] ×T_raw] ×(1|2),
//!   "confidence": optional [[c ×N] ×T_raw]}`.
//! Coordinates are arbitrary units (pixels typically) and are normalized
//! internally; sequences are padded to exactly 2 person slots with all-zero
//! tracks, which every downstream consumer treats as "absent".

use crate::error::{Error, Result};
use crate::skeleton::SkeletonLayout;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One person's trajectory: `T_raw` frames × `N` joints × (x, y).
pub type PersonTrack = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSequence {
    pub label: usize,
    pub persons: Vec<PersonTrack>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<Vec<f64>>>,
}

impl SkeletonSequence {
    pub fn frame_count(&self) -> usize {
        self.persons.first().map_or(0, |p| p.len())
    }

    /// A person slot counts as absent when every coordinate is exactly 0.
    pub fn person_is_zero(&self, p: usize) -> bool {
        self.persons[p]
            .iter()
            .all(|frame| frame.iter().all(|j| j[0] == 0.0 && j[1] == 0.0))
    }

    pub fn real_person_indices(&self) -> Vec<usize> {
        (0..self.persons.len())
            .filter(|&p| !self.person_is_zero(p))
            .collect()
    }
}

/// Checks every structural invariant: 1..=2 persons, equal frame counts,
/// exactly N joints per frame, finite coordinates, confidence shape.
pub fn validate_sequence(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<()> {
    let n = layout.joint_count();
    if seq.persons.is_empty() || seq.persons.len() > 2 {
        return Err(Error::Data(format!(
            "sequence has {} person tracks; expected 1 or 2",
            seq.persons.len()
        )));
    }
    let t = seq.persons[0].len();
    if t == 0 {
        return Err(Error::Data("sequence has no frames".into()));
    }
    for (p, track) in seq.persons.iter().enumerate() {
        if track.len() != t {
            return Err(Error::Data(format!(
                "person {p} has {} frames; person 0 has {t}",
                track.len()
            )));
        }
        for (f, frame) in track.iter().enumerate() {
            if frame.len() != n {
                return Err(Error::Data(format!(
                    "person {p} frame {f} has {} joints; layout expects {n}",
                    frame.len()
                )));
            }
            for (j, coord) in frame.iter().enumerate() {
                if !coord[0].is_finite() || !coord[1].is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite coordinate at person {p} frame {f} joint {j}"
                    )));
                }
            }
        }
    }
    if let Some(conf) = &seq.confidence {
        if conf.len() != t || conf.iter().any(|row| row.len() != n) {
            return Err(Error::Data("confidence shape does not match frames×joints".into()));
        }
        for (f, row) in conf.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Data(format!(
                        "confidence {c} at frame {f} joint {j} outside [0,1]"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub offset: u64,
    pub label: usize,
    pub person_count: usize,
    pub frame_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub class_count: usize,
    pub split: Split,
}

/// A fully loaded split: manifest plus sequences padded to 2 persons.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Loads and validates a JSONL split; person lists are padded to exactly
/// two tracks with all-zero skeletons.
pub fn load_jsonl(path: &Path, layout: &SkeletonLayout, split: Split) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| crate::error::io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut sequences = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut class_count = 0usize;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| crate::error::io_err(path, e))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let this_offset = offset;
        offset += read as u64;
        if line.trim().is_empty() {
            continue;
        }
        let mut seq: SkeletonSequence = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}: line {line_no}: {e}", path.display()))
        })?;
        validate_sequence(&seq, layout)
            .map_err(|e| Error::Data(format!("{}: line {line_no}: {e}", path.display())))?;
        let person_count = seq.persons.len();
        if person_count == 1 {
            let zeros = vec![vec![[0.0, 0.0]; layout.joint_count()]; seq.frame_count()];
            seq.persons.push(zeros);
        }
        class_count = class_count.max(seq.label + 1);
        records.push(ManifestRecord {
            offset: this_offset,
            label: seq.label,
            person_count,
            frame_count: seq.frame_count(),
        });
        sequences.push(seq);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", path.display())));
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            records,
            class_count,
            split,
        },
        sequences,
    })
}

/// Writes one JSON object per line; numbers round-trip bit-exactly.
pub fn write_jsonl(path: &Path, sequences: &[SkeletonSequence]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| crate::error::io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for seq in sequences {
        let json = serde_json::to_string(seq)
            .map_err(|e| Error::Data(format!("serialize: {e}")))?;
        writeln!(w, "{json}").map_err(|e| crate::error::io_err(path, e))?;
    }
    w.flush().map_err(|e| crate::error::io_err(path, e))
}

/// Linear interpolation of every joint coordinate onto `t_target`
/// uniformly spaced frames. Equal frame counts return a bitwise copy.
/// The confidence channel, being threshold metadata the model ignores,
/// is dropped.
pub fn resample_time(seq: &SkeletonSequence, t_target: usize) -> Result<SkeletonSequence> {
    if t_target == 0 {
        return Err(Error::Config("resample target must be at least 1 frame".into()));
    }
    let t_raw = seq.frame_count();
    if t_raw == 0 {
        return Err(Error::Data("cannot resample an empty sequence".into()));
    }
    if t_raw == t_target {
        return Ok(SkeletonSequence {
            label: seq.label,
            persons: seq.persons.clone(),
            confidence: None,
        });
    }
    let persons = seq
        .persons
        .iter()
        .map(|track| {
            (0..t_target)
                .map(|t| {
                    let pos = if t_target == 1 {
                        0.0
                    } else {
                        t as f64 * (t_raw - 1) as f64 / (t_target - 1) as f64
                    };
                    let (lo, hi, frac) = if t_raw == 1 {
                        (0, 0, 0.0)
                    } else {
                        let lo = (pos.floor() as usize).min(t_raw - 2);
                        (lo, lo + 1, pos - lo as f64)
                    };
                    track[lo]
                        .iter()
                        .zip(&track[hi])
                        .map(|(a, b)| {
                            [
                                a[0] + (b[0] - a[0]) * frac,
                                a[1] + (b[1] - a[1]) * frac,
                            ]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(SkeletonSequence {
        label: seq.label,
        persons,
        confidence: None,
    })
}

const TORSO_REGION: usize = 1;

/// Removes translation and scale per person: the frame-0 torso centroid
/// moves to the origin and the frame-0 bounding-box diagonal becomes 1.
/// All-zero (padding) persons stay zero.
pub fn normalize_coords(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<SkeletonSequence> {
    if layout.region_count() <= TORSO_REGION {
        return Err(Error::Config("layout lacks a torso region".into()));
    }
    let mut out = seq.clone();
    for (p, track) in out.persons.iter_mut().enumerate() {
        if seq.person_is_zero(p) {
            continue;
        }
        let first = &track[0];
        let torso = layout.region(TORSO_REGION);
        let (mut cx, mut cy) = (0.0, 0.0);
        for &j in torso {
            cx += first[j][0];
            cy += first[j][1];
        }
        cx /= torso.len() as f64;
        cy /= torso.len() as f64;
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in first {
            min_x = min_x.min(j[0]);
            max_x = max_x.max(j[0]);
            min_y = min_y.min(j[1]);
            max_y = max_y.max(j[1]);
        }
        let diag = ((max_x - min_x).powi(2) + (max_y - min_y).powi(2)).sqrt();
        if diag < 1e-9 {
            return Err(Error::Data(format!(
                "person {p} frame 0 is degenerate: zero bounding-box diagonal"
            )));
        }
        for frame in track.iter_mut() {
            for j in frame.iter_mut() {
                j[0] = (j[0] - cx) / diag;
                j[1] = (j[1] - cy) / diag;
            }
        }
    }
    Ok(out)
}

/// Adds independent Gaussian noise (std `sigma`) to every coordinate of
/// every real person; padding persons stay exactly zero so they remain
/// recognizable as absent.
pub fn pixel_noise(seq: &SkeletonSequence, sigma: f64, rng: &mut impl Rng) -> Result<SkeletonSequence> {
    if sigma < 0.0 {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?;
    let mut out = seq.clone();
    for (p, track) in out.persons.iter_mut().enumerate() {
        if seq.person_is_zero(p) {
            continue;
        }
        for frame in track.iter_mut() {
            for j in frame.iter_mut() {
                j[0] += normal.sample(rng);
                j[1] += normal.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Validate → resample to `t_target` → normalize → pad to 2 person
/// slots; the shape every model entry point expects.
pub fn prepare_sequence(
    seq: &SkeletonSequence,
    layout: &SkeletonLayout,
    t_target: usize,
) -> Result<SkeletonSequence> {
    validate_sequence(seq, layout)?;
    let resampled = resample_time(seq, t_target)?;
    let mut out = normalize_coords(&resampled, layout)?;
    if out.persons.len() == 1 {
        out.persons
            .push(vec![vec![[0.0, 0.0]; layout.joint_count()]; t_target]);
    }
    Ok(out)
}

// ── Synthetic data ──────────────────────────────────────────────────────

/// Rest pose in pixel coordinates, roughly a standing figure at 640×480.
pub const REST_POSE: [[f64; 2]; 17] = [
    [320.0, 150.0], // nose
    [310.0, 140.0],
    [330.0, 140.0],
    [300.0, 145.0],
    [340.0, 145.0],
    [280.0, 200.0], // shoulders
    [360.0, 200.0],
    [260.0, 260.0], // elbows
    [380.0, 260.0],
    [250.0, 320.0], // wrists
    [390.0, 320.0],
    [295.0, 330.0], // hips
    [345.0, 330.0],
    [290.0, 410.0], // knees
    [350.0, 410.0],
    [285.0, 490.0], // ankles
    [355.0, 490.0],
];

/// Synthetic generator: class `c` oscillates only its active region's
/// joints around the rest pose; everything else stands still.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub class_count: usize,
    pub sequences_per_class: usize,
    pub t_raw: usize,
    /// Pixel-space Gaussian noise added at generation time.
    pub noise_sigma: f64,
    /// Region id animated per class; empty → limbs in order (2, 3, 4, 5, 0, 1).
    pub active_regions: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_count: 4,
            sequences_per_class: 50,
            t_raw: 24,
            noise_sigma: 2.0,
            active_regions: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn resolved_regions(&self) -> Vec<usize> {
        if self.active_regions.is_empty() {
            (0..self.class_count).map(|c| (c + 2) % 6).collect()
        } else {
            self.active_regions.clone()
        }
    }

    pub fn validate(&self, layout: &SkeletonLayout) -> Result<()> {
        if self.class_count == 0 || self.sequences_per_class == 0 || self.t_raw == 0 {
            return Err(Error::Config("synthetic spec sizes must be positive".into()));
        }
        if self.class_count > layout.region_count() {
            return Err(Error::Config(format!(
                "class_count {} exceeds the {} distinct regions available",
                self.class_count,
                layout.region_count()
            )));
        }
        let regions = self.resolved_regions();
        if regions.len() != self.class_count {
            return Err(Error::Config(format!(
                "{} active regions for {} classes",
                regions.len(),
                self.class_count
            )));
        }
        let mut seen = vec![false; layout.region_count()];
        for &r in &regions {
            if r >= layout.region_count() {
                return Err(Error::Config(format!("active region {r} out of range")));
            }
            if seen[r] {
                return Err(Error::Config(format!(
                    "active region {r} assigned to two classes"
                )));
            }
            seen[r] = true;
        }
        Ok(())
    }
}

fn synth_sequence(
    spec: &SynthSpec,
    layout: &SkeletonLayout,
    class: usize,
    index: usize,
) -> SkeletonSequence {
    let mut rng = crate::numerics::stream(spec.seed, "synth", class as u64, index as u64);
    let region = layout.region(spec.resolved_regions()[class]);
    let freq = 1.0 + 0.5 * class as f64;
    let class_phase = 0.9 * class as f64;
    // Small per-sequence jitter: enough within-class variety to need
    // learning, small enough that class centroids stay separated.
    let seq_phase = (rng.random::<f64>() - 0.5) * 0.5;
    let amplitude = 45.0 * (0.8 + 0.4 * rng.random::<f64>());
    let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma >= 0");
    let track: PersonTrack = (0..spec.t_raw)
        .map(|t| {
            (0..layout.joint_count())
                .map(|j| {
                    let mut x = REST_POSE[j][0];
                    let mut y = REST_POSE[j][1];
                    if let Some(k) = region.iter().position(|&r| r == j) {
                        let theta = 2.0 * std::f64::consts::PI * freq * t as f64
                            / spec.t_raw as f64
                            + class_phase
                            + seq_phase
                            + 0.7 * k as f64;
                        x += amplitude * theta.sin();
                        y += amplitude * (1.3 * theta).cos();
                    }
                    if spec.noise_sigma > 0.0 {
                        x += normal.sample(&mut rng);
                        y += normal.sample(&mut rng);
                    }
                    [x, y]
                })
                .collect()
        })
        .collect();
    SkeletonSequence {
        label: class,
        persons: vec![track],
        confidence: None,
    }
}

/// Generates the full dataset and splits it 80/20 per class with a seeded
/// shuffle. Returns `(train, test)`.
pub fn generate_synthetic(
    spec: &SynthSpec,
    layout: &SkeletonLayout,
) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    spec.validate(layout)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..spec.class_count {
        let seqs: Vec<SkeletonSequence> = (0..spec.sequences_per_class)
            .map(|i| synth_sequence(spec, layout, class, i))
            .collect();
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        let mut rng = crate::numerics::stream(spec.seed, "split", class as u64, 0);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let n_train = (seqs.len() * 4).div_ceil(5);
        for (pos, &idx) in order.iter().enumerate() {
            if pos < n_train {
                train.push(seqs[idx].clone());
            } else {
                test.push(seqs[idx].clone());
            }
        }
    }
    Ok((train, test))
}

/// Generates and writes `train.jsonl` / `test.jsonl` under `dir`.
pub fn generate_synthetic_files(
    spec: &SynthSpec,
    layout: &SkeletonLayout,
    dir: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let (train, test) = generate_synthetic(spec, layout)?;
    let train_path = dir.join("train.jsonl");
    let test_path = dir.join("test.jsonl");
    write_jsonl(&train_path, &train)?;
    write_jsonl(&test_path, &test)?;
    Ok((train_path, test_path))
}
