//! Corpora of segmented multi-sensor recordings.
//!
//! On disk a corpus is a long-form CSV with one row per timestep:
//!
//! ```text
//! segment_id,domain,label,t,s1,s2,...,sm
//! ```
//!
//! Rows are grouped by `segment_id`; within a segment `t` must cover
//! `0..T` exactly once. Segments may have different lengths. Domain ids are
//! taken from the file as given.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::Segment;
use crate::error::{HdError, Result};
use crate::hv::{HvRng, Stream};

/// A validated, immutable set of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub segments: Vec<Segment>,
    pub sensors: usize,
    pub classes: usize,
    pub domains: usize,
}

impl Corpus {
    /// Validates `segments` and infers sensor, class and domain counts.
    pub fn new(name: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let first = segments.first().ok_or(HdError::Empty("corpus segments"))?;
        let sensors = first.sensors();
        if sensors == 0 {
            return Err(HdError::Empty("segment sensors"));
        }
        for s in &segments {
            if s.sensors() != sensors {
                return Err(HdError::SensorCount {
                    got: s.sensors(),
                    expected: sensors,
                });
            }
            let t = s.timesteps();
            if t == 0 || s.values.iter().any(|v| v.len() != t) {
                return Err(HdError::RaggedSegment(s.id));
            }
            if s.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(HdError::InvalidConfig(format!(
                    "segment {} contains non-finite readings",
                    s.id
                )));
            }
        }
        let classes = segments.iter().map(|s| s.label).max().unwrap_or(0) + 1;
        let domains = segments.iter().map(|s| s.domain).max().unwrap_or(0) + 1;
        Ok(Self {
            name: name.into(),
            segments,
            sensors,
            classes,
            domains,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Distinct domain ids present, ascending.
    pub fn domain_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.segments.iter().map(|s| s.domain).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Segment count per domain id `0..domains`.
    pub fn domain_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.domains];
        for s in &self.segments {
            counts[s.domain] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Segment> {
        indices.iter().map(|&i| &self.segments[i]).collect()
    }

    /// Seeded subset of `ceil(fraction * len)` segments, kept in corpus
    /// order. Smaller fractions under the same seed give nested subsets.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Corpus> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(HdError::InvalidConfig(format!(
                "fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut HvRng::new(seed, Stream::Subsample).at(0));
        let take = ((fraction * self.len() as f64).ceil() as usize).clamp(1, self.len());
        let mut keep = order[..take].to_vec();
        keep.sort_unstable();
        Corpus::new(
            self.name.clone(),
            keep.into_iter().map(|i| self.segments[i].clone()).collect(),
        )
    }
}

/// Column roles of a corpus CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub segment: String,
    pub domain: String,
    pub label: String,
    pub time: String,
    /// Sensor columns in order; `None` takes every other column in header
    /// order.
    pub sensors: Option<Vec<String>>,
}

impl Default for CorpusSchema {
    fn default() -> Self {
        Self {
            segment: "segment_id".into(),
            domain: "domain".into(),
            label: "label".into(),
            time: "t".into(),
            sensors: None,
        }
    }
}

fn data_err(path: &Path, message: impl Into<String>) -> HdError {
    HdError::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads and validates a corpus CSV.
pub fn load_corpus(path: impl AsRef<Path>, schema: &CorpusSchema) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| data_err(path, e.to_string()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_corpus(file, schema, &name, path)
}

struct Pending {
    domain: usize,
    label: usize,
    first_line: u64,
    rows: Vec<(usize, u64, Vec<f64>)>,
}

/// Reads a corpus from any CSV source. `origin` is only used in error
/// messages.
pub fn read_corpus<R: Read>(
    reader: R,
    schema: &CorpusSchema,
    name: &str,
    origin: &Path,
) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| data_err(origin, format!("cannot read header: {e}")))?
        .clone();
    let find = |col: &str| {
        headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| data_err(origin, format!("missing column `{col}`")))
    };
    let seg_col = find(&schema.segment)?;
    let dom_col = find(&schema.domain)?;
    let lab_col = find(&schema.label)?;
    let t_col = find(&schema.time)?;
    let sensor_cols: Vec<usize> = match &schema.sensors {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|i| ![seg_col, dom_col, lab_col, t_col].contains(i))
            .collect(),
    };
    if sensor_cols.is_empty() {
        return Err(data_err(origin, "no sensor columns"));
    }

    let mut pending: BTreeMap<u64, Pending> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| data_err(origin, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        macro_rules! parse {
            ($i:expr, $ty:ty, $what:expr) => {
                field($i).parse::<$ty>().map_err(|_| {
                    data_err(
                        origin,
                        format!("line {line}: invalid {} `{}`", $what, field($i)),
                    )
                })?
            };
        }
        let id = parse!(seg_col, u64, "segment id");
        let domain = parse!(dom_col, usize, "domain");
        let label = parse!(lab_col, usize, "label");
        let t = parse!(t_col, usize, "time index");
        let mut values = Vec::with_capacity(sensor_cols.len());
        for &c in &sensor_cols {
            let v = parse!(c, f64, format!("reading in column `{}`", &headers[c]));
            if !v.is_finite() {
                return Err(data_err(
                    origin,
                    format!(
                        "line {line}: non-finite reading in column `{}`",
                        &headers[c]
                    ),
                ));
            }
            values.push(v);
        }
        let entry = pending.entry(id).or_insert_with(|| Pending {
            domain,
            label,
            first_line: line,
            rows: Vec::new(),
        });
        if entry.domain != domain || entry.label != label {
            return Err(data_err(
                origin,
                format!(
                    "line {line}: segment {id} changes domain/label (first seen on line {})",
                    entry.first_line
                ),
            ));
        }
        entry.rows.push((t, line, values));
    }
    if pending.is_empty() {
        return Err(data_err(origin, "no data rows"));
    }

    let m = sensor_cols.len();
    let mut segments = Vec::with_capacity(pending.len());
    for (id, mut p) in pending {
        p.rows.sort_by_key(|r| (r.0, r.1));
        for (expect, (t, line, _)) in p.rows.iter().enumerate() {
            if *t != expect {
                let what = if *t < expect { "duplicate" } else { "missing" };
                return Err(data_err(
                    origin,
                    format!(
                        "line {line}: segment {id} is ragged ({what} time index near t={expect})"
                    ),
                ));
            }
        }
        let mut values = vec![Vec::with_capacity(p.rows.len()); m];
        for (_, _, row) in p.rows {
            for (s, v) in row.into_iter().enumerate() {
                values[s].push(v);
            }
        }
        segments.push(Segment {
            id,
            domain: p.domain,
            label: p.label,
            values,
        });
    }
    Corpus::new(name, segments).map_err(|e| data_err(origin, e.to_string()))
}

/// Writes the canonical CSV form: segments by ascending id, rows by `t`.
pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "segment_id".to_string(),
        "domain".into(),
        "label".into(),
        "t".into(),
    ];
    header.extend((1..=corpus.sensors).map(|i| format!("s{i}")));
    w.write_record(&header)?;
    let mut order: Vec<&Segment> = corpus.segments.iter().collect();
    order.sort_by_key(|s| s.id);
    let mut row = Vec::with_capacity(header.len());
    for s in order {
        for t in 0..s.timesteps() {
            row.clear();
            row.push(s.id.to_string());
            row.push(s.domain.to_string());
            row.push(s.label.to_string());
            row.push(t.to_string());
            row.extend(s.values.iter().map(|v| v[t].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_corpus(corpus, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Lodo,
    KFold { k: usize },
}

/// One train/test split, exportable as JSON for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(flatten)]
    pub kind: SplitKind,
    /// Held-out domain id (LODO) or fold index (k-fold).
    pub held_out: usize,
    pub seed: Option<u64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One split per domain present: test on that domain, train on the rest.
pub fn make_lodo_splits(c: &Corpus) -> Result<Vec<SplitPlan>> {
    let ids = c.domain_ids();
    if ids.len() < 2 {
        return Err(HdError::InvalidConfig(format!(
            "leave-one-domain-out needs at least 2 domains, corpus has {}",
            ids.len()
        )));
    }
    Ok(ids
        .into_iter()
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..c.len()).partition(|&i| c.segments[i].domain == k);
            SplitPlan {
                kind: SplitKind::Lodo,
                held_out: k,
                seed: None,
                train,
                test,
            }
        })
        .collect())
}

/// Seeded uniform partition into `k` folds whose sizes differ by at most one.
pub fn make_kfold_splits(c: &Corpus, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 || k > c.len() {
        return Err(HdError::InvalidConfig(format!(
            "k must lie in [2, {}], got {k}",
            c.len()
        )));
    }
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.shuffle(&mut HvRng::new(seed, Stream::Folds).at(0));
    let base = c.len() / k;
    let extra = c.len() % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(SplitPlan {
            kind: SplitKind::KFold { k },
            held_out: f,
            seed: Some(seed),
            train,
            test,
        });
        start += size;
    }
    Ok(folds)
}

/// Parameters of the synthetic distribution-shift corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub domains: usize,
    pub classes: usize,
    pub sensors: usize,
    pub timesteps: usize,
    pub samples_per_class: usize,
    /// Scale of the per-domain mean offsets and amplitude gains.
    pub shift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            domains: 4,
            classes: 4,
            sensors: 3,
            timesteps: 32,
            samples_per_class: 100,
            shift: 2.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.domains, "domains"),
            (self.classes, "classes"),
            (self.sensors, "sensors"),
            (self.timesteps, "timesteps"),
            (self.samples_per_class, "samples_per_class"),
        ] {
            if v == 0 {
                return Err(HdError::InvalidConfig(format!("{what} must be positive")));
            }
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return Err(HdError::InvalidConfig(
                "shift must be finite and >= 0".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(HdError::InvalidConfig(
                "noise must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e.to_string()))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| data_err(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy)]
struct ClassTemplate {
    mean: f64,
    amplitude: f64,
    cycles: f64,
    phase: f64,
}

struct DomainStyle {
    offset: f64,
    gain: f64,
}

// Layout scales, in units of `shift`.
const GROUP_SPACING: f64 = 3.0;
const PAIR_OFFSET: f64 = 0.2;
const GAIN_SCALE: f64 = 0.03;

/// Seeded synthetic corpus.
///
/// Every class has a sinusoid template per sensor (mean level, amplitude,
/// frequency, phase). The last sensor is a reference channel whose template
/// is shared by all classes, so it carries no class information when there
/// is more than one sensor.
///
/// Domains come in consecutive pairs. Each pair sits at its own point on a
/// seeded line through sensor space, spaced `3 * shift` apart, and the two
/// members of a pair differ by `±0.2 * shift` on the reference channel. A
/// small per-domain amplitude gain is applied on top. Held-out domains
/// therefore have one close relative among the sources and others that
/// are far away. Segment ids run domain-major, then class, then sample.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let rng = HvRng::new(spec.seed, Stream::Synth);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let reference = spec.sensors - 1;

    let mut trng = rng.at(0);
    let mut templates: Vec<Vec<ClassTemplate>> = (0..spec.classes)
        .map(|_| {
            (0..spec.sensors)
                .map(|_| ClassTemplate {
                    mean: trng.random_range(-1.0..1.0),
                    amplitude: trng.random_range(0.5..1.5),
                    cycles: trng.random_range(1..=4) as f64,
                    phase: trng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        })
        .collect();
    if spec.sensors > 1 {
        let shared = templates[0][reference];
        for t in &mut templates[1..] {
            t[reference] = shared;
        }
    }

    let mut lrng = rng.at(1 << 33);
    let mut direction: Vec<f64> = (0..spec.sensors)
        .map(|_| std_normal.sample(&mut lrng))
        .collect();
    let norm = direction
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    direction.iter_mut().for_each(|x| *x /= norm);

    let groups = spec.domains.div_ceil(2) as f64;
    let styles: Vec<Vec<DomainStyle>> = (0..spec.domains)
        .map(|k| {
            let mut drng = rng.at(1 + k as u64);
            let position = (k / 2) as f64 - (groups - 1.0) / 2.0;
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            direction
                .iter()
                .enumerate()
                .map(|(s, dir)| {
                    let mut offset = spec.shift * GROUP_SPACING * position * dir;
                    if s == reference {
                        offset += spec.shift * PAIR_OFFSET * side;
                    }
                    let g: f64 = std_normal.sample(&mut drng);
                    DomainStyle {
                        offset,
                        gain: (spec.shift * GAIN_SCALE * g).exp(),
                    }
                })
                .collect()
        })
        .collect();

    let t_len = spec.timesteps as f64;
    let mut segments = Vec::with_capacity(spec.domains * spec.classes * spec.samples_per_class);
    let mut id = 0u64;
    for (k, style) in styles.iter().enumerate() {
        for (c, template) in templates.iter().enumerate() {
            for _ in 0..spec.samples_per_class {
                let mut srng = rng.at(1 << 32 | id);
                let values = template
                    .iter()
                    .zip(style)
                    .map(|(tp, st)| {
                        let jitter = srng.random_range(-0.3..0.3);
                        let amp = tp.amplitude * st.gain * srng.random_range(0.9..1.1);
                        (0..spec.timesteps)
                            .map(|t| {
                                let angle = std::f64::consts::TAU * tp.cycles * t as f64 / t_len
                                    + tp.phase
                                    + jitter;
                                let eps: f64 = std_normal.sample(&mut srng);
                                tp.mean + st.offset + amp * angle.sin() + spec.noise * eps
                            })
                            .collect()
                    })
                    .collect();
                segments.push(Segment {
                    id,
                    domain: k,
                    label: c,
                    values,
                });
                id += 1;
            }
        }
    }
    Corpus::new(format!("synthetic-shift{}", spec.shift), segments)
}
