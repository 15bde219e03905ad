//! Multi-sensor time-series encoding.
//!
//! Each reading is mapped to a level hypervector by linear interpolation
//! between two per-sensor anchors, `H_min` and `H_max`, using the sensor's
//! value range observed in training data. A window of `n` consecutive
//! levels is bound together after shifting the oldest level `n-1` times,
//! the next `n-2` times and so on, so the result depends on temporal order.
//! Windows slide with stride 1 over the segment and are bundled into one
//! per-sensor vector `H_i`; sensors are fused as `sum_i G_i * H_i` with a
//! random bipolar signature `G_i` per sensor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};
use crate::hv::{bind, permute, HvRng, Hypervector, Stream};

/// Default n-gram (window) size.
pub const DEFAULT_NGRAM: usize = 3;

/// One classification sample: `values[sensor][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u64,
    pub domain: usize,
    pub label: usize,
    pub values: Vec<Vec<f64>>,
}

impl Segment {
    pub fn sensors(&self) -> usize {
        self.values.len()
    }

    pub fn timesteps(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// An encoded segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub hv: Hypervector,
    pub domain: usize,
    pub label: usize,
}

/// Anchors, signature and fitted value range of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorCode {
    pub h_min: Hypervector,
    pub h_max: Hypervector,
    pub signature: Hypervector,
    pub y_min: f64,
    pub y_max: f64,
}

impl SensorCode {
    /// Interpolation weight of `y`, clamped to `[0, 1]`. A degenerate range
    /// maps everything to `H_min`.
    pub fn level_weight(&self, y: f64) -> f64 {
        let span = self.y_max - self.y_min;
        if span > 0.0 {
            ((y - self.y_min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Serialisable encoder state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram: usize,
    pub seed: u64,
    pub sensors: Vec<SensorCode>,
}

/// Fitted encoder. Holds the config plus pre-shifted anchor tables used by
/// the batch encoding path.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    // per sensor, per window position k: permute(H_min, n-1-k) and
    // permute(H_max - H_min, n-1-k)
    shifted: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg
    }
}

/// Fits per-sensor value ranges on the training segments and draws anchors
/// and signatures from `seed`.
pub fn fit_encoder<'a, I>(train: I, dim: usize, ngram: usize, seed: u64) -> Result<Encoder>
where
    I: IntoIterator<Item = &'a Segment>,
{
    if dim == 0 {
        return Err(HdError::InvalidDimension(dim));
    }
    if ngram == 0 {
        return Err(HdError::InvalidConfig(
            "n-gram size must be at least 1".into(),
        ));
    }
    let mut ranges: Vec<(f64, f64)> = Vec::new();
    let mut any = false;
    for seg in train {
        if !any {
            if seg.sensors() == 0 {
                return Err(HdError::Empty("segment without sensors"));
            }
            ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); seg.sensors()];
            any = true;
        } else if seg.sensors() != ranges.len() {
            return Err(HdError::SensorCount {
                got: seg.sensors(),
                expected: ranges.len(),
            });
        }
        for (range, series) in ranges.iter_mut().zip(&seg.values) {
            for &y in series {
                range.0 = range.0.min(y);
                range.1 = range.1.max(y);
            }
        }
    }
    if !any {
        return Err(HdError::Empty("training segments"));
    }

    let mins = HvRng::new(seed, Stream::AnchorMin);
    let maxs = HvRng::new(seed, Stream::AnchorMax);
    let sigs = HvRng::new(seed, Stream::Signature);
    let sensors = ranges
        .into_iter()
        .enumerate()
        .map(|(i, (y_min, y_max))| {
            let i = i as u64;
            // a sensor with no readings at all gets a degenerate range
            let (y_min, y_max) = if y_min <= y_max {
                (y_min, y_max)
            } else {
                (0.0, 0.0)
            };
            Ok(SensorCode {
                h_min: mins.bipolar(i, dim)?,
                h_max: maxs.bipolar(i, dim)?,
                signature: sigs.bipolar(i, dim)?,
                y_min,
                y_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Encoder::from_config(EncoderConfig {
        dim,
        ngram,
        seed,
        sensors,
    })
}

impl Encoder {
    /// Rebuilds an encoder from stored config, validating shapes.
    pub fn from_config(cfg: EncoderConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(HdError::InvalidDimension(0));
        }
        if cfg.ngram == 0 {
            return Err(HdError::InvalidConfig(
                "n-gram size must be at least 1".into(),
            ));
        }
        if cfg.sensors.is_empty() {
            return Err(HdError::Empty("encoder sensors"));
        }
        for s in &cfg.sensors {
            for v in [&s.h_min, &s.h_max, &s.signature] {
                if v.dim() != cfg.dim {
                    return Err(HdError::DimensionMismatch {
                        left: v.dim(),
                        right: cfg.dim,
                    });
                }
            }
            if !(s.y_min.is_finite() && s.y_max.is_finite()) || s.y_min > s.y_max {
                return Err(HdError::InvalidConfig(format!(
                    "bad sensor range ({}, {})",
                    s.y_min, s.y_max
                )));
            }
        }
        let n = cfg.ngram;
        let shifted = cfg
            .sensors
            .iter()
            .map(|s| {
                let delta: Vec<f64> = s
                    .h_max
                    .as_slice()
                    .iter()
                    .zip(s.h_min.as_slice())
                    .map(|(hi, lo)| hi - lo)
                    .collect();
                let delta = Hypervector::from_vec_unchecked(delta);
                (0..n)
                    .map(|k| {
                        let shift = n - 1 - k;
                        (
                            permute(&s.h_min, shift).into_vec(),
                            permute(&delta, shift).into_vec(),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self { cfg, shifted })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn into_config(self) -> EncoderConfig {
        self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn ngram(&self) -> usize {
        self.cfg.ngram
    }

    pub fn sensors(&self) -> usize {
        self.cfg.sensors.len()
    }

    fn sensor(&self, sensor: usize) -> Result<&SensorCode> {
        self.cfg.sensors.get(sensor).ok_or(HdError::UnknownSensor {
            sensor,
            sensors: self.cfg.sensors.len(),
        })
    }

    /// Level hypervector `H_min + w (H_max - H_min)` for reading `y`.
    pub fn quantize_level(&self, y: f64, sensor: usize) -> Result<Hypervector> {
        let code = self.sensor(sensor)?;
        let w = code.level_weight(y);
        Ok(Hypervector::from_vec_unchecked(
            code.h_min
                .as_slice()
                .iter()
                .zip(code.h_max.as_slice())
                .map(|(lo, hi)| lo + w * (hi - lo))
                .collect(),
        ))
    }

    /// Binds one n-gram of levels (oldest first) into a window vector.
    pub fn encode_sensor_window(&self, levels: &[Hypervector]) -> Result<Hypervector> {
        if levels.len() != self.cfg.ngram {
            return Err(HdError::WindowLength {
                got: levels.len(),
                expected: self.cfg.ngram,
            });
        }
        ngram_bind(levels)
    }

    /// Encodes one segment.
    pub fn encode_segment(&self, seg: &Segment) -> Result<EncodedSample> {
        self.check_segment(seg)?;
        let d = self.cfg.dim;
        let n = self.cfg.ngram;
        let windows = seg.timesteps() - n + 1;
        let mut out = vec![0.0f64; d];
        let mut sensor_acc = vec![0.0f64; d];
        let mut prod = vec![0.0f64; d];
        let mut weights = Vec::with_capacity(seg.timesteps());

        for (i, series) in seg.values.iter().enumerate() {
            let code = &self.cfg.sensors[i];
            weights.clear();
            weights.extend(series.iter().map(|&y| code.level_weight(y)));
            sensor_acc.iter_mut().for_each(|v| *v = 0.0);
            let table = &self.shifted[i];

            for start in 0..windows {
                let (lo, delta) = &table[0];
                let w = weights[start];
                for ((p, l), dl) in prod.iter_mut().zip(lo).zip(delta) {
                    *p = l + w * dl;
                }
                for (k, (lo, delta)) in table.iter().enumerate().skip(1) {
                    let w = weights[start + k];
                    for ((p, l), dl) in prod.iter_mut().zip(lo).zip(delta) {
                        *p *= l + w * dl;
                    }
                }
                for (a, p) in sensor_acc.iter_mut().zip(&prod) {
                    *a += p;
                }
            }

            for ((o, g), h) in out
                .iter_mut()
                .zip(code.signature.as_slice())
                .zip(&sensor_acc)
            {
                *o += g * h;
            }
        }

        Ok(EncodedSample {
            hv: Hypervector::from_vec_unchecked(out),
            domain: seg.domain,
            label: seg.label,
        })
    }

    /// Encodes a batch in parallel. Output order follows input order and
    /// every vector is computed by a single thread, so results do not
    /// depend on the worker count.
    pub fn encode_batch<S>(&self, segs: &[S]) -> Result<Vec<EncodedSample>>
    where
        S: std::borrow::Borrow<Segment> + Sync,
    {
        segs.par_iter()
            .map(|s| self.encode_segment(s.borrow()))
            .collect()
    }

    fn check_segment(&self, seg: &Segment) -> Result<()> {
        if seg.sensors() != self.sensors() {
            return Err(HdError::SensorCount {
                got: seg.sensors(),
                expected: self.sensors(),
            });
        }
        let t = seg.timesteps();
        if seg.values.iter().any(|s| s.len() != t) {
            return Err(HdError::RaggedSegment(seg.id));
        }
        if t < self.cfg.ngram {
            return Err(HdError::SegmentTooShort {
                segment: seg.id,
                timesteps: t,
                ngram: self.cfg.ngram,
            });
        }
        Ok(())
    }
}

/// `bind_k permute(levels[k], n-1-k)` for any nonempty window.
pub fn ngram_bind(levels: &[Hypervector]) -> Result<Hypervector> {
    let n = levels.len();
    let (first, rest) = levels
        .split_first()
        .ok_or(HdError::Empty("n-gram window"))?;
    let mut acc = permute(first, n - 1);
    for (k, level) in rest.iter().enumerate() {
        acc = bind(&acc, &permute(level, n - 2 - k))?;
    }
    Ok(acc)
}
