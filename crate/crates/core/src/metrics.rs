//! Head/eye trace metrics: gaze decomposition, search-area middle, ROC.

use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize, Serializer};

/// Nominal trace sampling interval (10 Hz).
pub const SAMPLE_INTERVAL_S: f64 = 0.1;
/// Intervals longer than this multiple of the nominal one are gaps.
pub const GAP_FACTOR: f64 = 1.5;

/// Published SAM cut-offs, kept for reference. The two gaze-ray values have
/// no stated unit and are not comparable with the degrees computed here.
pub mod reference_cutoffs {
    pub const GAZE_RAY_P2: f64 = 0.00585;
    pub const GAZE_RAY_P3: f64 = 0.0218;
    pub const HEAD_P3_DEG: f64 = 7.4;
    pub const EYE_T2_DEG: f64 = 3.96;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("sample {index}: missing {channel}")]
    IncompleteTrace { index: usize, channel: &'static str },
    #[error("sample {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("ROC needs at least one positive and one negative label")]
    SingleClass,
    #[error("parse error: {0}")]
    Parse(String),
}

/// One tracked sample. Yaw is positive to the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_s: f64,
    pub head_yaw_deg: f64,
    pub head_pitch_deg: f64,
    pub eye_yaw_deg: f64,
    pub eye_pitch_deg: f64,
    pub gaze_yaw_deg: f64,
    pub gaze_pitch_deg: f64,
}

/// A sample as read from disk, where any channel may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialSample {
    pub t_s: f64,
    pub head_yaw_deg: Option<f64>,
    pub head_pitch_deg: Option<f64>,
    pub eye_yaw_deg: Option<f64>,
    pub eye_pitch_deg: Option<f64>,
    pub gaze_yaw_deg: Option<f64>,
    pub gaze_pitch_deg: Option<f64>,
}

impl From<TraceSample> for PartialSample {
    fn from(s: TraceSample) -> Self {
        Self {
            t_s: s.t_s,
            head_yaw_deg: Some(s.head_yaw_deg),
            head_pitch_deg: Some(s.head_pitch_deg),
            eye_yaw_deg: Some(s.eye_yaw_deg),
            eye_pitch_deg: Some(s.eye_pitch_deg),
            gaze_yaw_deg: Some(s.gaze_yaw_deg),
            gaze_pitch_deg: Some(s.gaze_pitch_deg),
        }
    }
}

fn need(v: Option<f64>, index: usize, channel: &'static str) -> Result<f64, MetricsError> {
    v.ok_or(MetricsError::IncompleteTrace { index, channel })
}

/// Fills the eye channels as gaze minus head.
pub fn decompose_gaze(trace: &[PartialSample]) -> Result<Vec<TraceSample>, MetricsError> {
    trace
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let head_yaw = need(s.head_yaw_deg, i, "head_yaw_deg")?;
            let head_pitch = need(s.head_pitch_deg, i, "head_pitch_deg")?;
            let gaze_yaw = need(s.gaze_yaw_deg, i, "gaze_yaw_deg")?;
            let gaze_pitch = need(s.gaze_pitch_deg, i, "gaze_pitch_deg")?;
            Ok(TraceSample {
                t_s: s.t_s,
                head_yaw_deg: head_yaw,
                head_pitch_deg: head_pitch,
                eye_yaw_deg: gaze_yaw - head_yaw,
                eye_pitch_deg: gaze_pitch - head_pitch,
                gaze_yaw_deg: gaze_yaw,
                gaze_pitch_deg: gaze_pitch,
            })
        })
        .collect()
}

/// Fills the gaze channels as head plus eye.
pub fn compose_gaze(trace: &[TraceSample]) -> Vec<TraceSample> {
    trace
        .iter()
        .map(|s| TraceSample { gaze_yaw_deg: s.head_yaw_deg + s.eye_yaw_deg, gaze_pitch_deg: s.head_pitch_deg + s.eye_pitch_deg, ..*s })
        .collect()
}

/// Turns a partially filled trace into a complete one.
///
/// Complete samples pass through; otherwise eye or gaze is derived from the
/// other two channels.
pub fn complete_trace(trace: &[PartialSample]) -> Result<Vec<TraceSample>, MetricsError> {
    trace
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let head_yaw = need(s.head_yaw_deg, i, "head_yaw_deg")?;
            let head_pitch = need(s.head_pitch_deg, i, "head_pitch_deg")?;
            let (eye_yaw, gaze_yaw) = pair(s.eye_yaw_deg, s.gaze_yaw_deg, head_yaw, i, "eye_yaw_deg")?;
            let (eye_pitch, gaze_pitch) = pair(s.eye_pitch_deg, s.gaze_pitch_deg, head_pitch, i, "eye_pitch_deg")?;
            Ok(TraceSample {
                t_s: s.t_s,
                head_yaw_deg: head_yaw,
                head_pitch_deg: head_pitch,
                eye_yaw_deg: eye_yaw,
                eye_pitch_deg: eye_pitch,
                gaze_yaw_deg: gaze_yaw,
                gaze_pitch_deg: gaze_pitch,
            })
        })
        .collect()
}

fn pair(eye: Option<f64>, gaze: Option<f64>, head: f64, index: usize, channel: &'static str) -> Result<(f64, f64), MetricsError> {
    match (eye, gaze) {
        (Some(e), Some(g)) => Ok((e, g)),
        (None, Some(g)) => Ok((g - head, g)),
        (Some(e), None) => Ok((e, head + e)),
        (None, None) => Err(MetricsError::IncompleteTrace { index, channel }),
    }
}

/// A sampling interval longer than expected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Index of the sample that ends the gap.
    pub index: usize,
    pub dt_s: f64,
}

pub fn find_gaps(trace: &[TraceSample]) -> Vec<Gap> {
    trace
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let dt = w[1].t_s - w[0].t_s;
            (dt > GAP_FACTOR * SAMPLE_INTERVAL_S).then_some(Gap { index: i + 1, dt_s: dt })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSam {
    pub max_left_deg: f64,
    pub max_right_deg: f64,
    pub sam_deg: f64,
}

impl ChannelSam {
    fn from_yaws(yaws: impl Iterator<Item = f64>) -> Self {
        let (lo, hi) = yaws.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self { max_left_deg: lo, max_right_deg: hi, sam_deg: lo + hi }
    }
}

/// Search-area middle per channel; positive means a rightward bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamReport {
    pub gaze_ray: ChannelSam,
    pub head: ChannelSam,
    pub eye: ChannelSam,
}

impl SamReport {
    /// Head SAM at or above the published extrapersonal cut-off.
    pub fn head_flags_neglect(&self) -> bool {
        self.head.sam_deg >= reference_cutoffs::HEAD_P3_DEG
    }

    /// Eye SAM at or above the published cut-off.
    pub fn eye_flags_neglect(&self) -> bool {
        self.eye.sam_deg >= reference_cutoffs::EYE_T2_DEG
    }
}

pub fn compute_sam(trace: &[TraceSample]) -> Result<SamReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if let Some(index) = trace.iter().position(|s| ![s.head_yaw_deg, s.eye_yaw_deg, s.gaze_yaw_deg].iter().all(|v| v.is_finite())) {
        return Err(MetricsError::NonFinite { index });
    }
    Ok(SamReport {
        gaze_ray: ChannelSam::from_yaws(trace.iter().map(|s| s.gaze_yaw_deg)),
        head: ChannelSam::from_yaws(trace.iter().map(|s| s.head_yaw_deg)),
        eye: ChannelSam::from_yaws(trace.iter().map(|s| s.eye_yaw_deg)),
    })
}

pub fn read_trace_csv(reader: impl Read) -> Result<Vec<PartialSample>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(|e| MetricsError::Parse(e.to_string()))).collect()
}

pub fn read_trace_jsonl(reader: impl BufRead) -> Result<Vec<PartialSample>, MetricsError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MetricsError::Parse(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending, from +inf to -inf. A subject is called positive when its
    /// score is at or above the threshold.
    #[serde(serialize_with = "ser_thresholds", deserialize_with = "de_thresholds")]
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
    /// Threshold maximizing Youden's J; the lower one wins ties.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub cutoff: f64,
    pub youden_j: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Threshold {
    Num(f64),
    Text(String),
}

fn to_threshold(v: f64) -> Threshold {
    if v == f64::INFINITY {
        Threshold::Text("inf".into())
    } else if v == f64::NEG_INFINITY {
        Threshold::Text("-inf".into())
    } else {
        Threshold::Num(v)
    }
}

fn from_threshold<E: serde::de::Error>(t: Threshold) -> Result<f64, E> {
    match t {
        Threshold::Num(v) => Ok(v),
        Threshold::Text(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(E::custom(format!("bad threshold {s:?}"))),
        },
    }
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_threshold(*v).serialize(s)
}

fn ser_thresholds<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| to_threshold(x)))
}

fn de_threshold<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_threshold(Threshold::deserialize(d)?)
}

fn de_thresholds<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Vec::<Threshold>::deserialize(d)?.into_iter().map(from_threshold).collect()
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite { index });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let (mut tpr, mut fpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        // Admit every sample tied at this score together.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(if i < order.len() { 0.5 * (s + scores[order[i]]) } else { f64::NEG_INFINITY });
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
    }

    let auc = (1..tpr.len()).map(|k| (fpr[k] - fpr[k - 1]) * 0.5 * (tpr[k] + tpr[k - 1])).sum();
    let mut best = 0;
    for k in 1..thresholds.len() {
        if tpr[k] - fpr[k] >= tpr[best] - fpr[best] {
            best = k;
        }
    }
    Ok(RocCurve { cutoff: thresholds[best], youden_j: tpr[best] - fpr[best], thresholds, tpr, fpr, auc })
}

/// Reads `score,label` rows; labels are `1`/`0` or `true`/`false`.
pub fn read_scores_csv(reader: impl Read) -> Result<(Vec<f64>, Vec<bool>), MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, row) in rdr.deserialize::<(f64, String)>().enumerate() {
        let (score, label) = row.map_err(|e| MetricsError::Parse(e.to_string()))?;
        let label = match label.to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(MetricsError::Parse(format!("row {}: bad label {other:?}", n + 1))),
        };
        scores.push(score);
        labels.push(label);
    }
    Ok((scores, labels))
}
