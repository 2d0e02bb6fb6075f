use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{NeighborQuery, SupportIndex};
use crate::error::{Error, Result};
use crate::loopdetect::LoopSpec;
use crate::trace::StateTrace;

/// Offsets from `rho + lambda` at which loop-aligned curves are evaluated.
pub const RELATIVE_OFFSETS: [i64; 17] = [
    -32, -16, -10, -8, -6, -4, -2, 0, 2, 4, 6, 8, 10, 16, 32, 64, 128,
];

/// Number of time steps in an absolute-time curve.
pub const ABSOLUTE_STEP_COUNT: usize = 20;

/// Default neighborhood time window.
pub const DEFAULT_TIME_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    AbsoluteTime,
    RelativeToLoopStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: i64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation of neighbor counts per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurve {
    pub axis: Axis,
    pub points: Vec<CurvePoint>,
}

impl DeviationCurve {
    pub fn point(&self, step: i64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.step == step)
    }

    /// Writes `step,mean,std,n,strategy,mode` rows (with header).
    pub fn write_csv<W: Write>(&self, mut out: W, strategy: &str, mode: &str) -> std::io::Result<()> {
        writeln!(out, "step,mean,std,n,strategy,mode")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{},{strategy},{mode}", p.step, p.mean, p.std, p.n)?;
        }
        Ok(())
    }
}

/// Per-step samples, mergeable across folds before summarizing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepSamples {
    steps: Vec<i64>,
    samples: Vec<Vec<f64>>,
}

impl StepSamples {
    pub fn new(steps: &[i64]) -> Self {
        Self {
            steps: steps.to_vec(),
            samples: vec![Vec::new(); steps.len()],
        }
    }

    fn record(&mut self, slot: usize, value: f64) {
        self.samples[slot].push(value);
    }

    pub fn merge(&mut self, other: StepSamples) -> Result<()> {
        if self.steps != other.steps {
            return Err(Error::usage("cannot merge curves over different steps"));
        }
        for (dst, src) in self.samples.iter_mut().zip(other.samples) {
            dst.extend(src);
        }
        Ok(())
    }

    /// Steps with no samples are dropped.
    pub fn summarize(&self, axis: Axis) -> DeviationCurve {
        let points = self
            .steps
            .iter()
            .zip(&self.samples)
            .filter(|(_, s)| !s.is_empty())
            .map(|(&step, s)| {
                let n = s.len();
                let mean = s.iter().sum::<f64>() / n as f64;
                let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                CurvePoint {
                    step,
                    mean,
                    std: var.sqrt(),
                    n,
                }
            })
            .collect();
        DeviationCurve { axis, points }
    }
}

/// `count` evenly spaced steps from `first` to `last` inclusive, deduplicated.
pub fn evenly_spaced_steps(first: usize, last: usize, count: usize) -> Vec<i64> {
    if count == 0 || last < first {
        return Vec::new();
    }
    if count == 1 {
        return vec![first as i64];
    }
    let span = (last - first) as f64;
    let mut steps: Vec<i64> = (0..count)
        .map(|i| (first as f64 + span * i as f64 / (count - 1) as f64).round() as i64)
        .collect();
    steps.dedup();
    steps
}

/// Shared parameters of a neighbor-count evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountParams {
    pub layer: usize,
    pub radius: f64,
    pub time_window: usize,
}

fn count_at(index: &SupportIndex, trace: &StateTrace, t: usize, p: &CountParams) -> Result<usize> {
    let q = NeighborQuery::new(t, p.radius, p.time_window)?;
    index.count(trace.state(p.layer, t), &q)
}

fn check_layer(index: &SupportIndex, traces: &[&StateTrace], p: &CountParams) -> Result<()> {
    if index.layer() != p.layer {
        return Err(Error::usage(format!(
            "support index is for layer {}, curve requested for layer {}",
            index.layer(),
            p.layer
        )));
    }
    for tr in traces {
        if p.layer >= tr.num_layers() {
            return Err(Error::format(format!(
                "trace `{}` has no layer {}",
                tr.passage_id, p.layer
            )));
        }
    }
    Ok(())
}

/// Counts at fixed absolute time steps. Steps beyond a trace are skipped.
pub fn absolute_samples(
    index: &SupportIndex,
    traces: &[&StateTrace],
    steps: &[i64],
    p: &CountParams,
) -> Result<StepSamples> {
    check_layer(index, traces, p)?;
    let per_trace: Vec<Vec<Option<usize>>> = traces
        .par_iter()
        .map(|tr| {
            steps
                .iter()
                .map(|&s| {
                    if s >= 0 && (s as usize) < tr.num_steps() {
                        count_at(index, tr, s as usize, p).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = StepSamples::new(steps);
    for counts in per_trace {
        for (slot, c) in counts.into_iter().enumerate() {
            if let Some(c) = c {
                out.record(slot, c as f64);
            }
        }
    }
    Ok(out)
}

/// Counts at `rho + lambda + offset` of each trace. Traces without a loop
/// are skipped.
pub fn relative_samples(
    index: &SupportIndex,
    traces: &[&StateTrace],
    loops: &[Option<&LoopSpec>],
    offsets: &[i64],
    p: &CountParams,
) -> Result<StepSamples> {
    difference_samples_inner(index, traces, None, loops, offsets, p)
}

/// Per-pair differences `n(generated) - n(real)` at `rho + lambda + offset`
/// of the generated passage, where `real[i]` is the real continuation of the
/// condition that produced `generated[i]`.
pub fn difference_samples(
    index: &SupportIndex,
    generated: &[&StateTrace],
    real: &[&StateTrace],
    loops: &[Option<&LoopSpec>],
    offsets: &[i64],
    p: &CountParams,
) -> Result<StepSamples> {
    if real.len() != generated.len() {
        return Err(Error::usage(format!(
            "{} generated traces paired with {} real traces",
            generated.len(),
            real.len()
        )));
    }
    check_layer(index, real, p)?;
    difference_samples_inner(index, generated, Some(real), loops, offsets, p)
}

fn difference_samples_inner(
    index: &SupportIndex,
    traces: &[&StateTrace],
    baseline: Option<&[&StateTrace]>,
    loops: &[Option<&LoopSpec>],
    offsets: &[i64],
    p: &CountParams,
) -> Result<StepSamples> {
    if loops.len() != traces.len() {
        return Err(Error::usage(format!(
            "relative alignment needs one loop spec per trace ({} traces, {} specs)",
            traces.len(),
            loops.len()
        )));
    }
    check_layer(index, traces, p)?;
    let per_trace: Vec<Vec<Option<f64>>> = (0..traces.len())
        .into_par_iter()
        .map(|i| {
            let Some(spec) = loops[i] else {
                return Ok(vec![None; offsets.len()]);
            };
            let anchor = spec.repeat_start() as i64;
            offsets
                .iter()
                .map(|&off| {
                    let t = anchor + off;
                    let tr = traces[i];
                    let in_range = |x: &StateTrace| t >= 0 && (t as usize) < x.num_steps();
                    match baseline {
                        None if in_range(tr) => {
                            Ok(Some(count_at(index, tr, t as usize, p)? as f64))
                        }
                        Some(real) if in_range(tr) && in_range(real[i]) => {
                            let g = count_at(index, tr, t as usize, p)? as f64;
                            let r = count_at(index, real[i], t as usize, p)? as f64;
                            Ok(Some(g - r))
                        }
                        _ => Ok(None),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = StepSamples::new(offsets);
    for values in per_trace {
        for (slot, v) in values.into_iter().enumerate() {
            if let Some(v) = v {
                out.record(slot, v);
            }
        }
    }
    Ok(out)
}

/// How a [`deviation_curve`] places its evaluation steps.
#[derive(Debug, Clone, Copy)]
pub enum Alignment<'a> {
    /// The given absolute time steps.
    Absolute(&'a [i64]),
    /// Offsets from each trace's `rho + lambda`.
    Relative {
        loops: &'a [Option<&'a LoopSpec>],
        offsets: &'a [i64],
    },
}

pub fn deviation_curve(
    index: &SupportIndex,
    traces: &[&StateTrace],
    alignment: Alignment<'_>,
    p: &CountParams,
) -> Result<DeviationCurve> {
    match alignment {
        Alignment::Absolute(steps) => {
            Ok(absolute_samples(index, traces, steps, p)?.summarize(Axis::AbsoluteTime))
        }
        Alignment::Relative { loops, offsets } => Ok(relative_samples(
            index, traces, loops, offsets, p,
        )?
        .summarize(Axis::RelativeToLoopStart)),
    }
}
