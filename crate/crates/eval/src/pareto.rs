//! Exploration performance against planner compute: Pareto flags and
//! per-variant trends over N.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::Serialize;

use crate::stats::target_label;
use crate::EvalError;

/// One (variant, N) benchmark cell. `time` is the mean time to the target
/// coverage; lower is better on every axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub variant: String,
    pub n_samples: usize,
    pub time: f64,
    pub compute_per_step: f64,
    pub compute_per_episode: f64,
    pub pareto_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantTrend {
    pub variant: String,
    pub points: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Change in time from the smallest to the largest N.
    pub time_change: f64,
    pub compute_change: f64,
    /// Time never increases as N grows.
    pub time_nonincreasing: bool,
    /// Per-episode compute never decreases as N grows.
    pub compute_nondecreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParetoReport {
    pub points: Vec<ParetoPoint>,
    pub trends: Vec<VariantTrend>,
    /// Variants with at least one row lacking the target time.
    pub excluded: Vec<String>,
}

/// Benchmark row reduced to the Pareto axes; `time` is `None` when no
/// episode reached the target.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoInput {
    pub variant: String,
    pub n_samples: usize,
    pub time: Option<f64>,
    pub compute_per_step: f64,
    pub compute_per_episode: f64,
}

/// Reads the aggregate benchmark CSV, using the time column of `target`.
pub fn read_benchmark_csv<R: Read>(input: R, target: f64) -> Result<Vec<ParetoInput>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let time_col = format!("time_to_{}_mean", target_label(target));
    let idx: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        idx.get(name)
            .copied()
            .ok_or_else(|| EvalError::Config(format!("benchmark CSV lacks column {name}")))
    };
    let (v, n, t, cs, ce) = (
        col("variant")?,
        col("n_samples")?,
        col(&time_col)?,
        col("compute_per_step_mean")?,
        col("compute_per_episode_mean")?,
    );
    let num = |s: &str, name: &str| -> Result<f64, EvalError> {
        s.parse()
            .map_err(|_| EvalError::Config(format!("bad {name} value '{s}'")))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(ParetoInput {
            variant: rec[v].to_string(),
            n_samples: rec[n]
                .parse()
                .map_err(|_| EvalError::Config(format!("bad n_samples '{}'", &rec[n])))?,
            time: if rec[t].is_empty() {
                None
            } else {
                Some(num(&rec[t], &time_col)?)
            },
            compute_per_step: num(&rec[cs], "compute_per_step_mean")?,
            compute_per_episode: num(&rec[ce], "compute_per_episode_mean")?,
        });
    }
    Ok(out)
}

/// Flags points not dominated in (time, per-episode compute) and
/// summarises each variant's trend over N. Rows without a target time are
/// dropped with a warning.
pub fn pareto_report(rows: &[ParetoInput]) -> ParetoReport {
    let mut excluded = Vec::new();
    let mut points: Vec<ParetoPoint> = Vec::new();
    for r in rows {
        match r.time {
            Some(time) => points.push(ParetoPoint {
                variant: r.variant.clone(),
                n_samples: r.n_samples,
                time,
                compute_per_step: r.compute_per_step,
                compute_per_episode: r.compute_per_episode,
                pareto_optimal: true,
            }),
            None => {
                log::warn!(
                    "{} N={} never reached the target coverage; excluded",
                    r.variant,
                    r.n_samples
                );
                if !excluded.contains(&r.variant) {
                    excluded.push(r.variant.clone());
                }
            }
        }
    }
    let dominated: Vec<bool> = points
        .iter()
        .map(|p| {
            points.iter().any(|q| {
                q.time <= p.time
                    && q.compute_per_episode <= p.compute_per_episode
                    && (q.time < p.time || q.compute_per_episode < p.compute_per_episode)
            })
        })
        .collect();
    for (p, d) in points.iter_mut().zip(dominated) {
        p.pareto_optimal = !d;
    }

    let mut by_variant: BTreeMap<&str, Vec<&ParetoPoint>> = BTreeMap::new();
    for p in &points {
        by_variant.entry(&p.variant).or_default().push(p);
    }
    let trends = by_variant
        .into_iter()
        .map(|(name, mut ps)| {
            ps.sort_by_key(|p| p.n_samples);
            let (first, last) = (ps[0], ps[ps.len() - 1]);
            VariantTrend {
                variant: name.to_string(),
                points: ps.len(),
                n_min: first.n_samples,
                n_max: last.n_samples,
                time_change: last.time - first.time,
                compute_change: last.compute_per_episode - first.compute_per_episode,
                time_nonincreasing: ps.windows(2).all(|w| w[1].time <= w[0].time),
                compute_nondecreasing: ps
                    .windows(2)
                    .all(|w| w[1].compute_per_episode >= w[0].compute_per_episode),
            }
        })
        .collect();
    ParetoReport {
        points,
        trends,
        excluded,
    }
}

impl ParetoReport {
    pub fn write_points_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        if self.points.is_empty() {
            w.write_record([
                "variant",
                "n_samples",
                "time",
                "compute_per_step",
                "compute_per_episode",
                "pareto_optimal",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trends_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.trends {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }
}
