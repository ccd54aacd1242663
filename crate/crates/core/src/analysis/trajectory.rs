use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::util::{euclidean, median};
use crate::{Error, Result};

/// Embeddings of one run, one per generation, starting at generation 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    pub run_id: String,
    points: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(method: impl Into<String>, run_id: impl Into<String>, points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Argument("trajectory is empty".into()));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Argument("trajectory points must share a positive dimension".into()));
        }
        Ok(Self {
            method: method.into(),
            run_id: run_id.into(),
            points,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distances between consecutive points.
    pub fn step_distances(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| euclidean(&w[0], &w[1])).collect()
    }

    fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| euclidean(p, &self.points[0]))
    }
}

/// Largest distance from the starting point.
pub fn exploration_radius(trajectory: &Trajectory) -> f64 {
    trajectory.radii().fold(0.0, f64::max)
}

/// Fraction of generations after the first whose nearest earlier point is closer
/// than the trajectory's median step distance.
pub fn return_rate(trajectory: &Trajectory) -> Result<f64> {
    if trajectory.len() < 3 {
        return Err(Error::Argument("return rate needs at least 3 points".into()));
    }
    let threshold = median(&trajectory.step_distances()).expect("non-empty steps");
    return_rate_with_threshold(trajectory, threshold)
}

/// Return rate against an explicit threshold (strict comparison).
pub fn return_rate_with_threshold(trajectory: &Trajectory, threshold: f64) -> Result<f64> {
    let points = trajectory.points();
    if points.len() < 2 {
        return Err(Error::Argument("return rate needs at least 2 points".into()));
    }
    let returns = (1..points.len())
        .filter(|&t| {
            let nearest = points[..t]
                .iter()
                .map(|p| euclidean(p, &points[t]))
                .fold(f64::INFINITY, f64::min);
            nearest < threshold
        })
        .count();
    Ok(returns as f64 / (points.len() - 1) as f64)
}

/// First generation whose distance from the start reaches 95% of the exploration
/// radius.
pub fn saturation_generation(trajectory: &Trajectory) -> Result<usize> {
    if trajectory.len() < 2 {
        return Err(Error::Argument("saturation needs at least 2 points".into()));
    }
    let target = 0.95 * exploration_radius(trajectory);
    Ok(trajectory
        .radii()
        .enumerate()
        .skip(1)
        .find(|&(_, r)| r >= target)
        .map(|(t, _)| t)
        .expect("the maximum radius reaches its own 95%"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub exploration_radius: f64,
    pub return_rate: f64,
    pub saturation_generation: usize,
    pub return_threshold: f64,
}

/// How return thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Median step distance of each trajectory.
    #[default]
    PerTrajectory,
    /// Median step distance pooled over all trajectories of a method.
    PerMethod,
}

/// Pooled median step distance per method.
pub fn pooled_thresholds(trajectories: &[Trajectory]) -> BTreeMap<String, f64> {
    let mut steps: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in trajectories {
        steps.entry(t.method.clone()).or_default().extend(t.step_distances());
    }
    steps
        .into_iter()
        .filter_map(|(m, d)| median(&d).map(|v| (m, v)))
        .collect()
}

pub fn trajectory_metrics(trajectory: &Trajectory, threshold: Option<f64>) -> Result<TrajectoryMetrics> {
    if trajectory.len() < 3 {
        return Err(Error::Argument(format!(
            "trajectory {} has {} points; metrics need at least 3",
            trajectory.run_id,
            trajectory.len()
        )));
    }
    let threshold = match threshold {
        Some(t) => t,
        None => median(&trajectory.step_distances()).expect("non-empty steps"),
    };
    Ok(TrajectoryMetrics {
        exploration_radius: exploration_radius(trajectory),
        return_rate: return_rate_with_threshold(trajectory, threshold)?,
        saturation_generation: saturation_generation(trajectory)?,
        return_threshold: threshold,
    })
}

/// Metrics for a batch of trajectories, in input order.
pub fn analyze_trajectories(trajectories: &[Trajectory], mode: ThresholdMode) -> Result<Vec<TrajectoryMetrics>> {
    let pooled = match mode {
        ThresholdMode::PerMethod => Some(pooled_thresholds(trajectories)),
        ThresholdMode::PerTrajectory => None,
    };
    trajectories
        .iter()
        .map(|t| {
            let threshold = pooled.as_ref().and_then(|p| p.get(&t.method).copied());
            trajectory_metrics(t, threshold)
        })
        .collect()
}
