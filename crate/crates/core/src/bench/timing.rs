use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::physics::{physics_loss, residual, LienardParams, LwrParams, PhysicsSpec, ResidualInputs};
use crate::physics::EquationKind;
use crate::temporal_graph::Topology;

use super::{BenchError, Result};

/// Default probe sizes. Below a few hundred nodes the fixed per-pair tape
/// cost rivals the O(N) work and flattens the fitted slope.
pub const DEFAULT_TIMING_NODES: [usize; 3] = [400, 800, 1600];
pub const DEFAULT_TIMING_STEPS: [usize; 3] = [50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub nodes: usize,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub equation: EquationKind,
    pub points: Vec<TimingPoint>,
    /// Least-squares slope of `ln seconds` against `ln(N·T)`.
    pub slope: f64,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn spec_for(equation: EquationKind) -> PhysicsSpec {
    match equation {
        EquationKind::Lienard => PhysicsSpec::lienard(LienardParams::default(), 1.0),
        EquationKind::Lwr => PhysicsSpec::lwr(LwrParams { v_max: 1.0, p_max: 1.0 }, 1.0),
    }
    .expect("fixed parameters are valid")
}

/// Forward-only physics loss over the `T − 2` consecutive pairs of a random
/// series on an `N`-node ring.
fn run_once(spec: &PhysicsSpec, topo: &Topology, series: &[Vec<f64>]) -> f64 {
    let graph = topo.context();
    let mut acc = 0.0;
    for w in series.windows(3) {
        let tape = Tape::new();
        let inputs = ResidualInputs {
            x_t: &w[0],
            pred_next: tape.column(&w[1]),
            pred_after: tape.column(&w[2]),
            graph,
        };
        let loss = residual(spec, &inputs).and_then(physics_loss).expect("shapes agree");
        acc += loss.item();
    }
    acc
}

/// Times the physics loss on every `(N, T)` combination, keeping the fastest
/// of `repeats` runs, and fits the log-log slope against `N·T`.
pub fn timing_probe(
    nodes: &[usize],
    steps: &[usize],
    equation: EquationKind,
    repeats: usize,
) -> Result<TimingReport> {
    if nodes.len() < 3 || steps.len() < 3 {
        return Err(BenchError::Invalid("timing needs at least 3 sizes per axis".into()));
    }
    if nodes.iter().any(|&n| n < 3) || steps.iter().any(|&t| t < 3) {
        return Err(BenchError::Invalid("sizes must be at least 3".into()));
    }
    let spec = spec_for(equation);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut points = Vec::new();
    for &n in nodes {
        let topo = Topology::new(n, false, (0..n).map(|i| (i, (i + 1) % n)).collect(), None)
            .expect("ring is valid");
        topo.context();
        for &t in steps {
            let series: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..n).map(|_| rng.random_range(0.05..0.45)).collect())
                .collect();
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                std::hint::black_box(run_once(&spec, &topo, std::hint::black_box(&series)));
                best = best.min(start.elapsed().as_secs_f64());
            }
            points.push(TimingPoint {
                nodes: n,
                steps: t,
                seconds: best,
            });
        }
    }
    let x: Vec<f64> = points.iter().map(|p| ((p.nodes * p.steps) as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.seconds.max(1e-12).ln()).collect();
    Ok(TimingReport {
        equation,
        slope: fit_slope(&x, &y),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| (3.0 * v).ln()).collect();
        assert!((fit_slope(&x, &y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn needs_three_sizes() {
        assert!(timing_probe(&[10, 20], &[10, 20, 30], EquationKind::Lwr, 1).is_err());
    }

    #[test]
    fn produces_grid_of_points() {
        let r = timing_probe(&[5, 6, 7], &[5, 6, 7], EquationKind::Lienard, 1).unwrap();
        assert_eq!(r.points.len(), 9);
        assert!(r.slope.is_finite());
    }
}
