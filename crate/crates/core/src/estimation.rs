//! Twin evolution by parameter estimation: a bounded Nelder-Mead simplex
//! minimizing the sum of squared errors between measured traces and a
//! re-simulation of the twin.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bus::{topics, EventBus};
use crate::error::{Error, Result};
use crate::metrics::resample;
use crate::plant::{simulate, CraneParams, ParamName, SimulationOptions};
use crate::trace::{Quantity, RunId, TraceSet};
use crate::trajectory::{initial_state_of, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Stop once every vertex cost is within `f_tol` of the best...
    pub f_tol: f64,
    /// ...and every vertex is within `x_tol` of the best (max norm).
    pub x_tol: f64,
    /// Defaults to 200 for one parameter and 2000 otherwise.
    pub max_iter: Option<usize>,
    /// Per-dimension `(lo, hi)`; points are projected into the box before
    /// they are evaluated.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            f_tol: 1e-9,
            x_tol: 1e-6,
            max_iter: None,
            bounds: None,
        }
    }
}

impl NelderMeadOptions {
    pub fn iteration_budget(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(if dim == 1 { 200 } else { 2000 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Messages of cost evaluations that failed and were treated as +inf.
    pub failed_evaluations: Vec<String>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Evaluator<'a, F> {
    cost: F,
    bounds: Option<&'a [(f64, f64)]>,
    evaluations: usize,
    failures: Vec<String>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Evaluator<'_, F> {
    fn project(&self, mut x: Vec<f64>) -> Vec<f64> {
        if let Some(bounds) = self.bounds {
            for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
                *v = v.clamp(*lo, *hi);
            }
        }
        x
    }

    fn eval(&mut self, x: Vec<f64>) -> (Vec<f64>, f64) {
        let x = self.project(x);
        self.evaluations += 1;
        let f = match (self.cost)(&x) {
            Ok(f) if f.is_finite() => f,
            Ok(f) => {
                self.failures.push(format!("non-finite cost {f} at {x:?}"));
                f64::INFINITY
            }
            Err(e) => {
                self.failures.push(format!("{e} at {x:?}"));
                f64::INFINITY
            }
        };
        (x, f)
    }
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t * (a - b)
    a.iter().zip(b).map(|(a, b)| a + t * (a - b)).collect()
}

/// Minimizes `cost` from `x0` with the standard simplex moves
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
pub fn nelder_mead<F>(cost: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<NelderMeadOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::Initialization("nothing to optimize".into()));
    }
    if !(opts.f_tol >= 0.0 && opts.x_tol >= 0.0) {
        return Err(Error::Config("tolerances must be non-negative".into()));
    }
    if let Some(b) = &opts.bounds {
        if b.len() != n || b.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Config("bounds must give lo <= hi for every dimension".into()));
        }
    }
    let mut ev = Evaluator {
        cost,
        bounds: opts.bounds.as_deref(),
        evaluations: 0,
        failures: Vec::new(),
    };

    let (start, f_start) = ev.eval(x0.to_vec());
    if !f_start.is_finite() {
        return Err(Error::Initialization(
            ev.failures.pop().unwrap_or_else(|| "non-finite cost at the initial guess".into()),
        ));
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f_start)];
    for i in 0..n {
        let mut x = start.clone();
        x[i] = if x[i] != 0.0 { x[i] * 1.05 } else { 1e-4 };
        simplex.push(ev.eval(x));
    }

    let budget = opts.iteration_budget(n);
    let mut iterations = 0;
    let converged = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let f_spread = simplex[1..].iter().map(|(_, f)| (f - best.1).abs()).fold(0.0, f64::max);
        if x_spread <= opts.x_tol && f_spread <= opts.f_tol {
            break true;
        }
        if iterations >= budget {
            break false;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let (xr, fr) = ev.eval(affine(&centroid, &worst.0, REFLECT));

        if fr < simplex[0].1 {
            let (xe, fe) = ev.eval(affine(&centroid, &worst.0, REFLECT * EXPAND));
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let accepted = if fr < worst.1 {
            let (xc, fc) = ev.eval(affine(&centroid, &worst.0, CONTRACT * REFLECT));
            (fc <= fr).then_some((xc, fc))
        } else {
            let (xcc, fcc) = ev.eval(affine(&centroid, &worst.0, -CONTRACT));
            (fcc < worst.1).then_some((xcc, fcc))
        };
        match accepted {
            Some(v) => simplex[n] = v,
            None => {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, v)| a + SHRINK * (v - a)).collect();
                    *vertex = ev.eval(x);
                }
            }
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, cost) = simplex.swap_remove(0);
    Ok(NelderMeadOutcome {
        x,
        cost,
        initial_cost: f_start,
        iterations,
        evaluations: ev.evaluations,
        converged,
        failed_evaluations: ev.failures,
    })
}

/// What an estimation needs from one run: the input it followed and what was
/// measured while following it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationData {
    pub run_id: RunId,
    pub trajectory: Trajectory,
    pub measured: TraceSet,
}

/// Sum over `quantities` of squared residuals between the measured traces and
/// one noise-free twin simulation started from the first measured sample.
pub fn sse_cost(
    candidate: &CraneParams,
    data: &EstimationData,
    quantities: &[Quantity],
    opts: &SimulationOptions,
) -> Result<f64> {
    let initial = initial_state_of(&data.measured)?;
    let sim = simulate(&initial, &data.trajectory, candidate, opts)
        .map_err(|e| Error::CostEvaluation(e.to_string()))?;
    let mut total = 0.0;
    for &q in quantities {
        let measured = data.measured.require(q)?;
        let predicted = resample(sim.require(q)?, &measured.times)?;
        total += predicted
            .values
            .iter()
            .zip(&measured.values)
            .map(|(p, m)| (p - m) * (p - m))
            .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "fraction")]
pub enum InitialGuessPolicy {
    /// Start from the top speed of the reference trajectory.
    ReferenceMax,
    /// Start from a fraction of the reference top speed.
    FractionOfReference(f64),
    /// Skip estimation and read the largest measured speed. Not an estimator;
    /// kept for comparison.
    MeasuredMaxPassthrough,
}

impl InitialGuessPolicy {
    pub fn label(&self) -> String {
        match self {
            InitialGuessPolicy::ReferenceMax => "reference_max".into(),
            InitialGuessPolicy::FractionOfReference(f) => format!("fraction_of_reference({f})"),
            InitialGuessPolicy::MeasuredMaxPassthrough => "measured_max_passthrough".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationProblem {
    pub run_id: RunId,
    pub free_params: Vec<ParamName>,
    pub initial_guess: Vec<f64>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub quantities: Vec<Quantity>,
}

impl EstimationProblem {
    /// Single-parameter top-speed problem with the initial guess set by `policy`.
    pub fn v_max(data: &EstimationData, policy: InitialGuessPolicy) -> Result<Self> {
        let reference = data.trajectory.peak_speed();
        let guess = match policy {
            InitialGuessPolicy::ReferenceMax => reference,
            InitialGuessPolicy::FractionOfReference(f) => {
                if !(f > 0.0) {
                    return Err(Error::Config(format!("initial-guess fraction {f} must be positive")));
                }
                f * reference
            }
            InitialGuessPolicy::MeasuredMaxPassthrough => measured_peak_speed(data)?,
        };
        Ok(EstimationProblem {
            run_id: data.run_id,
            free_params: vec![ParamName::VMax],
            initial_guess: vec![guess],
            bounds: Some(vec![(1e-6, f64::INFINITY)]),
            quantities: vec![Quantity::Position, Quantity::Velocity],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.free_params.is_empty() || self.free_params.len() != self.initial_guess.len() {
            return Err(Error::Config("one initial guess per free parameter is required".into()));
        }
        if self.quantities.is_empty() {
            return Err(Error::Config("the cost needs at least one quantity".into()));
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.initial_guess.len()
                || b.iter().zip(&self.initial_guess).any(|((lo, hi), g)| !(lo <= g && g <= hi))
            {
                return Err(Error::Config("initial guess must lie within the bounds".into()));
            }
        }
        Ok(())
    }

    fn apply(&self, base: &CraneParams, x: &[f64]) -> CraneParams {
        let mut p = *base;
        for (name, v) in self.free_params.iter().zip(x) {
            p.set(*name, *v);
        }
        p
    }
}

fn measured_peak_speed(data: &EstimationData) -> Result<f64> {
    Ok(data
        .measured
        .require(Quantity::Velocity)?
        .values
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub param: ParamName,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub run_id: RunId,
    pub estimate: Vec<ParamEstimate>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_guess_policy: InitialGuessPolicy,
    pub initial_guess: Vec<f64>,
    /// The twin parameters with the estimate applied.
    pub proposed: CraneParams,
}

impl EstimationResult {
    pub fn value(&self, param: ParamName) -> Option<f64> {
        self.estimate.iter().find(|e| e.param == param).map(|e| e.new)
    }
}

/// Fits the problem's free parameters to the run. A converged fit is
/// announced on `twin.params_updated` when a bus is given.
pub fn estimate_parameters(
    data: &EstimationData,
    twin_params: &CraneParams,
    problem: &EstimationProblem,
    policy: InitialGuessPolicy,
    nm: &NelderMeadOptions,
    sim: &SimulationOptions,
    bus: Option<&EventBus>,
) -> Result<EstimationResult> {
    problem.validate()?;
    if policy == InitialGuessPolicy::MeasuredMaxPassthrough {
        return measured_max_passthrough(data, twin_params, sim);
    }
    let opts = NelderMeadOptions {
        bounds: problem.bounds.clone().or_else(|| nm.bounds.clone()),
        ..nm.clone()
    };
    let outcome = nelder_mead(
        |x| {
            let candidate = problem.apply(twin_params, x);
            candidate.validate().map_err(|e| Error::CostEvaluation(e.to_string()))?;
            sse_cost(&candidate, data, &problem.quantities, sim)
        },
        &problem.initial_guess,
        &opts,
    )?;
    let proposed = problem.apply(twin_params, &outcome.x);
    let estimate: Vec<ParamEstimate> = problem
        .free_params
        .iter()
        .zip(&outcome.x)
        .map(|(&param, &new)| ParamEstimate {
            param,
            old: twin_params.get(param),
            new,
        })
        .collect();
    let result = EstimationResult {
        run_id: data.run_id,
        estimate,
        cost: outcome.cost,
        initial_cost: outcome.initial_cost,
        iterations: outcome.iterations,
        converged: outcome.converged,
        initial_guess_policy: policy,
        initial_guess: problem.initial_guess.clone(),
        proposed,
    };
    if let (true, Some(bus)) = (result.converged, bus) {
        publish_update(bus, &result)?;
    }
    Ok(result)
}

pub fn publish_update(bus: &EventBus, result: &EstimationResult) -> Result<()> {
    for e in &result.estimate {
        bus.publish(
            topics::PARAMS_UPDATED,
            json!({
                "run_id": result.run_id,
                "param": e.param.field_name(),
                "old": e.old,
                "new": e.new,
                "cost": result.cost,
                "iterations": result.iterations,
            }),
        )?;
    }
    Ok(())
}

/// Reads the top speed straight from the measurements.
pub fn measured_max_passthrough(
    data: &EstimationData,
    twin_params: &CraneParams,
    sim: &SimulationOptions,
) -> Result<EstimationResult> {
    let peak = measured_peak_speed(data)?;
    let mut proposed = *twin_params;
    proposed.v_max_mps = peak;
    let quantities = [Quantity::Position, Quantity::Velocity];
    let cost = sse_cost(&proposed, data, &quantities, sim)?;
    Ok(EstimationResult {
        run_id: data.run_id,
        estimate: vec![ParamEstimate {
            param: ParamName::VMax,
            old: twin_params.v_max_mps,
            new: peak,
        }],
        cost,
        initial_cost: cost,
        iterations: 0,
        converged: true,
        initial_guess_policy: InitialGuessPolicy::MeasuredMaxPassthrough,
        initial_guess: vec![peak],
        proposed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_minimum() {
        let out = nelder_mead(|x| Ok((x[0] - 3.0).powi(2)), &[0.0], &NelderMeadOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() < 1e-5, "{:?}", out.x);
        assert!(out.iterations <= 200);
    }

    #[test]
    fn constant_cost_stays_put() {
        let out = nelder_mead(|_| Ok(7.0), &[1.5], &NelderMeadOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.x, vec![1.5]);
        assert_eq!(out.cost, out.initial_cost);
    }

    #[test]
    fn rosenbrock() {
        let rosen = |x: &[f64]| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let opts = NelderMeadOptions {
            max_iter: Some(2000),
            ..NelderMeadOptions::default()
        };
        let out = nelder_mead(rosen, &[-1.2, 1.0], &opts).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-3 && (out.x[1] - 1.0).abs() < 1e-3, "{:?}", out.x);
    }

    #[test]
    fn bad_start_is_an_initialization_error() {
        let r = nelder_mead(|_| Ok(f64::NAN), &[1.0], &NelderMeadOptions::default());
        assert!(matches!(r, Err(Error::Initialization(_))));
        let r = nelder_mead(|_| Err(Error::domain("boom")), &[1.0], &NelderMeadOptions::default());
        assert!(matches!(r, Err(Error::Initialization(_))));
        assert!(nelder_mead(|_| Ok(0.0), &[], &NelderMeadOptions::default()).is_err());
    }

    #[test]
    fn failing_region_is_treated_as_infinite() {
        let cost = |x: &[f64]| {
            if x[0] > 2.0 {
                Err(Error::domain("outside model validity"))
            } else {
                Ok((x[0] - 1.9).powi(2))
            }
        };
        let out = nelder_mead(cost, &[1.0], &NelderMeadOptions::default()).unwrap();
        assert!((out.x[0] - 1.9).abs() < 1e-4);
        assert!(!out.failed_evaluations.is_empty());
    }

    #[test]
    fn projection_keeps_points_in_bounds() {
        let opts = NelderMeadOptions {
            bounds: Some(vec![(0.5, 10.0)]),
            ..NelderMeadOptions::default()
        };
        let out = nelder_mead(|x| Ok((x[0] + 1.0).powi(2)), &[2.0], &opts).unwrap();
        assert_eq!(out.x, vec![0.5]);
    }
}
