//! Max-min fair multi-group multicast beamforming by Dinkelbach iterations
//! over a log-sum-exp smoothed minimum, each inner problem solved with
//! Riemannian conjugate gradient on the power sphere `sum_i ||v_i||^2 = P`.
//!
//! With `eta` the current min-SINR, user `k` served by message `c(k)` has
//!
//! ```text
//! F_k(v, eta) = ||H_k^H v_c||^2 - eta * (sum_{i != c} ||H_k^H v_i||^2 + 1)
//! f(v)        = mu * log sum_k exp(-F_k / mu)          (about -min_k F_k)
//! ```
//!
//! and the inner loop minimizes `f`, i.e. maximizes the smoothed minimum.
//! Gradients use the conjugate-cogradient convention `2 df/dv*`, which is the
//! real gradient over the stacked real and imaginary parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mrt_equal_power, round_sinrs, BeamformerSet, CVector};
use crate::channel::{ChannelSet, CMatrix, C64};
use crate::eic::RoundAction;
use crate::error::{Result, WeicError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Initial smoothing parameter, relative to the current `eta`.
    pub mu0: f64,
    /// Per-outer-iteration multiplier of `mu`.
    pub mu_decay: f64,
    pub mu_floor: f64,
    /// Relative Dinkelbach tolerance on `min_k F_k / eta`.
    pub eps_dinkelbach: f64,
    /// Riemannian gradient-norm tolerance of the inner loop.
    pub eps_grad: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub armijo_backtrack: f64,
    /// Starts besides MRT: one Gram-sum start, the rest random.
    pub extra_starts: usize,
    pub start_seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            mu0: 1.0,
            mu_decay: 0.3,
            mu_floor: 1e-4,
            eps_dinkelbach: 1e-4,
            eps_grad: 1e-6,
            max_outer: 30,
            max_inner: 200,
            armijo_c: 1e-4,
            armijo_backtrack: 0.5,
            extra_starts: 4,
            start_seed: 0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.mu_floor > 0.0
            && self.mu_decay > 0.0
            && self.mu_decay <= 1.0
            && self.eps_dinkelbach > 0.0
            && self.eps_grad > 0.0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.armijo_c > 0.0
            && self.armijo_c <= 0.5
            && self.armijo_backtrack > 0.0
            && self.armijo_backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(WeicError::InvalidConfig(format!("invalid solver parameters: {self:?}")))
        }
    }
}

/// One outer iteration of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer: usize,
    pub eta: f64,
    pub min_f: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtrcgSolution {
    pub beams: BeamformerSet,
    pub min_sinr: f64,
    /// `eta` at the start of every outer iteration.
    pub etas: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub max_iterations: bool,
}

/// Precomputed quadratic forms of one round.
struct Round {
    nt: usize,
    streams: usize,
    power: f64,
    /// `(own message, A_k = H_k H_k^H)` per served user.
    terms: Vec<(usize, CMatrix)>,
}

fn quad(a: &CMatrix, x: &CVector, offset: usize, nt: usize) -> f64 {
    let v = x.rows(offset, nt);
    (v.adjoint() * a * v)[(0, 0)].re
}

fn inner(a: &CVector, b: &CVector) -> f64 {
    a.dotc(b).re
}

impl Round {
    fn new(channels: &ChannelSet, sender: usize, action: &RoundAction, power: f64) -> Self {
        let terms = action
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.iter().map(move |&k| (i, k)))
            .map(|(i, k)| {
                let h = channels.link(sender, k);
                (i, h * h.adjoint())
            })
            .collect();
        Round {
            nt: channels.nt(),
            streams: action.num_streams(),
            power,
            terms,
        }
    }

    fn stack(&self, beams: &BeamformerSet) -> CVector {
        CVector::from_iterator(
            self.streams * self.nt,
            beams.vectors.iter().flat_map(|v| v.iter().copied()),
        )
    }

    fn unstack(&self, x: &CVector) -> BeamformerSet {
        BeamformerSet::new((0..self.streams).map(|i| x.rows(i * self.nt, self.nt).into_owned()).collect())
    }

    /// `(signal, interference)` per served user.
    fn powers(&self, x: &CVector) -> Vec<(f64, f64)> {
        self.terms
            .iter()
            .map(|(own, a)| {
                let mut sig = 0.0;
                let mut int = 0.0;
                for i in 0..self.streams {
                    let g = quad(a, x, i * self.nt, self.nt);
                    if i == *own {
                        sig = g;
                    } else {
                        int += g;
                    }
                }
                (sig, int)
            })
            .collect()
    }

    fn min_sinr(&self, x: &CVector) -> f64 {
        self.powers(x)
            .iter()
            .map(|(s, i)| s / (i + 1.0))
            .fold(f64::INFINITY, f64::min)
    }

    fn f_values(&self, x: &CVector, eta: f64) -> Vec<f64> {
        self.powers(x).iter().map(|(s, i)| s - eta * (i + 1.0)).collect()
    }

    /// `mu * LSE(-F / (scale * mu))` and its gradient.
    fn smoothed(&self, x: &CVector, eta: f64, mu: f64, scale: f64, want_grad: bool) -> (f64, Option<CVector>) {
        let f = self.f_values(x, eta);
        let a: Vec<f64> = f.iter().map(|fk| -fk / (scale * mu)).collect();
        let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|ak| (ak - top).exp()).collect();
        let total: f64 = e.iter().sum();
        let value = mu * (top + total.ln());
        if !want_grad {
            return (value, None);
        }
        let mut grad = CVector::zeros(x.len());
        for ((own, am), ek) in self.terms.iter().zip(&e) {
            let w = ek / total / scale;
            for i in 0..self.streams {
                let v = x.rows(i * self.nt, self.nt);
                let coef = if i == *own { -2.0 * w } else { 2.0 * eta * w };
                let g = am * v;
                let mut dst = grad.rows_mut(i * self.nt, self.nt);
                dst.axpy(C64::new(coef, 0.0), &g, C64::new(1.0, 0.0));
            }
        }
        (value, Some(grad))
    }

    fn project(&self, x: &CVector, g: &CVector) -> CVector {
        g - x.scale(inner(x, g) / self.power)
    }

    fn retract(&self, y: CVector) -> CVector {
        let n = y.norm();
        y.scale(self.power.sqrt() / n)
    }

    /// Riemannian conjugate gradient (Polak-Ribiere+, Armijo backtracking)
    /// on the smoothed objective. Returns the final point and gradient norm.
    fn minimize(&self, mut x: CVector, eta: f64, mu: f64, scale: f64, p: &SolverParams) -> (CVector, f64) {
        let eval = |x: &CVector| self.smoothed(x, eta, mu, scale, true);
        let (mut fx, g) = eval(&x);
        let mut rg = self.project(&x, &g.expect("gradient requested"));
        let mut d = -&rg;
        let mut step = 0.5 * self.power.sqrt() / rg.norm().max(f64::MIN_POSITIVE);
        for _ in 0..p.max_inner {
            let gnorm2 = rg.norm_squared();
            if gnorm2.sqrt() < p.eps_grad {
                break;
            }
            let mut slope = inner(&rg, &d);
            if slope >= 0.0 {
                d = -&rg;
                slope = -gnorm2;
            }
            let mut accepted = None;
            let mut t = step;
            for _ in 0..60 {
                let cand = self.retract(&x + d.scale(t));
                let (fc, _) = self.smoothed(&cand, eta, mu, scale, false);
                if fc <= fx + p.armijo_c * t * slope {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= p.armijo_backtrack;
            }
            let Some((xn, fnew)) = accepted else { break };
            let (_, gn) = eval(&xn);
            let rg_new = self.project(&xn, &gn.expect("gradient requested"));
            let d_t = self.project(&xn, &d);
            let rg_t = self.project(&xn, &rg);
            let beta = (inner(&rg_new, &(&rg_new - &rg_t)) / gnorm2).max(0.0);
            d = -&rg_new + d_t.scale(beta);
            let done = (fx - fnew).abs() <= 1e-15 * fx.abs().max(1.0);
            x = xn;
            fx = fnew;
            rg = rg_new;
            step = t * 2.0;
            if done {
                break;
            }
        }
        let gn = rg.norm();
        (x, gn)
    }
}

/// Log-sum-exp smoothed objective `mu * log sum_k exp(-F_k(v, eta) / mu)`.
pub fn smoothed_objective(
    channels: &ChannelSet,
    sender: usize,
    action: &RoundAction,
    beams: &BeamformerSet,
    eta: f64,
    mu: f64,
) -> f64 {
    let r = Round::new(channels, sender, action, beams.power());
    r.smoothed(&r.stack(beams), eta, mu, 1.0, false).0
}

/// Euclidean gradient (`2 df/dv*`) of [`smoothed_objective`], one vector per
/// beamformer.
pub fn smoothed_gradient(
    channels: &ChannelSet,
    sender: usize,
    action: &RoundAction,
    beams: &BeamformerSet,
    eta: f64,
    mu: f64,
) -> BeamformerSet {
    let r = Round::new(channels, sender, action, beams.power());
    let g = r.smoothed(&r.stack(beams), eta, mu, 1.0, true).1.expect("gradient requested");
    r.unstack(&g)
}

struct Run {
    x: CVector,
    min_sinr: f64,
    etas: Vec<f64>,
    trace: Vec<TraceRow>,
    converged: bool,
}

impl Round {
    /// Dinkelbach iterations from `x`; keeps the best iterate seen.
    fn dinkelbach(&self, mut x: CVector, params: &SolverParams) -> Run {
        let mut eta = self.min_sinr(&x);
        let mut best = (x.clone(), eta);
        let mut etas = Vec::new();
        let mut trace = Vec::new();
        let mut converged = false;
        for outer in 0..params.max_outer {
            etas.push(eta);
            let mu = (params.mu0 * params.mu_decay.powi(outer as i32)).max(params.mu_floor);
            let scale = eta.max(1e-12);
            let (xn, gnorm) = self.minimize(x, eta, mu, scale, params);
            x = xn;
            let sinr = self.min_sinr(&x);
            let min_f = self.f_values(&x, eta).into_iter().fold(f64::INFINITY, f64::min);
            trace.push(TraceRow {
                outer,
                eta,
                min_f,
                grad_norm: gnorm,
            });
            if sinr > best.1 {
                best = (x.clone(), sinr);
            }
            if mu <= params.mu_floor && (min_f / scale).abs() < params.eps_dinkelbach {
                converged = true;
                break;
            }
            eta = eta.max(sinr);
        }
        Run {
            x: best.0,
            min_sinr: best.1,
            etas,
            trace,
            converged,
        }
    }

    /// Per block, the dominant direction of the sum of trace-normalized
    /// `A_k` of its members; equal power.
    fn gram_start(&self) -> Option<CVector> {
        let mut sums = vec![CMatrix::zeros(self.nt, self.nt); self.streams];
        for (own, a) in &self.terms {
            let tr = a.trace().re;
            if tr <= 0.0 {
                return None;
            }
            sums[*own] += a.unscale(tr);
        }
        let share = (self.power / self.streams as f64).sqrt();
        let mut x = CVector::zeros(self.streams * self.nt);
        for (i, m) in sums.iter().enumerate() {
            let (u, _) = super::dominant_direction(m).ok()?;
            x.rows_mut(i * self.nt, self.nt).copy_from(&u.scale(share));
        }
        Some(x)
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> CVector {
        let y = CVector::from_fn(self.streams * self.nt, |_, _| {
            C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        self.retract(y)
    }
}

/// Solves the max-min SINR problem of one round. The first start is
/// per-message MRT toward the strongest member with equal power; the others
/// are the normalized Gram-sum direction and `extra_starts - 1` seeded random
/// points. The best run wins, so the result is never worse than MRT.
pub fn dtrcg_solve(
    channels: &ChannelSet,
    sender: usize,
    action: &RoundAction,
    power: f64,
    params: &SolverParams,
) -> Result<DtrcgSolution> {
    params.validate()?;
    if action.is_skip() {
        return Ok(DtrcgSolution {
            beams: BeamformerSet::empty(),
            min_sinr: f64::INFINITY,
            etas: Vec::new(),
            trace: Vec::new(),
            converged: true,
            max_iterations: false,
        });
    }
    let init = mrt_equal_power(channels, sender, action, power)?;
    let round = Round::new(channels, sender, action, power);
    let mut starts = vec![round.stack(&init)];
    if params.extra_starts > 0 {
        starts.extend(round.gram_start());
        let mut rng = ChaCha8Rng::seed_from_u64(params.start_seed);
        while starts.len() < 1 + params.extra_starts {
            starts.push(round.random_start(&mut rng));
        }
    }
    let mut best: Option<Run> = None;
    for x0 in starts {
        let run = round.dinkelbach(x0, params);
        if best.as_ref().is_none_or(|b| run.min_sinr > b.min_sinr) {
            best = Some(run);
        }
    }
    let run = best.expect("at least the MRT start");
    let beams = round.unstack(&run.x);
    // report through the shared evaluation path
    let min_sinr = round_sinrs(channels, sender, action, &beams)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(DtrcgSolution {
        beams,
        min_sinr,
        etas: run.etas,
        trace: run.trace,
        converged: run.converged,
        max_iterations: !run.converged,
    })
}

/// CSV rows `outer,eta,min_f,grad_norm` for convergence plots.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("outer,eta,min_f,grad_norm\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{}\n", r.outer, r.eta, r.min_f, r.grad_norm));
    }
    out
}
