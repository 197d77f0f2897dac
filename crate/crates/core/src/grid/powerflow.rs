//! Newton-Raphson power flow in polar coordinates.
//!
//! Node layout: buses `0..n`, then the Thevenin source node `n` (slack,
//! fixed `E∠0`), then an optional fault node splitting one line.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 50;
/// Convergence threshold on the largest power mismatch (pu).
pub const TOLERANCE: f64 = 1e-11;
/// Largest Newton correction applied in one iteration.
const MAX_STEP: f64 = 0.3;

/// Nodal admittance of one network topology.
#[derive(Clone, Debug)]
pub(crate) struct Network {
    n_bus: usize,
    n_nodes: usize,
    g: Vec<f64>,
    b: Vec<f64>,
    emf: f64,
    /// Line endpoints of the faulted line, used to seed the fault node.
    fault_ends: Option<(usize, usize)>,
}

/// Per-bus load: `P = scale * (constant + coef * V^exponent)`, `Q = q_ratio * P`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Demand<'a> {
    pub constant: &'a [f64],
    pub coef: &'a [f64],
    pub exponent: &'a [f64],
    pub scale: &'a [f64],
    pub q_ratio: &'a [f64],
}

impl Demand<'_> {
    #[inline]
    fn eval(&self, i: usize, v: f64) -> (f64, f64) {
        let e = self.exponent[i];
        let (pow, dpow) = if e == 0.0 {
            (1.0, 0.0)
        } else if e == 2.0 {
            (v * v, 2.0 * v)
        } else {
            let p = v.powf(e);
            (p, e * p / v)
        };
        let s = self.scale[i];
        (
            s * (self.constant[i] + self.coef[i] * pow),
            s * self.coef[i] * dpow,
        )
    }
}

/// A converged operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSolution {
    /// Voltage magnitude per bus (pu).
    pub voltages: Vec<f64>,
    /// Voltage angle per bus (rad), relative to the source.
    pub angles: Vec<f64>,
    pub iterations: usize,
    /// Largest absolute power mismatch at the accepted point.
    pub residual: f64,
    /// Fault node state, when the fault topology was solved.
    pub(crate) extra: Option<(f64, f64)>,
}

pub(crate) struct LineRef {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

impl Network {
    /// `shunts[i]` is the shunt susceptance at bus `i`. `fault` splits line
    /// `fault.0` at its midpoint with a conductance `fault.1` to ground.
    pub fn new(
        n_bus: usize,
        lines: &[LineRef],
        shunts: &[f64],
        source_bus: usize,
        emf: f64,
        source_x: f64,
        fault: Option<(usize, f64)>,
    ) -> Self {
        let n_nodes = n_bus + 1 + usize::from(fault.is_some());
        let mut g = vec![0.0; n_nodes * n_nodes];
        let mut b = vec![0.0; n_nodes * n_nodes];
        let mut add_branch = |i: usize, j: usize, x: f64| {
            let y = -1.0 / x;
            b[i * n_nodes + i] += y;
            b[j * n_nodes + j] += y;
            b[i * n_nodes + j] -= y;
            b[j * n_nodes + i] -= y;
        };
        add_branch(source_bus, n_bus, source_x);
        let mut fault_ends = None;
        for (k, l) in lines.iter().enumerate() {
            match fault {
                Some((fl, _)) if fl == k => {
                    let m = n_bus + 1;
                    add_branch(l.from, m, l.x / 2.0);
                    add_branch(m, l.to, l.x / 2.0);
                    fault_ends = Some((l.from, l.to));
                }
                _ => add_branch(l.from, l.to, l.x),
            }
        }
        for (i, s) in shunts.iter().enumerate() {
            b[i * n_nodes + i] += s;
        }
        if let Some((_, conductance)) = fault {
            let m = n_bus + 1;
            g[m * n_nodes + m] += conductance;
        }
        Network {
            n_bus,
            n_nodes,
            g,
            b,
            emf,
            fault_ends,
        }
    }

    fn slack(&self) -> usize {
        self.n_bus
    }

    /// Solves the power-balance equations. `guess` warm-starts the iteration
    /// (it must come from the same topology); otherwise a flat start is used.
    pub fn solve(&self, demand: &Demand<'_>, guess: Option<&NetworkSolution>) -> Result<NetworkSolution> {
        let n = self.n_nodes;
        let slack = self.slack();
        let mut v = vec![1.0; n];
        let mut th = vec![0.0; n];
        v[slack] = self.emf;
        match guess {
            Some(s) => {
                v[..self.n_bus].copy_from_slice(&s.voltages);
                th[..self.n_bus].copy_from_slice(&s.angles);
                if n > self.n_bus + 1 {
                    let (vm, tm) = s.extra.unwrap_or_else(|| self.fault_seed(&v, &th));
                    v[n - 1] = vm;
                    th[n - 1] = tm;
                }
            }
            None => {
                if n > self.n_bus + 1 {
                    v[n - 1] = 1.0;
                }
            }
        }
        // Unknown ordering: angles of non-slack nodes, then magnitudes.
        let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let m = pq.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut mismatch = DVector::<f64>::zeros(2 * m);
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);

        for iter in 0..=MAX_ITERATIONS {
            self.injections(&v, &th, &mut p, &mut q);
            let mut worst = 0.0_f64;
            let mut dpd = vec![0.0; n];
            for (r, &i) in pq.iter().enumerate() {
                let (pd, dp) = if i < self.n_bus {
                    demand.eval(i, v[i])
                } else {
                    (0.0, 0.0)
                };
                let qr = if i < self.n_bus { demand.q_ratio[i] } else { 0.0 };
                mismatch[r] = p[i] + pd;
                mismatch[m + r] = q[i] + qr * pd;
                dpd[i] = dp;
                worst = worst.max(mismatch[r].abs()).max(mismatch[m + r].abs());
            }
            if !worst.is_finite() {
                break;
            }
            if worst < TOLERANCE {
                let extra = (n > self.n_bus + 1).then(|| (v[n - 1], th[n - 1]));
                return Ok(NetworkSolution {
                    voltages: v[..self.n_bus].to_vec(),
                    angles: th[..self.n_bus].to_vec(),
                    iterations: iter,
                    residual: worst,
                    extra,
                });
            }
            if iter == MAX_ITERATIONS {
                break;
            }
            self.jacobian(&v, &th, &p, &q, &pq, &dpd, demand, &mut jac);
            let Some(step) = jac.clone().lu().solve(&(-&mismatch)) else {
                break;
            };
            let largest = step.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
            if !largest.is_finite() {
                break;
            }
            let damp = if largest > MAX_STEP {
                MAX_STEP / largest
            } else {
                1.0
            };
            for (r, &i) in pq.iter().enumerate() {
                th[i] += damp * step[r];
                v[i] += damp * step[m + r];
            }
            if pq.iter().any(|&i| v[i].is_nan() || v[i] <= 1e-3) {
                break;
            }
        }
        Err(Error::Collapse {
            iterations: MAX_ITERATIONS,
        })
    }

    fn fault_seed(&self, v: &[f64], th: &[f64]) -> (f64, f64) {
        match self.fault_ends {
            Some((a, b)) => ((v[a] + v[b]) / 2.0, (th[a] + th[b]) / 2.0),
            None => (1.0, 0.0),
        }
    }

    fn injections(&self, v: &[f64], th: &[f64], p: &mut [f64], q: &mut [f64]) {
        let n = self.n_nodes;
        for i in 0..n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for k in 0..n {
                let gik = self.g[i * n + k];
                let bik = self.b[i * n + k];
                if gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let (s, c) = (th[i] - th[k]).sin_cos();
                pi += v[k] * (gik * c + bik * s);
                qi += v[k] * (gik * s - bik * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn jacobian(
        &self,
        v: &[f64],
        th: &[f64],
        p: &[f64],
        q: &[f64],
        pq: &[usize],
        dpd: &[f64],
        demand: &Demand<'_>,
        jac: &mut DMatrix<f64>,
    ) {
        let n = self.n_nodes;
        let m = pq.len();
        jac.fill(0.0);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let gik = self.g[i * n + k];
                let bik = self.b[i * n + k];
                if i == k {
                    jac[(r, c)] = -q[i] - bik * v[i] * v[i];
                    jac[(r, m + c)] = p[i] / v[i] + gik * v[i];
                    jac[(m + r, c)] = p[i] - gik * v[i] * v[i];
                    jac[(m + r, m + c)] = q[i] / v[i] - bik * v[i];
                } else {
                    if gik == 0.0 && bik == 0.0 {
                        continue;
                    }
                    let (s, co) = (th[i] - th[k]).sin_cos();
                    let a = gik * co + bik * s;
                    let bb = gik * s - bik * co;
                    jac[(r, c)] = v[i] * v[k] * bb;
                    jac[(r, m + c)] = v[i] * a;
                    jac[(m + r, c)] = -v[i] * v[k] * a;
                    jac[(m + r, m + c)] = v[i] * bb;
                }
            }
            if i < self.n_bus {
                jac[(r, m + r)] += dpd[i];
                jac[(m + r, m + r)] += demand.q_ratio[i] * dpd[i];
            }
        }
    }
}
