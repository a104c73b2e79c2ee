#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use qldm_core::statevector::{Gate, StateVector};
use rand::Rng;

pub type CMatrix = Vec<Vec<Complex64>>;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub const MNIST_IMAGES: &str = "mnist-5k-images-idx3-ubyte.gz";
pub const MNIST_LABELS: &str = "mnist-5k-labels-idx1-ubyte.gz";

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn identity(n: usize) -> CMatrix {
    (0..n)
        .map(|i| (0..n).map(|j| c(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
        .collect()
}

fn add(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Textbook single-qubit matrices, written out independently of the simulator.
fn single(gate: &Gate) -> CMatrix {
    match *gate {
        Gate::Rx { angle, .. } => {
            let (s, co) = (angle / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
        }
        Gate::Ry { angle, .. } => {
            let (s, co) = (angle / 2.0).sin_cos();
            vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]]
        }
        Gate::Rz { angle, .. } => {
            let h = angle / 2.0;
            vec![
                vec![Complex64::from_polar(1.0, -h), c(0.0, 0.0)],
                vec![c(0.0, 0.0), Complex64::from_polar(1.0, h)],
            ]
        }
        Gate::Cnot { .. } => unreachable!(),
    }
}

/// `ops[q]` acts on qubit `q`; qubit 0 is the least significant index bit,
/// so it is the rightmost Kronecker factor.
fn kron_chain(ops: &[CMatrix]) -> CMatrix {
    ops.iter().rev().fold(identity(1), |acc, m| kron(&acc, m))
}

/// Full `2^n × 2^n` unitary of one gate.
pub fn gate_unitary(gate: &Gate, n: usize) -> CMatrix {
    match *gate {
        Gate::Cnot { control, target } => {
            let p0 = vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]];
            let p1 = vec![vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]];
            let x = vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]];
            let term = |ctrl: &CMatrix, tgt: &CMatrix| {
                let ops: Vec<CMatrix> = (0..n)
                    .map(|q| {
                        if q == control {
                            ctrl.clone()
                        } else if q == target {
                            tgt.clone()
                        } else {
                            identity(2)
                        }
                    })
                    .collect();
                kron_chain(&ops)
            };
            add(&term(&p0, &identity(2)), &term(&p1, &x))
        }
        _ => {
            let t = gate.target();
            let ops: Vec<CMatrix> = (0..n).map(|q| if q == t { single(gate) } else { identity(2) }).collect();
            kron_chain(&ops)
        }
    }
}

pub fn matvec(m: &CMatrix, v: &[Complex64]) -> Vec<Complex64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn random_gate<R: Rng>(rng: &mut R, n: usize) -> Gate {
    let target = rng.random_range(0..n);
    let angle = rng.random_range(-2.0 * std::f64::consts::PI..2.0 * std::f64::consts::PI);
    match rng.random_range(0..if n > 1 { 4 } else { 3 }) {
        0 => Gate::Rx { target, angle },
        1 => Gate::Ry { target, angle },
        2 => Gate::Rz { target, angle },
        _ => {
            let mut control = rng.random_range(0..n - 1);
            if control >= target {
                control += 1;
            }
            Gate::Cnot { control, target }
        }
    }
}

pub fn random_state<R: Rng>(rng: &mut R, n: usize) -> StateVector {
    let amps = (0..1usize << n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect::<Vec<_>>();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).unwrap()
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Central finite-difference Jacobian of `f` at `x`, returned row-major as
/// `outputs × inputs`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    fd_jacobian(|p| vec![f(p)], x, h).remove(0)
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(floor, f64::max);
    diff / scale
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}
