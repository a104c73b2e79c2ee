//! Angle-encoded variational circuits and their parameter-shift Jacobians.
//!
//! A circuit is `RY(x_q)` on every qubit, followed by `depth` ansatz layers.
//! Each layer is a rotation block then a CNOT entangling block. Outputs are
//! the per-qubit expectation values in the configured basis.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::statevector::{Basis, Gate, StateVector, MAX_QUBITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnsatzKind {
    /// One RX per qubit per layer.
    Basic,
    /// RX, RZ, RX per qubit per layer.
    Expressive,
}

impl AnsatzKind {
    pub fn rotations_per_qubit(self) -> usize {
        match self {
            AnsatzKind::Basic => 1,
            AnsatzKind::Expressive => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Entanglement {
    /// CNOT(i → i+1) for i = 0..n−2.
    Linear,
    /// Linear plus CNOT(n−1 → 0) when n ≥ 3.
    #[default]
    Circular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub ansatz: AnsatzKind,
    pub depth: usize,
    pub basis: Basis,
    pub entanglement: Entanglement,
}

impl CircuitSpec {
    pub fn new(
        n_qubits: usize,
        ansatz: AnsatzKind,
        depth: usize,
        basis: Basis,
        entanglement: Entanglement,
    ) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::InvalidArgument(format!(
                "circuit needs 1..={MAX_QUBITS} qubits, got {n_qubits}"
            )));
        }
        if depth == 0 {
            return Err(Error::InvalidArgument("ansatz depth must be at least 1".into()));
        }
        Ok(Self {
            n_qubits,
            ansatz,
            depth,
            basis,
            entanglement,
        })
    }

    /// `n·l` for Basic, `3n·l` for Expressive.
    pub fn param_count(&self) -> usize {
        self.ansatz.rotations_per_qubit() * self.n_qubits * self.depth
    }

    /// Cumulative circuit depth as quoted for hardware feasibility:
    /// `1 + (1 + n)·l` (Basic) and `1 + 3n·l` (Expressive).
    ///
    /// These are reported formulas, not a count derived from [`Self::gates`].
    pub fn report_depth(&self) -> usize {
        let (n, l) = (self.n_qubits, self.depth);
        match self.ansatz {
            AnsatzKind::Basic => 1 + (1 + n) * l,
            AnsatzKind::Expressive => 1 + 3 * n * l,
        }
    }

    fn entanglers(&self) -> impl Iterator<Item = Gate> + '_ {
        let n = self.n_qubits;
        let wrap = self.entanglement == Entanglement::Circular && n >= 3;
        (0..n.saturating_sub(1))
            .map(|i| Gate::Cnot { control: i, target: i + 1 })
            .chain(wrap.then_some(Gate::Cnot { control: n - 1, target: 0 }))
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        check_len("circuit input", self.n_qubits, input.len())?;
        check_len("circuit parameters", self.param_count(), params.len())
    }

    /// Full gate list: encoding, then `depth` × (rotations, entanglers).
    ///
    /// Parameter layout is layer-major, then qubit, then rotation slot.
    pub fn gates(&self, params: &[f64], input: &[f64]) -> Result<Vec<Gate>> {
        self.check(params, input)?;
        let n = self.n_qubits;
        let per_qubit = self.ansatz.rotations_per_qubit();
        let mut gates = Vec::with_capacity(n + self.depth * (per_qubit * n + n));
        gates.extend(
            input
                .iter()
                .enumerate()
                .map(|(target, &angle)| Gate::Ry { target, angle }),
        );
        for layer in params.chunks_exact(per_qubit * n) {
            for (target, slots) in layer.chunks_exact(per_qubit).enumerate() {
                match self.ansatz {
                    AnsatzKind::Basic => gates.push(Gate::Rx { target, angle: slots[0] }),
                    AnsatzKind::Expressive => gates.extend([
                        Gate::Rx { target, angle: slots[0] },
                        Gate::Rz { target, angle: slots[1] },
                        Gate::Rx { target, angle: slots[2] },
                    ]),
                }
            }
            gates.extend(self.entanglers());
        }
        Ok(gates)
    }
}

/// Runs the circuit from `|0…0⟩` and returns the per-qubit expectations.
pub fn evaluate(spec: &CircuitSpec, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let gates = spec.gates(params, input)?;
    let mut state = StateVector::zero(spec.n_qubits)?;
    state.apply_all(&gates)?;
    Ok(state.measure_all(spec.basis))
}

fn shifted_difference(
    spec: &CircuitSpec,
    params: &[f64],
    input: &[f64],
    index: usize,
    shift_params: bool,
) -> Result<Vec<f64>> {
    let run = |delta: f64| {
        let (mut p, mut x) = (params.to_vec(), input.to_vec());
        if shift_params {
            p[index] += delta;
        } else {
            x[index] += delta;
        }
        evaluate(spec, &p, &x)
    };
    let plus = run(FRAC_PI_2)?;
    let minus = run(-FRAC_PI_2)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| 0.5 * (a - b)).collect())
}

fn shift_jacobian(spec: &CircuitSpec, params: &[f64], input: &[f64], wrt_params: bool) -> Result<Matrix> {
    spec.check(params, input)?;
    let cols = if wrt_params { params.len() } else { input.len() };
    let columns = (0..cols)
        .into_par_iter()
        .map(|j| shifted_difference(spec, params, input, j, wrt_params))
        .collect::<Result<Vec<_>>>()?;
    let mut jac = Matrix::zeros(spec.n_qubits, cols);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    Ok(jac)
}

/// `∂f_i/∂θ_j = ½[f_i(θ_j + π/2) − f_i(θ_j − π/2)]`, shape outputs × params.
pub fn param_shift_grad(spec: &CircuitSpec, params: &[f64], input: &[f64]) -> Result<Matrix> {
    shift_jacobian(spec, params, input, true)
}

/// Same rule applied to the RY encoding angles, shape outputs × inputs.
pub fn input_shift_grad(spec: &CircuitSpec, params: &[f64], input: &[f64]) -> Result<Matrix> {
    shift_jacobian(spec, params, input, false)
}
