//! Dense statevector simulation for small registers.
//!
//! Qubit `q` corresponds to bit `q` of the amplitude index (little-endian), so
//! `|q1 q0⟩ = |10⟩` is amplitude index 2.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rx { target: usize, angle: f64 },
    Ry { target: usize, angle: f64 },
    Rz { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn target(&self) -> usize {
        match *self {
            Gate::Rx { target, .. }
            | Gate::Ry { target, .. }
            | Gate::Rz { target, .. }
            | Gate::Cnot { target, .. } => target,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx { angle, .. } | Gate::Ry { angle, .. } | Gate::Rz { angle, .. } => Some(angle),
            Gate::Cnot { .. } => None,
        }
    }

    /// 2×2 unitary of a rotation gate as `[[u00, u01], [u10, u11]]`.
    pub fn rotation_matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        let half = |a: f64| ((a / 2.0).cos(), (a / 2.0).sin());
        match *self {
            Gate::Rx { angle, .. } => {
                let (c, s) = half(angle);
                let c = Complex64::new(c, 0.0);
                let mis = Complex64::new(0.0, -s);
                Some([[c, mis], [mis, c]])
            }
            Gate::Ry { angle, .. } => {
                let (c, s) = half(angle);
                Some([
                    [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                    [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                ])
            }
            Gate::Rz { angle, .. } => {
                let (c, s) = half(angle);
                Some([
                    [Complex64::new(c, -s), Complex64::new(0.0, 0.0)],
                    [Complex64::new(0.0, 0.0), Complex64::new(c, s)],
                ])
            }
            Gate::Cnot { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observable {
    pub basis: Basis,
    pub qubit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_register(n_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    /// Wraps raw amplitudes. The vector is not normalised, which lets callers
    /// probe linearity on unnormalised inputs.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "amplitude count {len} is not a power of two"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_register(n_qubits)?;
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q < self.n_qubits {
            Ok(())
        } else {
            Err(Error::QubitOutOfRange {
                index: q,
                n_qubits: self.n_qubits,
            })
        }
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        self.check_qubit(gate.target())?;
        match *gate {
            Gate::Cnot { control, target } => {
                self.check_qubit(control)?;
                if control == target {
                    return Err(Error::InvalidArgument(format!(
                        "CNOT control and target are both qubit {target}"
                    )));
                }
                self.apply_cnot(control, target);
            }
            Gate::Rz { target, angle } => self.apply_rz(target, angle),
            _ => {
                let u = gate.rotation_matrix().expect("rotation gate");
                self.apply_single(gate.target(), &u);
            }
        }
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        for g in gates {
            self.apply(g)?;
        }
        Ok(())
    }

    fn apply_single(&mut self, target: usize, u: &[[Complex64; 2]; 2]) {
        let stride = 1usize << target;
        for block in self.amplitudes.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = u[0][0] * x0 + u[0][1] * x1;
                *a1 = u[1][0] * x0 + u[1][1] * x1;
            }
        }
    }

    fn apply_rz(&mut self, target: usize, angle: f64) {
        let (s, c) = (angle / 2.0).sin_cos();
        let phase0 = Complex64::new(c, -s);
        let phase1 = Complex64::new(c, s);
        let mask = 1usize << target;
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            *a *= if i & mask == 0 { phase0 } else { phase1 };
        }
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let (cmask, tmask) = (1usize << control, 1usize << target);
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
    }

    /// `⟨ψ|O|ψ⟩` for a single-qubit Pauli observable.
    pub fn expectation(&self, obs: Observable) -> Result<f64> {
        self.check_qubit(obs.qubit)?;
        let mask = 1usize << obs.qubit;
        Ok(match obs.basis {
            Basis::Z => self
                .amplitudes
                .iter()
                .enumerate()
                .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum(),
            // ⟨X⟩ = Σ 2 Re(conj(a_i) a_{i⊕mask}) over pairs with the bit clear.
            Basis::X => self
                .amplitudes
                .iter()
                .enumerate()
                .filter(|(i, _)| i & mask == 0)
                .map(|(i, a)| 2.0 * (a.conj() * self.amplitudes[i | mask]).re)
                .sum(),
        })
    }

    /// Per-qubit expectation values in `basis`, qubit 0 first.
    pub fn measure_all(&self, basis: Basis) -> Vec<f64> {
        (0..self.n_qubits)
            .map(|qubit| {
                self.expectation(Observable { basis, qubit })
                    .expect("qubit index in range")
            })
            .collect()
    }
}

/// Value-semantics wrapper around [`StateVector::apply`].
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

fn check_register(n_qubits: usize) -> Result<()> {
    if (1..=MAX_QUBITS).contains(&n_qubits) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "register size {n_qubits} outside 1..={MAX_QUBITS}"
        )))
    }
}
