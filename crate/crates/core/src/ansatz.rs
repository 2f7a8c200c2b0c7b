//! Pseudo-Trotter circuits: a reference basis state followed by an ordered
//! list of Pauli rotations `exp(-i theta P)` and fixed (non-parameterized) gates.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{PauliWord, DENSE_QUBIT_CAP};
use crate::statevector::{
    apply_pauli_slice, controlled_pauli_slice, hadamard_slice, rotate_slice, s_gate_slice, StateVector,
};

/// Which unitary block a rotation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    /// Ground-state preparation.
    Ground,
    /// First propagation block (delay time).
    Tau,
    /// Last propagation block.
    Time,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Segment::Ground => "ground",
            Segment::Tau => "tau",
            Segment::Time => "t",
        };
        write!(f, "{s}")
    }
}

/// Gates without variational parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedGate {
    Hadamard(usize),
    PauliX(usize),
    Phase(usize),
    Pauli(PauliWord),
    ControlledPauli {
        control: usize,
        value: bool,
        word: PauliWord,
    },
}

impl FixedGate {
    pub(crate) fn apply(&self, amps: &mut [Complex64]) {
        match *self {
            FixedGate::Hadamard(q) => hadamard_slice(amps, q),
            FixedGate::PauliX(q) => {
                let bit = 1usize << q;
                for i in 0..amps.len() {
                    if i & bit == 0 {
                        amps.swap(i, i | bit);
                    }
                }
            }
            FixedGate::Phase(q) => s_gate_slice(amps, q),
            FixedGate::Pauli(ref w) => apply_pauli_slice(amps, w),
            FixedGate::ControlledPauli {
                control,
                value,
                ref word,
            } => controlled_pauli_slice(amps, control, value, word),
        }
    }

    fn check(&self, qubits: usize) -> Result<()> {
        let in_range = |q: usize| {
            if q >= qubits {
                Err(Error::QubitIndex { index: q, qubits })
            } else {
                Ok(())
            }
        };
        let word_ok = |w: &PauliWord| {
            if w.qubit_count() != qubits {
                Err(Error::Dimension {
                    expected: qubits,
                    found: w.qubit_count(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            FixedGate::Hadamard(q) | FixedGate::PauliX(q) | FixedGate::Phase(q) => in_range(*q),
            FixedGate::Pauli(w) => word_ok(w),
            FixedGate::ControlledPauli { control, word, .. } => {
                in_range(*control)?;
                word_ok(word)?;
                if word.support() >> control & 1 == 1 {
                    return Err(Error::Precondition(format!(
                        "control qubit {control} overlaps the target word {word}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One circuit element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Element {
    Rotation {
        generator: PauliWord,
        angle: f64,
        segment: Segment,
    },
    Fixed(FixedGate),
}

/// Reference basis state plus an ordered element list.
#[derive(Clone, Debug, PartialEq)]
pub struct Ansatz {
    qubits: usize,
    reference: usize,
    elements: Vec<Element>,
    n_theta: usize,
}

impl Ansatz {
    pub fn new(qubits: usize, reference: usize) -> Result<Self> {
        if qubits == 0 || qubits > DENSE_QUBIT_CAP {
            return Err(Error::DenseCap {
                qubits,
                cap: DENSE_QUBIT_CAP,
            });
        }
        if reference >= 1 << qubits {
            return Err(Error::Precondition(format!(
                "reference index {reference} outside a {qubits}-qubit register"
            )));
        }
        Ok(Ansatz {
            qubits,
            reference,
            elements: Vec::new(),
            n_theta: 0,
        })
    }

    /// Reference given as a bitstring whose k-th character is qubit k.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let s = StateVector::from_bitstring(bits, bits.chars().count())?;
        let reference = s
            .amplitudes()
            .iter()
            .position(|a| a.re == 1.0)
            .expect("basis state has one unit amplitude");
        Self::new(s.qubit_count(), reference)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Number of variational angles.
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn push_rotation(&mut self, generator: PauliWord, angle: f64, segment: Segment) -> Result<()> {
        if generator.qubit_count() != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: generator.qubit_count(),
            });
        }
        if generator.is_identity() {
            return Err(Error::Precondition("identity generator in ansatz".into()));
        }
        if !angle.is_finite() {
            return Err(Error::Precondition("rotation angle must be finite".into()));
        }
        self.elements.push(Element::Rotation {
            generator,
            angle,
            segment,
        });
        self.n_theta += 1;
        Ok(())
    }

    pub fn push_fixed(&mut self, gate: FixedGate) -> Result<()> {
        gate.check(self.qubits)?;
        self.elements.push(Element::Fixed(gate));
        Ok(())
    }

    /// Rotations in circuit order as `(generator, angle, segment)`.
    pub fn rotations(&self) -> impl Iterator<Item = (&PauliWord, f64, Segment)> + '_ {
        self.elements.iter().filter_map(|e| match e {
            Element::Rotation {
                generator,
                angle,
                segment,
            } => Some((generator, *angle, *segment)),
            Element::Fixed(_) => None,
        })
    }

    pub fn generators(&self) -> Vec<PauliWord> {
        self.rotations().map(|(g, _, _)| *g).collect()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.rotations().map(|(_, a, _)| a).collect()
    }

    pub fn set_angles(&mut self, angles: &[f64]) -> Result<()> {
        if angles.len() != self.n_theta {
            return Err(Error::Dimension {
                expected: self.n_theta,
                found: angles.len(),
            });
        }
        let mut k = 0;
        for e in &mut self.elements {
            if let Element::Rotation { angle, .. } = e {
                *angle = angles[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn count_segment(&self, segment: Segment) -> usize {
        self.rotations().filter(|(_, _, s)| *s == segment).count()
    }

    /// Prepared state with the stored angles.
    pub fn prepare(&self) -> StateVector {
        let mut amps = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.prepare_into(&self.angles(), &mut amps);
        StateVector::from_amplitudes(amps).expect("unitary circuit keeps the norm")
    }

    /// Prepared state with explicit angles, written into `amps`.
    pub(crate) fn prepare_into(&self, angles: &[f64], amps: &mut [Complex64]) {
        amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        amps[self.reference] = Complex64::new(1.0, 0.0);
        let mut k = 0;
        for e in &self.elements {
            match e {
                Element::Rotation { generator, .. } => {
                    rotate_slice(amps, angles[k], generator);
                    k += 1;
                }
                Element::Fixed(g) => g.apply(amps),
            }
        }
    }

    /// `d|psi>/d theta_mu`: the circuit with `-i A_mu` inserted right after rotation `mu`.
    pub fn derivative_state(&self, mu: usize) -> Result<Vec<Complex64>> {
        if mu >= self.n_theta {
            return Err(Error::Precondition(format!(
                "derivative index {mu} out of range for {} angles",
                self.n_theta
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); self.dim()];
        amps[self.reference] = Complex64::new(1.0, 0.0);
        let mut k = 0;
        for e in &self.elements {
            match e {
                Element::Rotation { generator, angle, .. } => {
                    rotate_slice(&mut amps, *angle, generator);
                    if k == mu {
                        apply_pauli_slice(&mut amps, generator);
                        amps.iter_mut().for_each(|a| *a *= Complex64::new(0.0, -1.0));
                    }
                    k += 1;
                }
                Element::Fixed(g) => g.apply(&mut amps),
            }
        }
        Ok(amps)
    }

    /// Same circuit on a larger register; extra qubits start in `|0>`.
    pub fn widen(&self, qubits: usize) -> Result<Ansatz> {
        if qubits < self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: qubits,
            });
        }
        let mut out = Ansatz::new(qubits, self.reference)?;
        for e in &self.elements {
            match *e {
                Element::Rotation {
                    generator,
                    angle,
                    segment,
                } => out.push_rotation(generator.widen(qubits)?, angle, segment)?,
                Element::Fixed(g) => {
                    let g = match g {
                        FixedGate::Pauli(w) => FixedGate::Pauli(w.widen(qubits)?),
                        FixedGate::ControlledPauli { control, value, word } => FixedGate::ControlledPauli {
                            control,
                            value,
                            word: word.widen(qubits)?,
                        },
                        other => other,
                    };
                    out.push_fixed(g)?;
                }
            }
        }
        Ok(out)
    }

    /// Appends every element of `other`, which must act on the same register.
    pub fn extend(&mut self, other: &Ansatz) -> Result<()> {
        if other.qubits != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: other.qubits,
            });
        }
        for e in &other.elements {
            match *e {
                Element::Rotation {
                    generator,
                    angle,
                    segment,
                } => self.push_rotation(generator, angle, segment)?,
                Element::Fixed(g) => self.push_fixed(g)?,
            }
        }
        Ok(())
    }
}
