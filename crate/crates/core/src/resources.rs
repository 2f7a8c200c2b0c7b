//! CNOT counts and layer depths of ansatz circuits under all-to-all connectivity.
//!
//! A rotation `exp(-i theta P)` with `p` non-identity factors costs `2(p-1)`
//! CNOTs. Depth counts one layer per rotation block; fixed gates (ancilla
//! shell, controlled Paulis) are excluded from both numbers.

use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, Element, FixedGate};

pub fn rotation_cnots(weight: usize) -> usize {
    2 * weight.saturating_sub(1)
}

pub fn cnot_count(ansatz: &Ansatz) -> usize {
    ansatz.rotations().map(|(g, _, _)| rotation_cnots(g.weight())).sum()
}

/// Greedy as-soon-as-possible layering of rotation blocks.
pub fn circuit_depth(ansatz: &Ansatz) -> usize {
    let mut last = vec![0usize; ansatz.qubit_count()];
    let mut depth = 0;
    for (g, _, _) in ansatz.rotations() {
        let support = g.support();
        let qubits = (0..last.len()).filter(|&q| support >> q & 1 == 1);
        let layer = qubits.clone().map(|q| last[q]).max().unwrap_or(0) + 1;
        for q in qubits {
            last[q] = layer;
        }
        depth = depth.max(layer);
    }
    depth
}

/// Two-qubit gates spent on fixed elements: one per target qubit of each controlled Pauli.
pub fn shell_two_qubit_gates(ansatz: &Ansatz) -> usize {
    ansatz
        .elements()
        .iter()
        .map(|e| match e {
            Element::Fixed(FixedGate::ControlledPauli { word, .. }) => word.weight(),
            _ => 0,
        })
        .sum()
}

/// Resource numbers at one time sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub time: f64,
    pub cnot_count: usize,
    pub depth: usize,
    pub n_theta: usize,
}

impl ResourceRecord {
    pub fn of(time: f64, ansatz: &Ansatz) -> Self {
        ResourceRecord {
            time,
            cnot_count: cnot_count(ansatz),
            depth: circuit_depth(ansatz),
            n_theta: ansatz.n_theta(),
        }
    }
}

/// Per-step resource history of one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceTrace {
    pub records: Vec<ResourceRecord>,
}

impl ResourceTrace {
    pub fn push(&mut self, record: ResourceRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&ResourceRecord> {
        self.records.last()
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.records.windows(2).all(|w| {
            w[1].cnot_count >= w[0].cnot_count && w[1].depth >= w[0].depth && w[1].n_theta >= w[0].n_theta
        })
    }

    /// Record in effect at time `t` (the last one not after `t`).
    pub fn at(&self, t: f64) -> Option<&ResourceRecord> {
        self.records.iter().take_while(|r| r.time <= t).last()
    }
}
