//! Frequency-domain transforms of uniformly sampled response functions.
//!
//! Transforms use `G(w) = int_0^T G(t) exp(i (w + i eps) t) dt`. The discrete
//! transform is the trapezoid rule on the sampling mesh. The diagonal Padé
//! approximant resums the same power series in `z = exp(i (w + i eps) dt)`
//! and carries the trapezoid correction of the first sample, so both agree on
//! series that are exactly rational in `z` once the tail has decayed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::EigenSystem;
use crate::pauli::{PauliSum, DENSE_QUBIT_CAP};
use crate::series::is_uniform;
use crate::statevector::sum_into_slice;

/// Tikhonov parameter of the denominator solve, relative to the largest singular value squared.
pub const PADE_RIDGE: f64 = 1e-12;

/// Denominator magnitude below which an evaluation point is flagged as a pole.
pub const POLE_THRESHOLD: f64 = 1e-12;

/// Default filter on `|S|^2` for transition tables.
pub const TRANSITION_CUTOFF: f64 = 0.02;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn mesh_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Precondition("need at least two samples".into()));
    }
    if !is_uniform(times) {
        return Err(Error::Precondition("transform needs a uniform mesh".into()));
    }
    Ok(times[1] - times[0])
}

fn z_of(omega: f64, eps: f64, dt: f64) -> Complex64 {
    (Complex64::new(-eps, omega) * dt).exp()
}

/// Trapezoid-rule transform of a series sampled on a uniform mesh.
pub fn discrete_ft(times: &[f64], values: &[Complex64], omega: f64, eps: f64) -> Result<Complex64> {
    if times.len() != values.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            found: values.len(),
        });
    }
    let dt = mesh_step(times)?;
    let last = values.len() - 1;
    let s = Complex64::new(-eps, omega);
    let sum = values.iter().zip(times).enumerate().fold(ZERO, |acc, (n, (v, &t))| {
        let w = if n == 0 || n == last { 0.5 } else { 1.0 };
        acc + v * (s * t).exp() * w
    });
    Ok(sum * dt)
}

/// Diagonal rational approximant `A(z)/B(z)` of a sampled series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PadeApproximant {
    /// Numerator coefficients, length `N_T/2 + 1`.
    pub a: Vec<Complex64>,
    /// Denominator coefficients `b_1..b_{N_T/2}` (`b_0 = 1`).
    pub b: Vec<Complex64>,
    pub dt: f64,
    pub t0: f64,
    /// First sample, used for the trapezoid end correction.
    pub c0: Complex64,
}

/// Value of an approximant at one frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PadeValue {
    pub value: Complex64,
    pub pole: bool,
}

/// Fits the diagonal approximant to samples `c_0..c_{N_T}`.
pub fn fit_pade(times: &[f64], values: &[Complex64]) -> Result<PadeApproximant> {
    if times.len() != values.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            found: values.len(),
        });
    }
    let dt = mesh_step(times)?;
    let nt = values.len() - 1;
    if nt % 2 != 0 || values.len() < 5 {
        return Err(Error::Precondition(format!(
            "Padé fit needs an even number of intervals and at least 5 samples, got {} samples",
            values.len()
        )));
    }
    let k = nt / 2;
    let c = values;
    let m = DMatrix::from_fn(k, k, |row, col| c[k + 1 + row - (col + 1)]);
    let rhs = DVector::from_fn(k, |row, _| -c[k + 1 + row]);
    let b = ridge_solve(m, rhs)?;
    let mut a = vec![ZERO; k + 1];
    for (n, an) in a.iter_mut().enumerate() {
        *an = c[n];
        for mm in 1..=n {
            *an += b[mm - 1] * c[n - mm];
        }
    }
    if a.iter().chain(b.iter()).any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::Precondition("Padé system degenerate after regularization".into()));
    }
    Ok(PadeApproximant {
        a,
        b: b.iter().copied().collect(),
        dt,
        t0: times[0],
        c0: c[0],
    })
}

fn ridge_solve(m: DMatrix<Complex64>, rhs: DVector<Complex64>) -> Result<DVector<Complex64>> {
    let n = m.ncols();
    if rhs.iter().all(|x| *x == ZERO) {
        return Ok(DVector::zeros(n));
    }
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Precondition("Padé system: SVD failed".into())),
    };
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::Precondition("Padé system degenerate after regularization".into()));
    }
    let lambda = PADE_RIDGE * smax * smax;
    let proj = u.adjoint() * rhs;
    let mut y = DVector::zeros(n);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        y[i] = proj[i] * (s / (s * s + lambda));
    }
    Ok(vt.adjoint() * y)
}

fn horner(coeffs: impl DoubleEndedIterator<Item = Complex64>, z: Complex64) -> Complex64 {
    coeffs.rev().fold(ZERO, |acc, c| acc * z + c)
}

impl PadeApproximant {
    /// Order of numerator and denominator.
    pub fn order(&self) -> usize {
        self.b.len()
    }

    pub fn numerator(&self, z: Complex64) -> Complex64 {
        horner(self.a.iter().copied(), z)
    }

    pub fn denominator(&self, z: Complex64) -> Complex64 {
        horner(std::iter::once(Complex64::new(1.0, 0.0)).chain(self.b.iter().copied()), z)
    }

    /// Taylor coefficients of `A/B` up to `z^count`.
    pub fn series_coefficients(&self, count: usize) -> Vec<Complex64> {
        let mut out = vec![ZERO; count];
        for n in 0..count {
            let mut v = self.a.get(n).copied().unwrap_or(ZERO);
            for m in 1..=n.min(self.b.len()) {
                v -= self.b[m - 1] * out[n - m];
            }
            out[n] = v;
        }
        out
    }
}

/// `dt (A(z)/B(z) - c_0/2)` at `z = exp(i (w + i eps) dt)`, shifted by the mesh origin.
pub fn eval_pade(p: &PadeApproximant, omega: f64, eps: f64) -> PadeValue {
    let z = z_of(omega, eps, p.dt);
    let den = p.denominator(z);
    let origin = (Complex64::new(-eps, omega) * p.t0).exp();
    if den.norm() < POLE_THRESHOLD {
        return PadeValue {
            value: Complex64::new(f64::NAN, f64::NAN),
            pole: true,
        };
    }
    PadeValue {
        value: origin * p.dt * (p.numerator(z) / den - 0.5 * p.c0),
        pole: false,
    }
}

/// A frequency-domain series with the damping used to produce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub omega: Vec<f64>,
    pub g: Vec<Complex64>,
    /// `-Im G / pi`.
    pub a: Vec<f64>,
    pub pole: Vec<bool>,
    pub eps: f64,
}

/// `A(w) = -Im G(w) / pi` pointwise.
pub fn spectral_function(omega: &[f64], g: &[Complex64], eps: f64) -> SpectrumSeries {
    SpectrumSeries {
        omega: omega.to_vec(),
        g: g.to_vec(),
        a: g.iter().map(|v| -v.im / std::f64::consts::PI).collect(),
        pole: g.iter().map(|v| !v.re.is_finite()).collect(),
        eps,
    }
}

/// Padé-resummed spectrum of a uniformly sampled series.
pub fn pade_spectrum(times: &[f64], values: &[Complex64], omega: &[f64], eps: f64) -> Result<SpectrumSeries> {
    let p = fit_pade(times, values)?;
    let vals: Vec<PadeValue> = omega.par_iter().map(|&w| eval_pade(&p, w, eps)).collect();
    let mut s = spectral_function(omega, &vals.iter().map(|v| v.value).collect::<Vec<_>>(), eps);
    s.pole = vals.iter().map(|v| v.pole).collect();
    Ok(s)
}

/// Trapezoid-transformed spectrum of a uniformly sampled series.
pub fn dft_spectrum(times: &[f64], values: &[Complex64], omega: &[f64], eps: f64) -> Result<SpectrumSeries> {
    let g = omega
        .par_iter()
        .map(|&w| discrete_ft(times, values, w, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(spectral_function(omega, &g, eps))
}

/// `lo, lo + step, ...` up to `hi`.
pub fn frequency_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::Precondition(format!("invalid frequency grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Indices of strict interior local maxima.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

/// Local maxima of `a` inside `[lo, hi]`, as frequencies.
pub fn peaks_in(s: &SpectrumSeries, lo: f64, hi: f64) -> Vec<f64> {
    local_maxima(&s.a)
        .into_iter()
        .map(|i| s.omega[i])
        .filter(|&w| w >= lo && w <= hi)
        .collect()
}

/// Frequency of the largest `a` inside `[lo, hi]`.
pub fn dominant_peak(s: &SpectrumSeries, lo: f64, hi: f64) -> Option<f64> {
    s.omega
        .iter()
        .zip(&s.a)
        .filter(|(&w, a)| w >= lo && w <= hi && a.is_finite())
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(&w, _)| w)
}

/// One line of a Lehmann transition table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub index: usize,
    /// Peak position: `E_nu - E_0` for additions, `E_0 - E_nu` for removals.
    pub delta_e: f64,
    /// `|S|^2` with `S` the un-normalized orbital sum.
    pub weight: f64,
    pub addition: bool,
}

/// Exact spectral decomposition of `G^R_k`.
#[derive(Clone, Debug)]
pub struct LehmannData {
    pub ground_energy: f64,
    pub orbitals: usize,
    /// `(E_nu - E_0, |<nu|c_k^dag|0>|^2)` over all eigenstates.
    pub addition: Vec<(f64, f64)>,
    /// `(E_0 - E_nu, |<nu|c_k|0>|^2)` over all eigenstates.
    pub removal: Vec<(f64, f64)>,
}

impl LehmannData {
    pub fn total_weight(&self) -> f64 {
        self.addition.iter().chain(&self.removal).map(|x| x.1).sum()
    }

    pub fn green(&self, omega: f64, eps: f64) -> Complex64 {
        self.addition
            .iter()
            .chain(&self.removal)
            .map(|&(d, w)| w / Complex64::new(omega - d, eps))
            .sum()
    }

    /// Exact `G^R_k(t)`.
    pub fn green_time(&self, t: f64) -> Complex64 {
        if t < 0.0 {
            return ZERO;
        }
        let s: Complex64 = self
            .addition
            .iter()
            .chain(&self.removal)
            .map(|&(d, w)| Complex64::from_polar(w, -d * t))
            .sum();
        Complex64::new(0.0, -1.0) * s
    }

    /// Transitions with `|S|^2 = N * weight` above `cutoff`.
    pub fn transitions(&self, cutoff: f64) -> Vec<Transition> {
        let n = self.orbitals as f64;
        let rows = |list: &[(f64, f64)], addition: bool| -> Vec<Transition> {
            list.iter()
                .enumerate()
                .filter(|(_, &(_, w))| w * n > cutoff)
                .map(|(index, &(delta_e, w))| Transition {
                    index,
                    delta_e,
                    weight: w * n,
                    addition,
                })
                .collect()
        };
        let mut out = rows(&self.removal, false);
        out.extend(rows(&self.addition, true));
        out
    }
}

/// Lehmann decomposition of `c_k = N^{-1/2} sum_j exp(-i k j) c_{orbital_j}`.
pub fn lehmann_decomposition(eig: &EigenSystem, annihilators: &[PauliSum], k: f64) -> Result<LehmannData> {
    if eig.qubit_count() > DENSE_QUBIT_CAP {
        return Err(Error::DenseCap {
            qubits: eig.qubit_count(),
            cap: DENSE_QUBIT_CAP,
        });
    }
    if annihilators.is_empty() {
        return Err(Error::Precondition("no orbitals given".into()));
    }
    let n = annihilators.len();
    let mut ck = PauliSum::zero(eig.qubit_count());
    for (j, c) in annihilators.iter().enumerate() {
        let phase = Complex64::from_polar(1.0 / (n as f64).sqrt(), -k * j as f64);
        ck = ck.add(&c.scale(phase))?;
    }
    let ckd = ck.hermitian_conjugate();
    let v = eig.eigenvectors();
    let ground: Vec<Complex64> = v.column(0).iter().copied().collect();
    let e0 = eig.eigenvalues()[0];
    let project = |op: &PauliSum| -> Vec<f64> {
        let mut out = vec![ZERO; ground.len()];
        sum_into_slice(op, &ground, &mut out);
        let o = DVector::from_vec(out);
        (v.adjoint() * o).iter().map(|x| x.norm_sqr()).collect()
    };
    let add = project(&ckd);
    let rem = project(&ck);
    let values = eig.eigenvalues();
    Ok(LehmannData {
        ground_energy: e0,
        orbitals: n,
        addition: values.iter().zip(&add).map(|(&e, &w)| (e - e0, w)).collect(),
        removal: values.iter().zip(&rem).map(|(&e, &w)| (e0 - e, w)).collect(),
    })
}

/// Exact `G^R_k(w)` on a frequency grid plus the filtered transition table.
pub fn lehmann_oracle(
    eig: &EigenSystem,
    annihilators: &[PauliSum],
    k: f64,
    eps: f64,
    omega: &[f64],
) -> Result<(SpectrumSeries, Vec<Transition>)> {
    let data = lehmann_decomposition(eig, annihilators, k)?;
    let g: Vec<Complex64> = omega.iter().map(|&w| data.green(w, eps)).collect();
    Ok((spectral_function(omega, &g, eps), data.transitions(TRANSITION_CUTOFF)))
}

/// Exact real-space `G^R_{pq}(t)` from the eigensystem.
pub fn lehmann_real_space(eig: &EigenSystem, cp: &PauliSum, cq: &PauliSum, times: &[f64]) -> Result<Vec<Complex64>> {
    let v = eig.eigenvectors();
    let ground: Vec<Complex64> = v.column(0).iter().copied().collect();
    let amps = |op: &PauliSum| -> DVector<Complex64> {
        let mut out = vec![ZERO; ground.len()];
        sum_into_slice(op, &ground, &mut out);
        v.adjoint() * DVector::from_vec(out)
    };
    // <nu|c_q^dag|0>, <nu|c_p^dag|0>, <nu|c_p|0>, <nu|c_q|0>
    let qd = amps(&cq.hermitian_conjugate());
    let pd = amps(&cp.hermitian_conjugate());
    let p = amps(cp);
    let q = amps(cq);
    let e = eig.eigenvalues();
    let e0 = e[0];
    Ok(times
        .iter()
        .map(|&t| {
            if t < 0.0 {
                return ZERO;
            }
            let mut s = ZERO;
            for nu in 0..e.len() {
                let d = e[nu] - e0;
                s += pd[nu].conj() * qd[nu] * Complex64::from_polar(1.0, -d * t);
                s += q[nu].conj() * p[nu] * Complex64::from_polar(1.0, d * t);
            }
            Complex64::new(0.0, -1.0) * s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::uniform_mesh;

    fn sampled(f: impl Fn(f64) -> Complex64, t_max: f64, dt: f64) -> (Vec<f64>, Vec<Complex64>) {
        let t = uniform_mesh(t_max, dt).unwrap();
        let v = t.iter().map(|&x| f(x)).collect();
        (t, v)
    }

    #[test]
    fn zero_series_gives_zero() {
        let (t, v) = sampled(|_| ZERO, 2.0, 0.1);
        assert_eq!(discrete_ft(&t, &v, 0.3, 0.1).unwrap(), ZERO);
        let p = fit_pade(&t, &v).unwrap();
        assert_eq!(eval_pade(&p, 0.3, 0.1).value, ZERO);
    }

    #[test]
    fn single_frequency_peak() {
        let w0 = 1.3;
        let (t, v) = sampled(|x| Complex64::new(0.0, -1.0) * Complex64::from_polar(1.0, -w0 * x), 60.0, 0.02);
        let omega = frequency_grid(0.0, 3.0, 0.01).unwrap();
        let s = dft_spectrum(&t, &v, &omega, 0.2).unwrap();
        assert!((dominant_peak(&s, 0.0, 3.0).unwrap() - w0).abs() < 0.011);
    }

    #[test]
    fn geometric_series_is_reproduced() {
        let r = Complex64::from_polar(0.97, 0.4);
        let (t, v) = sampled(|x| r.powf(x / 0.1), 4.0, 0.1);
        let p = fit_pade(&t, &v).unwrap();
        let coeffs = p.series_coefficients(60);
        for (n, c) in coeffs.iter().enumerate() {
            assert!((c - r.powu(n as u32)).norm() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn nonuniform_rejected() {
        let t = vec![0.0, 0.1, 0.3];
        let v = vec![ZERO; 3];
        assert!(discrete_ft(&t, &v, 0.0, 0.1).is_err());
        assert!(fit_pade(&t, &v).is_err());
    }

    #[test]
    fn odd_interval_count_rejected() {
        let (t, v) = sampled(|_| Complex64::new(1.0, 0.0), 0.5, 0.1);
        assert_eq!(t.len(), 6);
        assert!(fit_pade(&t, &v).is_err());
    }

    #[test]
    fn lorentzian_height() {
        let w = 0.7;
        let eps = 0.25;
        let data = LehmannData {
            ground_energy: 0.0,
            orbitals: 1,
            addition: vec![(1.0, w)],
            removal: vec![],
        };
        let a = -data.green(1.0, eps).im / std::f64::consts::PI;
        assert!((a - w / (std::f64::consts::PI * eps)).abs() < 1e-14);
    }

    #[test]
    fn maxima() {
        assert_eq!(local_maxima(&[0.0, 1.0, 0.5, 2.0, 1.0]), vec![1, 3]);
        assert!(local_maxima(&[0.0, 1.0]).is_empty());
    }
}
