//! Exact statevector simulation of the amplitude-embedded variational heads.
//!
//! A head is `amplitude_embed(x)` followed by `layers` repetitions of
//! (RX-RY-RZ on every qubit, then a CZ ring), read out as the basis
//! probabilities truncated to `d_out`. Qubit `0` is the most significant bit
//! of a basis index.
//!
//! Two differentiation routes are provided: [`vqc_gradients_backprop`]
//! (adjoint sweep through the complex state, used for training) and
//! [`vqc_gradient_parameter_shift`] (shift rule, a verification oracle).

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("amplitude embedding of an all-zero (or non-finite) vector is undefined")]
    ZeroNorm,
    #[error("vector of length {dim} does not fit in {n_qubits} qubits")]
    Capacity { dim: usize, n_qubits: usize },
    #[error("readout width {d_out} exceeds the {dim}-dimensional state space")]
    ReadoutTooWide { d_out: usize, dim: usize },
    #[error("angle array has {got} entries, expected {expected} ({layers} layers x {n_qubits} qubits x 3)")]
    AngleShape {
        got: usize,
        expected: usize,
        layers: usize,
        n_qubits: usize,
    },
    #[error("upstream gradient has length {got}, readout has length {expected}")]
    UpstreamShape { got: usize, expected: usize },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
}

/// Rotation axis of a single-qubit gate, in the order applied within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

const LAYER_AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    n_qubits: usize,
    amplitudes: Vec<Complex<T>>,
}

impl<T: Scalar> StateVector<T> {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); 1 << n_qubits];
        amplitudes[0] = Complex::new(T::one(), T::zero());
        Self {
            n_qubits,
            amplitudes,
        }
    }

    /// Computational basis state `|index>`.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut s = Self::zero(n_qubits);
        s.amplitudes[0] = Complex::new(T::zero(), T::zero());
        s.amplitudes[index] = Complex::new(T::one(), T::zero());
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> T {
        self.amplitudes
            .iter()
            .fold(T::zero(), |acc, a| acc + a.norm_sqr())
    }

    /// Born-rule probabilities of every basis state.
    pub fn probabilities(&self) -> Vec<T> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    #[inline]
    fn mask(&self, qubit: usize) -> usize {
        assert!(qubit < self.n_qubits, "qubit {qubit} out of range");
        1 << (self.n_qubits - 1 - qubit)
    }

    /// Applies the 2x2 matrix `[[m00, m01], [m10, m11]]` to `qubit`.
    pub fn apply_single(&mut self, qubit: usize, m: [[Complex<T>; 2]; 2]) {
        let mask = self.mask(qubit);
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let (a0, a1) = (self.amplitudes[i], self.amplitudes[j]);
            self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[j] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    /// `exp(-i theta P / 2)` for the Pauli `P` of `axis`.
    pub fn apply_rotation(&mut self, qubit: usize, axis: Axis, theta: T) {
        let half = theta / T::of(2.0);
        let (c, s) = (half.cos(), half.sin());
        let z = T::zero();
        let m = match axis {
            Axis::X => [
                [Complex::new(c, z), Complex::new(z, -s)],
                [Complex::new(z, -s), Complex::new(c, z)],
            ],
            Axis::Y => [
                [Complex::new(c, z), Complex::new(-s, z)],
                [Complex::new(s, z), Complex::new(c, z)],
            ],
            Axis::Z => [
                [Complex::new(c, -s), Complex::new(z, z)],
                [Complex::new(z, z), Complex::new(c, s)],
            ],
        };
        self.apply_single(qubit, m);
    }

    pub fn apply_rx(&mut self, qubit: usize, theta: T) {
        self.apply_rotation(qubit, Axis::X, theta);
    }

    pub fn apply_ry(&mut self, qubit: usize, theta: T) {
        self.apply_rotation(qubit, Axis::Y, theta);
    }

    pub fn apply_rz(&mut self, qubit: usize, theta: T) {
        self.apply_rotation(qubit, Axis::Z, theta);
    }

    /// Controlled-Z between two distinct qubits.
    pub fn apply_cz(&mut self, a: usize, b: usize) {
        assert_ne!(a, b, "CZ needs two distinct qubits");
        let both = self.mask(a) | self.mask(b);
        for (i, amp) in self.amplitudes.iter_mut().enumerate() {
            if i & both == both {
                *amp = -*amp;
            }
        }
    }

    /// RX, RY, RZ on every qubit; `layer_angles` is `[n_qubits][3]` flattened.
    pub fn apply_rotation_layer(&mut self, layer_angles: &[T]) -> Result<(), QuantumError> {
        if layer_angles.len() != 3 * self.n_qubits {
            return Err(QuantumError::AngleShape {
                got: layer_angles.len(),
                expected: 3 * self.n_qubits,
                layers: 1,
                n_qubits: self.n_qubits,
            });
        }
        for q in 0..self.n_qubits {
            for (k, axis) in LAYER_AXES.iter().enumerate() {
                self.apply_rotation(q, *axis, layer_angles[3 * q + k]);
            }
        }
        Ok(())
    }

    /// CZ on (0,1), (1,2), ..., (n-1,0). Two qubits get the single pair (0,1);
    /// a single qubit is left untouched.
    pub fn apply_cz_ring(&mut self) {
        for (a, b) in cz_ring_pairs(self.n_qubits) {
            self.apply_cz(a, b);
        }
    }

    /// Applies `P` (unscaled Pauli) to `qubit`, returning a new vector.
    fn pauli_image(&self, qubit: usize, axis: Axis) -> Vec<Complex<T>> {
        let mask = self.mask(qubit);
        let mut out = self.amplitudes.clone();
        let i_unit = Complex::new(T::zero(), T::one());
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let (a0, a1) = (self.amplitudes[i], self.amplitudes[j]);
            match axis {
                Axis::X => {
                    out[i] = a1;
                    out[j] = a0;
                }
                Axis::Y => {
                    out[i] = -i_unit * a1;
                    out[j] = i_unit * a0;
                }
                Axis::Z => {
                    out[j] = -a1;
                }
            }
        }
        out
    }
}

pub fn cz_ring_pairs(n_qubits: usize) -> Vec<(usize, usize)> {
    match n_qubits {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => (0..n).map(|q| (q, (q + 1) % n)).collect(),
    }
}

/// Loads `x / ||x||` into the first `x.len()` amplitudes, zero-padding the rest.
pub fn amplitude_embed<T: Scalar>(
    x: &[T],
    n_qubits: usize,
) -> Result<StateVector<T>, QuantumError> {
    let dim = 1usize << n_qubits;
    if x.len() > dim {
        return Err(QuantumError::Capacity {
            dim: x.len(),
            n_qubits,
        });
    }
    let norm = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(QuantumError::ZeroNorm);
    }
    let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); dim];
    for (a, &v) in amplitudes.iter_mut().zip(x) {
        *a = Complex::new(v / norm, T::zero());
    }
    Ok(StateVector {
        n_qubits,
        amplitudes,
    })
}

/// Rotation angles `[layers][n_qubits][3]` (RX, RY, RZ), stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcParams<T> {
    layers: usize,
    n_qubits: usize,
    angles: Vec<T>,
}

impl<T: Scalar> VqcParams<T> {
    pub fn new(layers: usize, n_qubits: usize, angles: Vec<T>) -> Result<Self, QuantumError> {
        let expected = layers * n_qubits * 3;
        if angles.len() != expected || layers == 0 || n_qubits == 0 {
            return Err(QuantumError::AngleShape {
                got: angles.len(),
                expected,
                layers,
                n_qubits,
            });
        }
        Ok(Self {
            layers,
            n_qubits,
            angles,
        })
    }

    pub fn zeros(layers: usize, n_qubits: usize) -> Self {
        Self::new(layers, n_qubits, vec![T::zero(); layers * n_qubits * 3])
            .expect("zero-filled angles have the declared shape")
    }

    /// Angles drawn uniformly from `[-half_width, half_width]`.
    pub fn random<R: Rng + ?Sized>(
        layers: usize,
        n_qubits: usize,
        half_width: f64,
        rng: &mut R,
    ) -> Self {
        let angles = (0..layers * n_qubits * 3)
            .map(|_| T::of(rng.gen_range(-half_width..=half_width)))
            .collect();
        Self::new(layers, n_qubits, angles).expect("generated angles have the declared shape")
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [T] {
        &mut self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Flat index of angle `(layer, qubit, axis)`.
    pub fn index(&self, layer: usize, qubit: usize, axis: usize) -> usize {
        (layer * self.n_qubits + qubit) * 3 + axis
    }

    fn layer(&self, l: usize) -> &[T] {
        let w = 3 * self.n_qubits;
        &self.angles[l * w..(l + 1) * w]
    }

    /// Nested `[L][n][3]` view used by checkpoints.
    pub fn to_nested(&self) -> Vec<Vec<[T; 3]>> {
        (0..self.layers)
            .map(|l| {
                (0..self.n_qubits)
                    .map(|q| {
                        let i = self.index(l, q, 0);
                        [self.angles[i], self.angles[i + 1], self.angles[i + 2]]
                    })
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(nested: &[Vec<[T; 3]>]) -> Result<Self, QuantumError> {
        let layers = nested.len();
        let n_qubits = nested.first().map_or(0, Vec::len);
        let mut angles = Vec::with_capacity(layers * n_qubits * 3);
        for layer in nested {
            if layer.len() != n_qubits {
                return Err(QuantumError::AngleShape {
                    got: layer.len() * 3,
                    expected: n_qubits * 3,
                    layers,
                    n_qubits,
                });
            }
            for triple in layer {
                angles.extend_from_slice(triple);
            }
        }
        Self::new(layers, n_qubits, angles)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumHeadOutput<T> {
    pub probs: Vec<T>,
    pub d_out: usize,
}

/// Gradients of a scalar loss with respect to the circuit angles and the
/// (pre-normalisation) input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VqcGradients<T> {
    pub angles: Vec<T>,
    pub input: Vec<T>,
}

/// Prepared state after embedding and all layers.
pub fn evolve<T: Scalar>(x: &[T], params: &VqcParams<T>) -> Result<StateVector<T>, QuantumError> {
    let mut state = amplitude_embed(x, params.n_qubits)?;
    for l in 0..params.layers {
        state.apply_rotation_layer(params.layer(l))?;
        state.apply_cz_ring();
    }
    Ok(state)
}

pub fn run_vqc<T: Scalar>(
    x: &[T],
    params: &VqcParams<T>,
    d_out: usize,
) -> Result<QuantumHeadOutput<T>, QuantumError> {
    let dim = 1usize << params.n_qubits;
    if d_out > dim {
        return Err(QuantumError::ReadoutTooWide { d_out, dim });
    }
    let state = evolve(x, params)?;
    let mut probs = state.probabilities();
    probs.truncate(d_out);
    Ok(QuantumHeadOutput { probs, d_out })
}

/// Adjoint differentiation of `sum_k upstream[k] * probs[k]`.
pub fn vqc_gradients_backprop<T: Scalar>(
    x: &[T],
    params: &VqcParams<T>,
    upstream: &[T],
) -> Result<VqcGradients<T>, QuantumError> {
    let dim = 1usize << params.n_qubits;
    if upstream.len() > dim {
        return Err(QuantumError::ReadoutTooWide {
            d_out: upstream.len(),
            dim,
        });
    }
    let mut psi = evolve(x, params)?;
    // adjoint of the real loss w.r.t. the final amplitudes: 2 g_k psi_k
    let two = T::of(2.0);
    let mut phi = StateVector {
        n_qubits: params.n_qubits,
        amplitudes: psi
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| match upstream.get(k) {
                Some(&g) => *a * (two * g),
                None => Complex::new(T::zero(), T::zero()),
            })
            .collect(),
    };

    let mut angle_grads = vec![T::zero(); params.len()];
    let half = T::of(0.5);
    for l in (0..params.layers).rev() {
        // CZ ring is real diagonal and self-inverse.
        psi.apply_cz_ring();
        phi.apply_cz_ring();
        for q in (0..params.n_qubits).rev() {
            for k in (0..3).rev() {
                let axis = LAYER_AXES[k];
                let idx = params.index(l, q, k);
                let p_psi = psi.pauli_image(q, axis);
                let overlap = phi
                    .amplitudes
                    .iter()
                    .zip(&p_psi)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (f, p)| {
                        acc + f.conj() * p
                    });
                angle_grads[idx] = half * overlap.im;
                let theta = params.angles[idx];
                psi.apply_rotation(q, axis, -theta);
                phi.apply_rotation(q, axis, -theta);
            }
        }
    }

    // psi is back to the embedded state; chain through x -> x / ||x||.
    let norm = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    let r: Vec<T> = phi.amplitudes[..x.len()].iter().map(|a| a.re).collect();
    let e: Vec<T> = x.iter().map(|&v| v / norm).collect();
    let dot = e
        .iter()
        .zip(&r)
        .fold(T::zero(), |acc, (a, b)| acc + *a * *b);
    let input = r
        .iter()
        .zip(&e)
        .map(|(&ri, &ei)| (ri - ei * dot) / norm)
        .collect();

    Ok(VqcGradients {
        angles: angle_grads,
        input,
    })
}

/// `(p(theta + pi/2) - p(theta - pi/2)) / 2` for one angle and one readout entry.
pub fn vqc_gradient_parameter_shift<T: Scalar>(
    x: &[T],
    params: &VqcParams<T>,
    angle_index: usize,
    output_index: usize,
) -> Result<T, QuantumError> {
    if angle_index >= params.len() {
        return Err(QuantumError::IndexOutOfRange {
            index: angle_index,
            limit: params.len(),
        });
    }
    let dim = 1usize << params.n_qubits;
    if output_index >= dim {
        return Err(QuantumError::IndexOutOfRange {
            index: output_index,
            limit: dim,
        });
    }
    let shift = T::FRAC_PI_2();
    let mut shifted = params.clone();
    shifted.angles[angle_index] = params.angles[angle_index] + shift;
    let plus = evolve(x, &shifted)?.amplitudes[output_index].norm_sqr();
    shifted.angles[angle_index] = params.angles[angle_index] - shift;
    let minus = evolve(x, &shifted)?.amplitudes[output_index].norm_sqr();
    Ok((plus - minus) / T::of(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn embed_basis_and_normalises() {
        let s = amplitude_embed(&[1.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(s.amplitudes()[0], Complex::new(1.0, 0.0));
        assert!(s.amplitudes()[1..].iter().all(|a| a.norm_sqr() == 0.0));

        let s = amplitude_embed(&[3.0, 4.0], 1).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[0].re, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].re, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn embed_errors() {
        assert_eq!(
            amplitude_embed(&[0.0, 0.0], 1).unwrap_err(),
            QuantumError::ZeroNorm
        );
        assert!(matches!(
            amplitude_embed(&[1.0; 5], 2),
            Err(QuantumError::Capacity {
                dim: 5,
                n_qubits: 2
            })
        ));
    }

    #[test]
    fn embedding_pads_with_zeros() {
        let x = [1.0, 2.0, 2.0];
        let s = amplitude_embed(&x, 3).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[2].re, 2.0 / 3.0, epsilon = 1e-15);
        assert!(s.amplitudes()[3..]
            .iter()
            .all(|a| *a == Complex::new(0.0, 0.0)));
    }

    #[test]
    fn zero_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_input(&mut rng, 8);
        let mut s = amplitude_embed(&x, 3).unwrap();
        let before = s.clone();
        s.apply_rotation_layer(&[0.0; 9]).unwrap();
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-15);
        }
    }

    #[test]
    fn rx_pi_flips_with_minus_i() {
        let mut s = StateVector::<f64>::zero(2);
        s.apply_rotation_layer(&[PI, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        // qubit 0 is the most significant bit: |10> = index 2
        let a = s.amplitudes()[2];
        assert_abs_diff_eq!(a.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.im, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn cz_ring_phases() {
        let mut s = StateVector::<f64>::zero(2);
        s.apply_cz_ring();
        assert_eq!(s.amplitudes()[0], Complex::new(1.0, 0.0));

        let mut s = StateVector::<f64>::basis(2, 3);
        s.apply_cz_ring();
        assert_eq!(s.amplitudes()[3], Complex::new(-1.0, 0.0));

        let mut s = StateVector::<f64>::zero(1);
        s.apply_cz_ring();
        assert_eq!(s, StateVector::zero(1));
        assert_eq!(cz_ring_pairs(3), vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn cz_ring_keeps_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = VqcParams::<f64>::random(1, 4, PI, &mut rng);
        let mut s = evolve(&random_input(&mut rng, 16), &params).unwrap();
        let before = s.probabilities();
        s.apply_cz_ring();
        for (a, b) in s.probabilities().iter().zip(&before) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn norm_survives_many_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = VqcParams::<f64>::random(100, 5, PI, &mut rng);
        let s = evolve(&random_input(&mut rng, 32), &params).unwrap();
        assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn identity_circuit_readout() {
        let params = VqcParams::<f64>::zeros(1, 2);
        let out = run_vqc(&[1.0, 0.0, 0.0, 0.0], &params, 4).unwrap();
        assert_eq!(out.probs, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            run_vqc(&[1.0], &params, 5),
            Err(QuantumError::ReadoutTooWide { .. })
        ));
    }

    #[test]
    fn default_customer_head_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..63).map(|_| rng.gen_range(0.0..1.0)).collect();
        let params = VqcParams::random(1, crate::scalar::qubits_for(63), 0.1, &mut rng);
        assert_eq!(params.n_qubits(), 6);
        let out = run_vqc(&x, &params, 63).unwrap();
        assert_eq!(out.probs.len(), 63);
        assert!(out.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(out.probs.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = VqcParams::<f64>::random(2, 3, PI, &mut rng);
        let g = vqc_gradients_backprop(&random_input(&mut rng, 8), &params, &[0.0; 8]).unwrap();
        assert!(g.angles.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shift_rule_single_rx() {
        // p(|1>) = sin^2(theta / 2) for RX(theta)|0>; only angle 0 is RX.
        let at = |theta: f64| {
            let params = VqcParams::new(1, 1, vec![theta, 0.0, 0.0]).unwrap();
            vqc_gradient_parameter_shift(&[1.0, 0.0], &params, 0, 1).unwrap()
        };
        assert_abs_diff_eq!(at(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at(PI / 2.0), 0.5, epsilon = 1e-15);
        // RZ on |0> only adds a phase: flat direction
        let params = VqcParams::new(1, 1, vec![0.3, 0.0, 0.7]).unwrap();
        assert_abs_diff_eq!(
            vqc_gradient_parameter_shift(&[1.0, 0.0], &params, 2, 1).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn backprop_matches_shift_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=4 {
            for layers in 1..=2 {
                let params = VqcParams::<f64>::random(layers, n, PI, &mut rng);
                let d = 1 << n;
                let x = random_input(&mut rng, d);
                for out in 0..d {
                    let mut up = vec![0.0; d];
                    up[out] = 1.0;
                    let g = vqc_gradients_backprop(&x, &params, &up).unwrap();
                    for a in 0..params.len() {
                        let oracle = vqc_gradient_parameter_shift(&x, &params, a, out).unwrap();
                        assert_abs_diff_eq!(g.angles[a], oracle, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let params = VqcParams::<f64>::random(2, 3, PI, &mut rng);
        let x = random_input(&mut rng, 6);
        let up = random_input(&mut rng, 6);
        let loss = |x: &[f64]| -> f64 {
            run_vqc(x, &params, 6)
                .unwrap()
                .probs
                .iter()
                .zip(&up)
                .map(|(p, g)| p * g)
                .sum()
        };
        let g = vqc_gradients_backprop(&x, &params, &up).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert_abs_diff_eq!(g.input[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn nested_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = VqcParams::<f64>::random(2, 3, 0.1, &mut rng);
        let nested = params.to_nested();
        assert_eq!(nested.len(), 2);
        assert_eq!(nested[0].len(), 3);
        assert_eq!(VqcParams::from_nested(&nested).unwrap(), params);
    }

    #[test]
    fn works_in_single_precision() {
        let params = VqcParams::<f32>::new(1, 1, vec![std::f32::consts::PI, 0.0, 0.0]).unwrap();
        let out = run_vqc(&[1.0f32, 0.0], &params, 2).unwrap();
        assert!((out.probs[1] - 1.0).abs() < 1e-6);
    }
}
