//! Leaky integrate-and-fire neurons with adaptive thresholds.
//!
//! One step applies, element-wise and in this order:
//!
//! 1. integrate: `v += (-(v - v_reset) + i) / tau_m`
//! 2. fire:      `o = step(v - v_th)` against the *pre-update* threshold
//! 3. reset:     `v = o * v_reset + (1 - o) * v`
//! 4. threshold: `v_th = tau_th * v_th + gamma * o`
//!
//! The hard step function is non-differentiable; training replaces its
//! derivative with the scaled sigmoid derivative [`surrogate_grad`].
//! [`relaxed_fire`] is the matching differentiable forward, used by the
//! gradient-verification tests: its exact analytic derivative *is*
//! `surrogate_grad`.

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams<F> {
    /// Membrane time constant; 1 makes the neuron memoryless, larger
    /// values leak the potential toward `v_reset` more slowly.
    pub tau_m: F,
    pub v_reset: F,
    /// Threshold at t=0.
    pub v_th0: F,
    /// Per-step threshold decay in (0, 1]; 1 disables decay.
    pub tau_th: F,
    /// Threshold increment per emitted spike.
    pub gamma: F,
    /// Surrogate smoothness: larger is closer to the hard step.
    pub alpha: F,
}

impl<F: Scalar> Default for LifParams<F> {
    fn default() -> Self {
        LifParams {
            tau_m: F::one(),
            v_reset: F::zero(),
            v_th0: F::one(),
            tau_th: F::of(0.7),
            gamma: F::of(0.2),
            alpha: F::one(),
        }
    }
}

impl<F: Scalar> LifParams<F> {
    // Negated comparisons on purpose: NaN fails every ordering, so it
    // must land in the error branch, which `<` would let through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m >= F::one()) {
            return Err(Error::invalid(format!("tau_m {} must be >= 1", self.tau_m)));
        }
        if !(self.v_reset < self.v_th0) {
            return Err(Error::invalid(format!(
                "v_reset {} must lie below v_th0 {}",
                self.v_reset, self.v_th0
            )));
        }
        if !(self.tau_th > F::zero() && self.tau_th <= F::one()) {
            return Err(Error::invalid(format!(
                "tau_th {} outside (0, 1]",
                self.tau_th
            )));
        }
        if !(self.gamma >= F::zero()) {
            return Err(Error::invalid(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.alpha > F::zero()) {
            return Err(Error::invalid(format!("alpha {} must be > 0", self.alpha)));
        }
        Ok(())
    }
}

/// Per-neuron membrane potentials and thresholds.
#[derive(Debug, Clone)]
pub struct LifState<F> {
    pub v: Vec<F>,
    pub v_th: Vec<F>,
}

impl<F: Scalar> LifState<F> {
    pub fn new(n: usize, p: &LifParams<F>) -> Self {
        LifState { v: vec![p.v_reset; n], v_th: vec![p.v_th0; n] }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

pub fn lif_integrate<F: Scalar>(v_prev: F, i: F, p: &LifParams<F>) -> F {
    v_prev + (-(v_prev - p.v_reset) + i) / p.tau_m
}

/// Hard threshold; equality fires.
pub fn lif_fire<F: Scalar>(v: F, v_th_prev: F) -> F {
    if v - v_th_prev >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

pub fn lif_reset<F: Scalar>(v: F, o: F, v_reset: F) -> F {
    o * v_reset + (F::one() - o) * v
}

pub fn threshold_update<F: Scalar>(v_th_prev: F, o: F, tau_th: F, gamma: F) -> F {
    tau_th * v_th_prev + gamma * o
}

/// Advances every neuron one step and returns the spike vector.
pub fn lif_step<F: Scalar>(
    state: &mut LifState<F>,
    input: &[F],
    p: &LifParams<F>,
) -> Result<Vec<F>> {
    if input.len() != state.len() {
        return Err(Error::invalid(format!(
            "input length {} does not match neuron count {}",
            input.len(),
            state.len()
        )));
    }
    let mut spikes = Vec::with_capacity(input.len());
    for (j, &i) in input.iter().enumerate() {
        let u = lif_integrate(state.v[j], i, p);
        let o = lif_fire(u, state.v_th[j]);
        state.v[j] = lif_reset(u, o, p.v_reset);
        state.v_th[j] = threshold_update(state.v_th[j], o, p.tau_th, p.gamma);
        spikes.push(o);
    }
    Ok(spikes)
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Derivative surrogate for the hard step: `alpha * s * (1 - s)` with
/// `s = sigmoid(alpha * x)`.
pub fn surrogate_grad<F: Scalar>(x: F, alpha: F) -> F {
    let s = sigmoid(alpha * x);
    alpha * s * (F::one() - s)
}

/// Differentiable stand-in for the hard step: `sigmoid(alpha * x)`.
pub fn relaxed_fire<F: Scalar>(x: F, alpha: F) -> F {
    sigmoid(alpha * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed_threshold_params(tau_m: f64) -> LifParams<f64> {
        LifParams {
            tau_m,
            v_reset: 0.0,
            v_th0: 1.0,
            tau_th: 1.0,
            gamma: 0.0,
            alpha: 1.0,
        }
    }

    #[test]
    fn integrate_examples() {
        let p = fixed_threshold_params(2.0);
        assert_eq!(lif_integrate(0.0, 1.0, &p), 0.5);
        assert_eq!(lif_integrate(0.5, 0.0, &p), 0.25);
        let p1 = fixed_threshold_params(1.0);
        // tau_m=1 cancels the previous potential up to rounding.
        for v_prev in [-3.0, 0.0, 0.7, 42.0] {
            assert!((lif_integrate(v_prev, 0.3, &p1) - 0.3).abs() < 1e-12);
        }
        let shifted = LifParams { v_reset: -0.5, v_th0: 1.0, ..fixed_threshold_params(1.0) };
        assert!((lif_integrate(7.0, 0.3, &shifted) - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn fire_examples() {
        assert_eq!(lif_fire(1.0, 1.0), 1.0, "equality fires");
        assert_eq!(lif_fire(0.99, 1.0), 0.0);
        assert_eq!(lif_fire(-0.5, 0.0), 0.0);
    }

    #[test]
    fn reset_examples() {
        assert_eq!(lif_reset(2.3f64, 1.0, 0.0), 0.0);
        assert_eq!(lif_reset(0.4f64, 0.0, 0.0), 0.4);
        assert_eq!(lif_reset(5.0f64, 1.0, -0.1), -0.1);
    }

    #[test]
    fn threshold_update_examples() {
        assert!((threshold_update(1.0f64, 1.0, 0.7, 0.2) - 0.9).abs() < 1e-12);
        assert!((threshold_update(1.0f64, 0.0, 0.7, 0.2) - 0.7).abs() < 1e-12);
        for o in [0.0f64, 1.0] {
            assert_eq!(threshold_update(0.37, o, 1.0, 0.0), 0.37);
        }
    }

    #[test]
    fn constant_drive_spikes_with_period_three() {
        // tau_m=2, fixed threshold 1.0, i=1.2: the potential walks
        // 0.6, 0.9, 1.05 and the third step fires and resets.
        let p = fixed_threshold_params(2.0);
        let mut state = LifState::new(1, &p);
        let mut train = Vec::new();
        let mut vs = Vec::new();
        for _ in 0..9 {
            let o = lif_step(&mut state, &[1.2], &p).unwrap();
            train.push(o[0] as u8);
            vs.push(state.v[0]);
        }
        assert_eq!(train, vec![0, 0, 1, 0, 0, 1, 0, 0, 1]);
        assert!((vs[0] - 0.6).abs() < 1e-12);
        assert!((vs[1] - 0.9).abs() < 1e-12);
        assert_eq!(vs[2], 0.0, "spike resets the potential");
    }

    #[test]
    fn subthreshold_drive_never_spikes() {
        // The integrate map has fixed point V* = i; 0.4 < 1 stays silent.
        let p = fixed_threshold_params(2.0);
        let mut state = LifState::new(1, &p);
        for _ in 0..100 {
            let o = lif_step(&mut state, &[0.4], &p).unwrap();
            assert_eq!(o[0], 0.0);
            assert!(state.v[0] < 0.4 + 1e-12);
        }
        assert!((state.v[0] - 0.4).abs() < 1e-9, "converges to the fixed point");
    }

    #[test]
    fn zero_input_keeps_reset_potential() {
        let p = LifParams::<f64>::default();
        let mut state = LifState::new(4, &p);
        let o = lif_step(&mut state, &[0.0; 4], &p).unwrap();
        assert!(o.iter().all(|&x| x == 0.0));
        assert!(state.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_length_mismatch_is_an_error() {
        let p = LifParams::<f64>::default();
        let mut state = LifState::new(3, &p);
        assert!(lif_step(&mut state, &[0.0; 2], &p).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert!((surrogate_grad(0.0f64, 1.0) - 0.25).abs() < 1e-12);
        assert!((surrogate_grad(0.0f64, 10.0) - 2.5).abs() < 1e-12);
        assert!(surrogate_grad(20.0f64, 1.0) < 1e-8);
        assert!(surrogate_grad(-20.0f64, 1.0) < 1e-8);
    }

    #[test]
    fn relaxed_fire_examples() {
        assert_eq!(relaxed_fire(0.0f64, 1.0), 0.5);
        assert!(relaxed_fire(1e9f64, 1.0) > 1.0 - 1e-12);
        assert!(relaxed_fire(-1e9f64, 1.0) < 1e-12);
    }

    #[test]
    fn surrogate_is_the_exact_derivative_of_relaxed_fire() {
        let h = 1e-6f64;
        for &alpha in &[0.5f64, 1.0, 4.0] {
            for &x in &[-3.0f64, -0.5, 0.0, 0.2, 1.7] {
                let fd = (relaxed_fire(x + h, alpha) - relaxed_fire(x - h, alpha)) / (2.0 * h);
                let an = surrogate_grad(x, alpha);
                let rel = (fd - an).abs() / an.abs().max(1e-12);
                assert!(rel < 1e-6, "alpha={alpha} x={x}: fd={fd} analytic={an}");
            }
        }
    }

    #[test]
    fn param_validation() {
        let ok = LifParams::<f32>::default();
        assert!(ok.validate().is_ok());
        assert!(LifParams { tau_m: 0.5, ..ok }.validate().is_err());
        assert!(LifParams { v_reset: 1.0, v_th0: 1.0, ..ok }.validate().is_err());
        assert!(LifParams { tau_th: 0.0, ..ok }.validate().is_err());
        assert!(LifParams { tau_th: 1.1, ..ok }.validate().is_err());
        assert!(LifParams { gamma: -0.1, ..ok }.validate().is_err());
        assert!(LifParams { alpha: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn memoryless_when_tau_m_is_one() {
        // tau_m=1 discards the previous potential entirely, so spikes
        // depend only on the current input and threshold.
        let p = LifParams { tau_m: 1.0, ..LifParams::<f64>::default() };
        let input = [0.3, 1.4, 0.9, 1.0];
        let mut a = LifState::new(4, &p);
        let mut b = LifState::new(4, &p);
        let mut rng_vals = [7.5, -2.0, 0.1, 3.3];
        for step in 0..20 {
            // Scramble one copy's potentials before each step.
            for (v, r) in b.v.iter_mut().zip(rng_vals.iter()) {
                *v = r * (step as f64 + 1.0);
            }
            let oa = lif_step(&mut a, &input, &p).unwrap();
            let ob = lif_step(&mut b, &input, &p).unwrap();
            assert_eq!(oa, ob);
            rng_vals.rotate_left(1);
        }
    }

    proptest! {
        #[test]
        fn spikes_are_binary_and_states_consistent(
            inputs in proptest::collection::vec(-2.0f64..3.0, 1..50),
            tau_m in 1.0f64..4.0,
            tau_th in 0.05f64..1.0,
            gamma in 0.0f64..0.5,
            steps in 1usize..30,
        ) {
            let p = LifParams {
                tau_m,
                v_reset: 0.0,
                v_th0: 1.0,
                tau_th,
                gamma,
                alpha: 1.0,
            };
            let mut state = LifState::new(inputs.len(), &p);
            for _ in 0..steps {
                let th_before = state.v_th.clone();
                let spikes = lif_step(&mut state, &inputs, &p).unwrap();
                for (j, &o) in spikes.iter().enumerate() {
                    prop_assert!(o == 0.0 || o == 1.0, "spike not binary");
                    // Exactly one of: fired and reset, or silent below the
                    // pre-update threshold.
                    if o == 1.0 {
                        prop_assert_eq!(state.v[j], p.v_reset);
                    } else {
                        prop_assert!(state.v[j] < th_before[j]);
                    }
                }
            }
        }

        #[test]
        fn threshold_stays_in_bounds(seed in 0u64..500) {
            use rand::Rng;
            let p = LifParams::<f64> {
                tau_m: 1.0,
                v_reset: 0.0,
                v_th0: 1.0,
                tau_th: 0.7,
                gamma: 0.2,
                alpha: 1.0,
            };
            let bound = (p.v_th0).max(p.gamma / (1.0 - p.tau_th));
            let mut rng = crate::rng::StreamSeed::new(seed).rng();
            let mut v_th = p.v_th0;
            for _ in 0..20 {
                let o = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                v_th = threshold_update(v_th, o, p.tau_th, p.gamma);
                prop_assert!(v_th > 0.0);
                prop_assert!(v_th <= bound + 1e-12, "threshold {} above bound {}", v_th, bound);
            }
        }
    }

    #[test]
    fn silent_threshold_decays_geometrically() {
        let p = LifParams::<f32>::default();
        let mut state = LifState::new(1, &p);
        let mut expected = p.v_th0;
        for _ in 0..25 {
            lif_step(&mut state, &[-1.0], &p).unwrap();
            expected *= p.tau_th;
            assert_eq!(state.v_th[0], expected, "decay must match the iterated product");
        }
    }
}
