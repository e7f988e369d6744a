/// iRprop⁻ hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpropParams {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta0: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for RpropParams {
    fn default() -> Self {
        RpropParams {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta0: 0.1,
            delta_min: 1e-9,
            delta_max: 10.0,
        }
    }
}

/// Per-weight step sizes and the gradient seen on the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub params: RpropParams,
    pub step: Vec<f64>,
    pub prev_grad: Vec<f64>,
}

impl RpropState {
    pub fn new(len: usize, params: RpropParams) -> Self {
        RpropState {
            params,
            step: vec![params.delta0; len],
            prev_grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step.is_empty()
    }
}

/// One iRprop⁻ update of `weights` against `grads`, in place.
///
/// On a sign change the step shrinks and the stored gradient is zeroed, so
/// that weight does not move this iteration and the next one does not
/// adapt its step.
pub fn irprop_minus_step(state: &mut RpropState, grads: &[f64], weights: &mut [f64]) {
    assert_eq!(grads.len(), state.len(), "gradient length");
    assert_eq!(weights.len(), state.len(), "weight length");
    let p = state.params;
    for (((w, &g), step), prev) in weights
        .iter_mut()
        .zip(grads)
        .zip(state.step.iter_mut())
        .zip(state.prev_grad.iter_mut())
    {
        let mut g = g;
        let trend = g * *prev;
        if trend > 0.0 {
            *step = (*step * p.eta_plus).min(p.delta_max);
        } else if trend < 0.0 {
            *step = (*step * p.eta_minus).max(p.delta_min);
            g = 0.0;
        }
        if g > 0.0 {
            *w -= *step;
        } else if g < 0.0 {
            *w += *step;
        }
        *prev = g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_quadratic_converges() {
        let mut state = RpropState::new(1, RpropParams::default());
        let mut w = [0.0];
        let mut reached = None;
        for i in 0..100 {
            let g = [2.0 * (w[0] - 3.0)];
            irprop_minus_step(&mut state, &g, &mut w);
            if (w[0] - 3.0).abs() <= 1e-3 && reached.is_none() {
                reached = Some(i + 1);
            }
        }
        assert!(reached.is_some());
        assert!((w[0] - 3.0).abs() <= 1e-3, "{}", w[0]);
    }

    #[test]
    fn steps_compound_with_constant_sign() {
        let mut state = RpropState::new(1, RpropParams::default());
        let mut w = [0.0];
        let mut used = Vec::new();
        for _ in 0..3 {
            let before = w[0];
            irprop_minus_step(&mut state, &[1.0], &mut w);
            used.push(before - w[0]);
        }
        for (got, want) in used.iter().zip([0.1, 0.12, 0.144]) {
            assert!((got - want).abs() < 1e-15, "{used:?}");
        }
    }

    #[test]
    fn sign_flip_halves_and_holds() {
        let mut state = RpropState::new(1, RpropParams::default());
        let mut w = [0.0];
        irprop_minus_step(&mut state, &[1.0], &mut w);
        irprop_minus_step(&mut state, &[1.0], &mut w);
        let before = w[0];
        irprop_minus_step(&mut state, &[-1.0], &mut w);
        assert_eq!(w[0], before);
        assert!((state.step[0] - 0.06).abs() < 1e-15);
        assert_eq!(state.prev_grad[0], 0.0);
        // next step uses the halved size without adapting it
        irprop_minus_step(&mut state, &[-1.0], &mut w);
        assert!((w[0] - before - 0.06).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_does_not_move() {
        let mut state = RpropState::new(2, RpropParams::default());
        let mut w = [1.0, 2.0];
        irprop_minus_step(&mut state, &[0.0, 0.0], &mut w);
        assert_eq!(w, [1.0, 2.0]);
    }

    #[test]
    fn step_bounds_hold_under_random_gradients() {
        let params = RpropParams::default();
        let mut state = RpropState::new(4, params);
        let mut w = [0.0; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20_000 {
            let g: Vec<f64> = (0..4)
                .map(|_| if rng.random_bool(0.9) { 1.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            irprop_minus_step(&mut state, &g, &mut w);
            assert!(state
                .step
                .iter()
                .all(|&s| (params.delta_min..=params.delta_max).contains(&s)));
        }
    }
}
