use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, Scalar};
use crate::error::{Error, Result};

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>) -> Self {
        Self::with_betas(net, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(net: &Mlp<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step<T: Scalar>(net: &mut Mlp<T>, grads: &Gradients<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    for g in [grads, &state.m, &state.v] {
        if !g.is_congruent(net) {
            return Err(Error::Shape {
                context: "adam step",
                expected: net.param_count(),
                got: g.len(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = T::from_f64(lr);
    let eps = T::from_f64(state.eps);

    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        };
        update(layer.weights_mut(), &g.weights, &mut m.weights, &mut v.weights);
        update(layer.bias_mut(), &g.bias, &mut m.bias, &mut v.bias);
    }
    Ok(())
}

/// `target ← τ·online + (1−τ)·target`.
pub fn soft_update<T: Scalar>(target: &mut Mlp<T>, online: &Mlp<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    if !target.is_congruent(online) {
        return Err(Error::Shape {
            context: "soft update",
            expected: target.param_count(),
            got: online.param_count(),
        });
    }
    if tau == 0.0 {
        return Ok(());
    }
    if tau == 1.0 {
        *target = online.clone();
        return Ok(());
    }
    let a = T::from_f64(tau);
    let b = T::one() - a;
    for (tl, ol) in target.layers_mut().iter_mut().zip(online.layers()) {
        for (t, &o) in tl.weights_mut().iter_mut().zip(ol.weights()) {
            *t = a * o + b * *t;
        }
        for (t, &o) in tl.bias_mut().iter_mut().zip(ol.bias()) {
            *t = a * o + b * *t;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn scalar_net(w: f64) -> Mlp<f64> {
        Mlp::from_layers(vec![Layer::new(1, 1, Activation::Identity, vec![w], vec![0.0]).unwrap()]).unwrap()
    }

    fn grad_of(net: &Mlp<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros_like(net);
        grads.layers[0].weights[0] = g;
        grads
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut net = scalar_net(0.0);
        let mut st = AdamState::new(&net);
        let g = grad_of(&net, 2.0);
        adam_step(&mut net, &g, &mut st, 0.001).unwrap();
        let theta = net.layers()[0].weights()[0];
        assert!((theta + 0.001).abs() < 1e-6);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = scalar_net(0.7);
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let g = Gradients::zeros_like(&net);
        adam_step(&mut net, &g, &mut st, 0.01).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn two_steps_match_hand_rolled_adam() {
        // Reference: plain scalar Adam written out longhand.
        let (lr, b1, b2, eps) = (0.001f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut theta = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }

        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net);
        for _ in 0..2 {
            let w = net.layers()[0].weights()[0];
            let g = grad_of(&net, w);
            adam_step(&mut net, &g, &mut st, lr).unwrap();
        }
        assert!((net.layers()[0].weights()[0] - theta).abs() < 1e-12);
        assert!(st.v.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn bad_lr_and_shape_rejected() {
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net);
        let g = grad_of(&net, 1.0);
        assert!(adam_step(&mut net, &g, &mut st, 0.0).is_err());
        let other = Mlp::<f64>::zeros(&[2, 1], Activation::Identity, Activation::Identity).unwrap();
        let g2 = Gradients::zeros_like(&other);
        assert!(adam_step(&mut net, &g2, &mut st, 0.1).is_err());
    }

    #[test]
    fn soft_update_endpoints_and_midpoint() {
        let online = Mlp::from_layers(vec![
            Layer::new(2, 2, Activation::Relu, vec![1.0; 4], vec![1.0; 2]).unwrap()
        ])
        .unwrap();
        let zero = Mlp::<f64>::zeros(&[2, 2], Activation::Relu, Activation::Relu).unwrap();

        let mut t = zero.clone();
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut t = zero.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, zero);

        let mut t = zero.clone();
        soft_update(&mut t, &online, 0.5).unwrap();
        assert!(t.params_flat().iter().all(|&v| v == 0.5));

        assert!(soft_update(&mut t, &online, 1.5).is_err());
        assert!(soft_update(&mut t, &online, -0.1).is_err());
    }
}
