//! SGD with momentum, weight decay, and cosine-annealed learning rate.

use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `eta_t = eta0 * 0.5 * (1 + cos(pi * t / T))`.
pub fn cosine_lr(t: usize, t_total: usize, eta0: f64) -> f64 {
    assert!(t_total > 0 && t <= t_total, "need 0 <= t <= T, T > 0");
    eta0 * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / t_total as f64).cos())
}

#[derive(Debug, Clone)]
pub struct OptimizerState<F: Scalar> {
    pub buffers: Vec<Vec<Tensor<F>>>,
    pub eta0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub t: usize,
    pub t_total: usize,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(net: &Network<F>, eta0: f64, momentum: f64, weight_decay: f64, t_total: usize) -> Self {
        OptimizerState {
            buffers: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
                .collect(),
            eta0,
            momentum,
            weight_decay,
            t: 0,
            t_total: t_total.max(1),
        }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.t.min(self.t_total), self.t_total, self.eta0)
    }
}

/// One SGD step: `buf <- mom*buf + (grad + wd*p); p <- p - eta_t*buf`.
/// Pruning masks are reapplied afterwards and `t` is incremented.
pub fn sgd_step<F: Scalar>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    opt: &mut OptimizerState<F>,
) -> Result<()> {
    if grads.params.len() != net.layers.len() {
        return Err(Error::ShapeMismatch {
            a: "network".into(),
            b: "gradients".into(),
            detail: format!("{} layers vs {}", net.layers.len(), grads.params.len()),
        });
    }
    let eta = F::from_f64(opt.lr());
    let mom = F::from_f64(opt.momentum);
    let wd = F::from_f64(opt.weight_decay);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        for (pi, p) in layer.params.iter_mut().enumerate() {
            let g = &grads.params[li][pi];
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    a: format!("layer {li} param {pi}"),
                    b: "gradient".into(),
                    detail: format!("{:?} vs {:?}", p.shape(), g.shape()),
                });
            }
            let buf = &mut opt.buffers[li][pi];
            for i in 0..p.len() {
                let upd = g[i] + wd * p[i];
                buf[i] = mom * buf[i] + upd;
                p[i] = p[i] - eta * buf[i];
            }
        }
    }
    net.apply_masks();
    opt.t += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(0, 100, 0.1) - 0.1).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.1).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn plain_step_matches_formula() {
        // scalar p=1, grad=2, eta=0.1, no momentum/wd -> p=0.8
        use crate::diffnet::layer::LayerSpec;
        use crate::diffnet::network::instantiate;
        let specs = [LayerSpec::Flatten, LayerSpec::Dense { in_dim: 1, out_dim: 1 }];
        let mut net = instantiate::<f64>(&specs, &[1, 1, 1], 0).unwrap();
        net.layers[1].params[0] = Tensor::new(vec![1, 1], vec![1.0]);
        let mut opt = OptimizerState::new(&net, 0.1, 0.0, 0.0, 1000000);
        let mut grads = Gradients::zeros_like(&net);
        grads.params[1][0] = Tensor::new(vec![1, 1], vec![2.0]);
        sgd_step(&mut net, &grads, &mut opt).unwrap();
        assert!((net.layers[1].params[0][0] - 0.8).abs() < 1e-12);
        assert_eq!(opt.t, 1);
    }
}
