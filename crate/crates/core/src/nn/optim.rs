use super::model::Gradients;
use super::model::InpainterModel;
use super::tensor::Real;

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn step<T: Real>(&mut self, model: &mut InpainterModel<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for (p, g) in model.params_mut().iter_mut().zip(&grads.0) {
            let pairs = p.weight.data_mut().iter_mut().zip(g.weight.data()).chain(p.bias.iter_mut().zip(&g.bias));
            for (w, gv) in pairs {
                let gv = gv.to_f64().unwrap_or(0.0);
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gv;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gv * gv;
                let update = self.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
                *w = *w - T::lit(update);
                i += 1;
            }
        }
    }
}
