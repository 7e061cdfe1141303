//! Adam with bias correction. Per-entry state matches the parameter layout;
//! callers must pass parameters and gradients in a stable order.

use super::dense::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u32,
}

impl AdamState {
    pub fn new(params: &[DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> =
            params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, hp: &AdamParams, params: &mut [DenseMatrix], grads: &[DenseMatrix]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);

        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv = hp.beta1 * *mv + (1.0 - hp.beta1) * gv;
            }
            let v = self.v[i].data_mut();
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = hp.beta2 * *vv + (1.0 - hp.beta2) * gv * gv;
            }
            let p = params[i].data_mut();
            for ((pv, mv), vv) in p.iter_mut().zip(self.m[i].data()).zip(self.v[i].data()) {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *pv -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
    }
}
