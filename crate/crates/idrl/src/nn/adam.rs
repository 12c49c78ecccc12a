//! Adam with bias correction.

use super::tape::Arr;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Arr>,
    pub v: Vec<Arr>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|&(r, c)| Arr::zeros((r, c))).collect(),
            v: shapes.iter().map(|&(r, c)| Arr::zeros((r, c))).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[&Arr]) -> Self {
        Self::new(&params.iter().map(|p| p.dim()).collect::<Vec<_>>())
    }

    /// One update: params[i] -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn apply(&mut self, params: &mut [&mut Arr], grads: &[Arr], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.dim(), g.dim());
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(&mut **p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}
