use super::ModelParams;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ModelParams::glorot(2, 3, 1, 2, 5);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.head.weight.as_mut_slice()[0] = 4.0;
        g.head.weight.as_mut_slice()[1] = -0.01;
        let mut opt = Adam::new(&p, 0.1);
        opt.step(&mut p, &g);
        let d0 = p.head.weight.as_slice()[0] - before.head.weight.as_slice()[0];
        let d1 = p.head.weight.as_slice()[1] - before.head.weight.as_slice()[1];
        assert!((d0 + 0.1).abs() < 1e-8);
        assert!((d1 - 0.1).abs() < 1e-5);
        assert_eq!(p.layers, before.layers);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ModelParams::glorot(1, 2, 1, 2, 1);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let mut g = p.clone();
            g.tensors_mut().iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x *= 2.0));
            opt.step(&mut p, &g);
        }
        assert!(p.tensors().iter().all(|t| t.iter().all(|x| x.abs() < 1e-2)));
    }
}
