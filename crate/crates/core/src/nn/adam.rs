use super::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for every parameter group, created lazily on
/// the first step from the shapes passed in.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update over matching parameter and gradient groups.
    ///
    /// Panics if the groups do not line up with each other or with the
    /// shapes seen on the first step.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient group count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter groups changed between steps");
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = T::lit(1.0 - beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - beta2.powi(self.t as i32));
        let (b1, b2, eps, lr) = (T::lit(beta1), T::lit(beta2), T::lit(eps), T::lit(lr));
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            assert_eq!(p.len(), g.len(), "parameter/gradient length");
            assert_eq!(p.len(), m.len(), "parameter length changed between steps");
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out longhand.
    fn reference_step(x: f64, g: f64, m: &mut f64, v: &mut f64, t: i32, lr: f64) -> f64 {
        *m = 0.9 * *m + 0.1 * g;
        *v = 0.999 * *v + 0.001 * g * g;
        let mh = *m / (1.0 - 0.9f64.powi(t));
        let vh = *v / (1.0 - 0.999f64.powi(t));
        x - lr * mh / (vh.sqrt() + 1e-8)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0];
        st.step(&mut [&mut p], &[&[0.0, 0.0]], 0.1);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_on_square_matches_reference() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        let mut x = vec![1.0];
        let g = 2.0 * x[0];
        st.step(&mut [&mut x], &[&[g]], 0.1);
        let (mut m, mut v) = (0.0, 0.0);
        let expect = reference_step(1.0, 2.0, &mut m, &mut v, 1, 0.1);
        assert_eq!(x[0], expect);
        assert!((x[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn converges_on_square() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        let mut x = vec![1.0];
        let (mut rx, mut m, mut v) = (1.0, 0.0, 0.0);
        let mut reached = None;
        for step in 1..=200 {
            let g = 2.0 * x[0];
            st.step(&mut [&mut x], &[&[g]], 0.1);
            rx = reference_step(rx, 2.0 * rx, &mut m, &mut v, step, 0.1);
            assert!((x[0] - rx).abs() < 1e-12);
            if reached.is_none() && x[0].abs() < 1e-2 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "final x = {}", x[0]);
    }
}
