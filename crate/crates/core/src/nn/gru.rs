use rand::Rng;

use super::{check_len, matvec, matvec_t_acc, outer_acc, sigmoid, ParamTensor, Parameterized};
use crate::error::{Error, Result};

/// Gated recurrent unit run from a zero initial state.
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    input_dim: usize,
    hidden_dim: usize,
    wz: ParamTensor,
    uz: ParamTensor,
    bz: ParamTensor,
    wr: ParamTensor,
    ur: ParamTensor,
    br: ParamTensor,
    wn: ParamTensor,
    un: ParamTensor,
    bn: ParamTensor,
}

#[derive(Debug, Clone)]
struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache {
    steps: Vec<GruStep>,
}

impl GruCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Shape("GRU dimensions must be positive".into()));
        }
        let w = |g: &str, rng: &mut R| ParamTensor::glorot(format!("{name}.w{g}"), hidden_dim, input_dim, rng);
        let u = |g: &str, rng: &mut R| ParamTensor::glorot(format!("{name}.u{g}"), hidden_dim, hidden_dim, rng);
        let b = |g: &str| ParamTensor::zeros(format!("{name}.b{g}"), &[hidden_dim]);
        Ok(Self {
            input_dim,
            hidden_dim,
            wz: w("z", rng),
            uz: u("z", rng),
            bz: b("z"),
            wr: w("r", rng),
            ur: u("r", rng),
            br: b("r"),
            wn: w("n", rng),
            un: u("n", rng),
            bn: b("n"),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// One recurrence step.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        check_len("GRU input", x.len(), self.input_dim)?;
        check_len("GRU hidden", h.len(), self.hidden_dim)?;
        Ok(self.step_cached(x, h).0)
    }

    fn gate(&self, w: &ParamTensor, u: &ParamTensor, b: &ParamTensor, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = self.hidden_dim;
        let mut wx = vec![0.0; hd];
        let mut uh = vec![0.0; hd];
        matvec(&w.value, self.input_dim, x, &mut wx);
        matvec(&u.value, hd, h, &mut uh);
        (0..hd).map(|i| wx[i] + uh[i] + b.value[i]).collect()
    }

    fn step_cached(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStep) {
        let z: Vec<f64> = self.gate(&self.wz, &self.uz, &self.bz, x, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.gate(&self.wr, &self.ur, &self.br, x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = self.gate(&self.wn, &self.un, &self.bn, x, &rh).into_iter().map(f64::tanh).collect();
        let h_new = (0..self.hidden_dim).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
        (
            h_new,
            GruStep {
                x: x.to_vec(),
                h_prev: h.to_vec(),
                z,
                r,
                n,
                rh,
            },
        )
    }

    /// Final hidden state after scanning `seq`; the zero vector for an empty sequence.
    pub fn forward<V: AsRef<[f64]>>(&self, seq: &[V]) -> Result<(Vec<f64>, GruCache)> {
        let mut h = vec![0.0; self.hidden_dim];
        let mut cache = GruCache {
            steps: Vec::with_capacity(seq.len()),
        };
        for x in seq {
            let x = x.as_ref();
            check_len("GRU input", x.len(), self.input_dim)?;
            let (next, step) = self.step_cached(x, &h);
            cache.steps.push(step);
            h = next;
        }
        Ok((h, cache))
    }

    pub fn predict<V: AsRef<[f64]>>(&self, seq: &[V]) -> Result<Vec<f64>> {
        self.forward(seq).map(|(h, _)| h)
    }

    /// Backpropagation through time; returns the gradient for each input.
    pub fn backward(&mut self, cache: &GruCache, dh_final: &[f64]) -> Vec<Vec<f64>> {
        let hd = self.hidden_dim;
        let id = self.input_dim;
        let mut dh = dh_final.to_vec();
        let mut dxs = vec![vec![0.0; id]; cache.steps.len()];
        for (t, s) in cache.steps.iter().enumerate().rev() {
            let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * s.z[i]).collect();
            let dn_pre: Vec<f64> = (0..hd)
                .map(|i| dh[i] * (1.0 - s.z[i]) * (1.0 - s.n[i] * s.n[i]))
                .collect();
            let dz_pre: Vec<f64> = (0..hd)
                .map(|i| dh[i] * (s.h_prev[i] - s.n[i]) * s.z[i] * (1.0 - s.z[i]))
                .collect();

            // candidate
            outer_acc(&mut self.wn.grad, &dn_pre, &s.x);
            outer_acc(&mut self.un.grad, &dn_pre, &s.rh);
            self.bn.grad.iter_mut().zip(&dn_pre).for_each(|(g, d)| *g += d);
            matvec_t_acc(&self.wn.value, id, &dn_pre, &mut dxs[t]);
            let mut drh = vec![0.0; hd];
            matvec_t_acc(&self.un.value, hd, &dn_pre, &mut drh);
            let dr_pre: Vec<f64> = (0..hd)
                .map(|i| drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
                .collect();
            for i in 0..hd {
                dh_prev[i] += drh[i] * s.r[i];
            }

            // update and reset gates
            for (w, u, b, dpre) in [
                (&mut self.wz, &mut self.uz, &mut self.bz, &dz_pre),
                (&mut self.wr, &mut self.ur, &mut self.br, &dr_pre),
            ] {
                outer_acc(&mut w.grad, dpre, &s.x);
                outer_acc(&mut u.grad, dpre, &s.h_prev);
                b.grad.iter_mut().zip(dpre).for_each(|(g, d)| *g += d);
                matvec_t_acc(&w.value, id, dpre, &mut dxs[t]);
                matvec_t_acc(&u.value, hd, dpre, &mut dh_prev);
            }
            dh = dh_prev;
        }
        dxs
    }
}

impl Parameterized for GruCell {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        for p in [
            &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wn, &self.un, &self.bn,
        ] {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        for p in [
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wn,
            &mut self.un,
            &mut self.bn,
        ] {
            f(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_sequence_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = GruCell::new("gru", 3, 5, &mut rng).unwrap();
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(gru.predict(&empty).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn one_step_matches_gate_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut gru = GruCell::new("gru", 2, 2, &mut rng).unwrap();
        gru.bz.value = vec![0.1, -0.2];
        gru.br.value = vec![0.3, 0.0];
        gru.bn.value = vec![-0.4, 0.5];
        let x = [0.7, -1.1];
        // From h0 = 0 the recurrent terms vanish:
        // z = s(Wz x + bz), n = tanh(Wn x + bn), h1 = (1 - z) n.
        let lin = |w: &ParamTensor, b: &ParamTensor, i: usize| {
            w.value[i * 2] * x[0] + w.value[i * 2 + 1] * x[1] + b.value[i]
        };
        let expected: Vec<f64> = (0..2)
            .map(|i| {
                let z = 1.0 / (1.0 + (-lin(&gru.wz, &gru.bz, i)).exp());
                let n = lin(&gru.wn, &gru.bn, i).tanh();
                (1.0 - z) * n
            })
            .collect();
        let got = gru.predict(&[x.to_vec()]).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = GruCell::new("gru", 3, 4, &mut rng).unwrap();
        assert!(matches!(gru.predict(&[vec![0.0; 2]]), Err(Error::Shape(_))));
        assert!(gru.step(&[0.0; 3], &[0.0; 3]).is_err());
    }
}
