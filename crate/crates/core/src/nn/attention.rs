use rand::Rng;

use super::{check_len, matvec, matvec_t_acc, outer_acc, ParamTensor, Parameterized};
use crate::error::{Error, Result};

/// Multi-head self-attention followed by mean pooling over the sequence.
///
/// No positional encoding is applied, so the pooled output is a symmetric
/// function of the input set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    heads: usize,
    dim: usize,
    wq: ParamTensor,
    wk: ParamTensor,
    wv: ParamTensor,
    wo: ParamTensor,
    bo: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    n: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]` softmax weights.
    probs: Vec<f64>,
    mean_out: Vec<f64>,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Shape(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            dim,
            wq: ParamTensor::glorot(format!("{name}.wq"), dim, dim, rng),
            wk: ParamTensor::glorot(format!("{name}.wk"), dim, dim, rng),
            wv: ParamTensor::glorot(format!("{name}.wv"), dim, dim, rng),
            wo: ParamTensor::glorot(format!("{name}.wo"), dim, dim, rng),
            bo: ParamTensor::zeros(format!("{name}.bo"), &[dim]),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<V: AsRef<[f64]>>(&self, items: &[V]) -> Result<(Vec<f64>, AttentionCache)> {
        let n = items.len();
        if n == 0 {
            return Err(Error::EmptyInput("attention sequence"));
        }
        let d = self.dim;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();

        let mut x = Vec::with_capacity(n * d);
        for item in items {
            let item = item.as_ref();
            check_len("attention item", item.len(), d)?;
            x.extend_from_slice(item);
        }
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            matvec(&self.wq.value, d, xi, &mut q[i * d..(i + 1) * d]);
            matvec(&self.wk.value, d, xi, &mut k[i * d..(i + 1) * d]);
            matvec(&self.wv.value, d, xi, &mut v[i * d..(i + 1) * d]);
        }

        let mut probs = vec![0.0; self.heads * n * n];
        let mut mean_out = vec![0.0; d];
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..n {
                let qi = &q[i * d + cols.start..i * d + cols.end];
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for (j, p) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + cols.start..j * d + cols.end];
                    *p = super::dot(qi, kj) * scale;
                    max = max.max(*p);
                }
                let mut sum = 0.0;
                for p in row.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                for (j, p) in row.iter_mut().enumerate() {
                    *p /= sum;
                    let vj = &v[j * d + cols.start..j * d + cols.end];
                    for (o, &val) in mean_out[cols.clone()].iter_mut().zip(vj) {
                        *o += *p * val;
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        mean_out.iter_mut().for_each(|o| *o *= inv_n);

        let mut pooled = vec![0.0; d];
        matvec(&self.wo.value, d, &mean_out, &mut pooled);
        pooled.iter_mut().zip(&self.bo.value).for_each(|(p, b)| *p += b);

        Ok((
            pooled,
            AttentionCache {
                n,
                x,
                q,
                k,
                v,
                probs,
                mean_out,
            },
        ))
    }

    pub fn predict<V: AsRef<[f64]>>(&self, items: &[V]) -> Result<Vec<f64>> {
        self.forward(items).map(|(y, _)| y)
    }

    /// Returns the gradient with respect to each input item.
    pub fn backward(&mut self, cache: &AttentionCache, dpooled: &[f64]) -> Vec<Vec<f64>> {
        let n = cache.n;
        let d = self.dim;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();

        self.bo.grad.iter_mut().zip(dpooled).for_each(|(g, d)| *g += d);
        outer_acc(&mut self.wo.grad, dpooled, &cache.mean_out);
        let mut dmean = vec![0.0; d];
        matvec_t_acc(&self.wo.value, d, dpooled, &mut dmean);
        // Mean pooling spreads the gradient evenly over every output row.
        let dout: Vec<f64> = dmean.iter().map(|g| g / n as f64).collect();

        let mut dq = vec![0.0; n * d];
        let mut dk_buf = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dscore = vec![0.0; n];
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            let dout_h = &dout[cols.clone()];
            for i in 0..n {
                let row = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut weighted = 0.0;
                for j in 0..n {
                    let vj = &cache.v[j * d + cols.start..j * d + cols.end];
                    let dp = super::dot(dout_h, vj);
                    dscore[j] = dp;
                    weighted += row[j] * dp;
                    for (g, &o) in dv[j * d + cols.start..j * d + cols.end].iter_mut().zip(dout_h) {
                        *g += row[j] * o;
                    }
                }
                for j in 0..n {
                    let ds = row[j] * (dscore[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in cols.clone() {
                        dq[i * d + c] += ds * cache.k[j * d + c];
                        dk_buf[j * d + c] += ds * cache.q[i * d + c];
                    }
                }
            }
        }

        let mut dx = vec![vec![0.0; d]; n];
        for i in 0..n {
            let xi = &cache.x[i * d..(i + 1) * d];
            let span = i * d..(i + 1) * d;
            for (w, grads) in [
                (&mut self.wq, &dq[span.clone()]),
                (&mut self.wk, &dk_buf[span.clone()]),
                (&mut self.wv, &dv[span.clone()]),
            ] {
                outer_acc(&mut w.grad, grads, xi);
                matvec_t_acc(&w.value, d, grads, &mut dx[i]);
            }
        }
        dx
    }
}

impl Parameterized for AttentionBlock {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        for p in [&self.wq, &self.wk, &self.wv, &self.wo, &self.bo] {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        for p in [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
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

    fn random_items(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn single_item_is_value_then_output_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = AttentionBlock::new("att", 8, 2, &mut rng).unwrap();
        block.bo.value.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.1);
        let x = random_items(1, 8, &mut rng);
        let mut v = vec![0.0; 8];
        matvec(&block.wv.value, 8, &x[0], &mut v);
        let mut expected = vec![0.0; 8];
        matvec(&block.wo.value, 8, &v, &mut expected);
        expected.iter_mut().zip(&block.bo.value).for_each(|(e, b)| *e += b);
        let got = block.predict(&x).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_output_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = AttentionBlock::new("att", 8, 2, &mut rng).unwrap();
        let mut x = random_items(5, 8, &mut rng);
        let a = block.predict(&x).unwrap();
        x.reverse();
        x.swap(0, 2);
        let b = block.predict(&x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(AttentionBlock::new("att", 6, 4, &mut rng).is_err());
        let block = AttentionBlock::new("att", 4, 2, &mut rng).unwrap();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(block.predict(&empty), Err(Error::EmptyInput(_))));
        assert!(matches!(block.predict(&[vec![0.0; 3]]), Err(Error::Shape(_))));
    }
}
