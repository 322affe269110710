//! Banded LU factorisation with partial pivoting.

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage reserves
/// `kl` extra super-diagonals for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(
            c + self.kl >= r && c + self.kl - r < self.width,
            "({r}, {c}) outside band"
        );
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.idx(r, c)]
    }

    /// Adds `v` at (`r`, `c`); the entry must lie within the declared band.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(
            c + self.kl >= r && c <= r + self.ku,
            "entry ({r}, {c}) outside declared band (kl = {}, ku = {})",
            self.kl,
            self.ku
        );
        let i = self.idx(r, c);
        self.data[i] += v;
    }

    /// Solves `A x = b` in place, destroying the matrix. Returns the index
    /// of the first zero pivot on failure.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&mut self, b: &mut [f64]) -> Result<(), usize> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let reach = self.ku + self.kl;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(k);
            }
            let cmax = (k + reach).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let (i, j) = (self.idx(k, c), self.idx(p, c));
                    self.data.swap(i, j);
                }
                b.swap(k, p);
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last {
                let a_rk = self.get(r, k);
                if a_rk == 0.0 {
                    continue;
                }
                let l = a_rk / pivot;
                let i = self.idx(r, k);
                self.data[i] = 0.0;
                for c in k + 1..=cmax {
                    let akc = self.get(k, c);
                    if akc != 0.0 {
                        let i = self.idx(r, c);
                        self.data[i] -= l * akc;
                    }
                }
                b[r] -= l * b[k];
            }
        }
        for k in (0..n).rev() {
            let cmax = (k + reach).min(n - 1);
            let mut s = b[k];
            for c in k + 1..=cmax {
                s -= self.get(k, c) * b[c];
            }
            b[k] = s / self.get(k, k);
        }
        Ok(())
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting, used as the oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for r in k + 1..n {
                let l = a[r][k] / a[k][k];
                for c in k..n {
                    a[r][c] -= l * a[k][c];
                }
                b[r] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn matches_dense_solver_on_random_band_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (30, 4, 4), (31, 2, 5), (40, 5, 1)] {
            let mut dense = vec![vec![0.0; n]; n];
            let mut band = BandMatrix::new(n, kl, ku);
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    // weak diagonal forces pivoting
                    let v: f64 = rng.random_range(-1.0..1.0) * if r == c { 0.01 } else { 1.0 };
                    dense[r][c] = v;
                    band.add(r, c, v);
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let expected = dense_solve(dense, b.clone());
            let mut x = b;
            band.solve(&mut x).unwrap();
            for (a, e) in x.iter().zip(&expected) {
                assert!((a - e).abs() <= 1e-8 * (1.0 + e.abs()), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let mut m = BandMatrix::new(3, 1, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, 0.0);
        m.add(2, 2, 1.0);
        assert_eq!(m.solve(&mut [1.0, 1.0, 1.0]), Err(1));
    }
}
