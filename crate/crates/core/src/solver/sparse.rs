//! Symmetric matrices stored by row envelope (skyline) and their
//! in-place Cholesky factorization. Row `i` holds columns `start[i]..=i`;
//! Cholesky fill-in stays inside this envelope, which is what makes a
//! time-ordered batch cheap to factor.

#[derive(Debug, Clone, PartialEq)]
pub struct SkylineMatrix {
    start: Vec<usize>,
    ptr: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// `start[i] ≤ i` is the first stored column of row `i`.
    pub fn new(start: Vec<usize>) -> Self {
        let mut ptr = Vec::with_capacity(start.len() + 1);
        let mut total = 0;
        for (i, &s) in start.iter().enumerate() {
            assert!(s <= i, "envelope start beyond diagonal at row {i}");
            ptr.push(total);
            total += i - s + 1;
        }
        ptr.push(total);
        Self { start, ptr, data: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.ptr[i]..self.ptr[i + 1]]
    }

    /// Adds `v` at `(i, j)` and, implicitly, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(j >= self.start[i], "entry ({i}, {j}) outside envelope");
        self.data[self.ptr[i] + j - self.start[i]] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.start[i] {
            0.0
        } else {
            self.data[self.ptr[i] + j - self.start[i]]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[self.ptr[i + 1] - 1]).collect()
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        let k = self.ptr[i + 1] - 1;
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            let s = self.start[i];
            let row = self.row(i);
            for (off, &a) in row.iter().enumerate() {
                let j = s + off;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Factors in place. A pivot at or below `pivot_floor[i]` fails with the
    /// offending row.
    pub fn cholesky(mut self, pivot_floor: &[f64]) -> Result<SkylineCholesky, usize> {
        let n = self.dim();
        for i in 0..n {
            let si = self.start[i];
            let pi = self.ptr[i];
            for j in si..=i {
                let sj = self.start[j];
                let k0 = si.max(sj);
                let mut sum = self.data[pi + j - si];
                if k0 < j {
                    let pj = self.ptr[j];
                    let a = &self.data[pi + k0 - si..pi + j - si];
                    let b = &self.data[pj + k0 - sj..pj + j - sj];
                    sum -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                }
                if j < i {
                    let djj = self.data[self.ptr[j + 1] - 1];
                    self.data[pi + j - si] = sum / djj;
                } else {
                    if !(sum > pivot_floor[i]) {
                        return Err(i);
                    }
                    self.data[pi + j - si] = sum.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    /// Solves `A·x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let l = &self.l;
        let n = l.dim();
        for i in 0..n {
            let s = l.start[i];
            let row = l.row(i);
            let dot: f64 = row[..i - s].iter().zip(&b[s..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - dot) / row[i - s];
        }
        for i in (0..n).rev() {
            let s = l.start[i];
            let row = l.row(i);
            b[i] /= row[i - s];
            let xi = b[i];
            for (off, &a) in row[..i - s].iter().enumerate() {
                b[s + off] -= a * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::SplitMix64;
    use nalgebra::{DMatrix, DVector};

    fn random_banded(n: usize, seed: u64) -> (SkylineMatrix, DMatrix<f64>) {
        let mut rng = SplitMix64::new(seed);
        let start: Vec<usize> = (0..n).map(|i| i.saturating_sub((rng.next_u64() % 5) as usize)).collect();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in start[i]..i {
                let v = rng.next_f64() - 0.5;
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            dense[(i, i)] = 4.0 + rng.next_f64();
        }
        let mut sky = SkylineMatrix::new(start.clone());
        for i in 0..n {
            for j in start[i]..=i {
                sky.add(i, j, dense[(i, j)]);
            }
        }
        (sky, dense)
    }

    #[test]
    fn matches_dense_solve() {
        for seed in 0..5 {
            let (sky, dense) = random_banded(40, seed);
            let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
            let y = sky.mul_vec(&b);
            let y_dense = &dense * DVector::from_column_slice(&b);
            assert!((DVector::from_vec(y) - y_dense).amax() < 1e-12);
            let mut x = b.clone();
            sky.cholesky(&[0.0; 40]).unwrap().solve(&mut x);
            let expect = dense.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            assert!((DVector::from_vec(x) - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn reports_failing_pivot() {
        let mut m = SkylineMatrix::new(vec![0, 0, 2]);
        m.add(0, 0, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(2, 2, 1.0);
        assert_eq!(m.cholesky(&[1e-14; 3]).err(), Some(1));
    }

    #[test]
    fn symmetric_access() {
        let mut m = SkylineMatrix::new(vec![0, 0, 1]);
        m.add(0, 1, 2.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(2, 0), 0.0);
        assert_eq!(m.stored(), 5);
    }
}
