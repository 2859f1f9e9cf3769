use super::{NetError, Real, Result};

/// Dense `[batch, channels, length]` activation, row-major.
///
/// Feature vectors (embeddings, logits) use `length == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Self {
            n,
            c,
            l,
            data: vec![T::zero(); n * c * l],
        }
    }

    pub fn from_vec(n: usize, c: usize, l: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * l {
            return Err(NetError::ShapeMismatch(format!(
                "{} values for shape [{n}, {c}, {l}]",
                data.len()
            )));
        }
        Ok(Self { n, c, l, data })
    }

    /// Stacks equal-length waveforms into `[n, 1, len]`.
    pub fn from_waveforms<W: AsRef<[f32]>>(waves: &[W]) -> Result<Self> {
        let len = waves.first().map(|w| w.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(waves.len() * len);
        for w in waves {
            let w = w.as_ref();
            if w.len() != len {
                return Err(NetError::ShapeMismatch(format!(
                    "waveform of length {} in a batch of length {len}",
                    w.len()
                )));
            }
            data.extend(w.iter().map(|&s| T::of(s as f64)));
        }
        Ok(Self {
            n: waves.len(),
            c: 1,
            l: len,
            data,
        })
    }

    /// Stacks feature rows into `[n, dim, 1]`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(NetError::ShapeMismatch("ragged feature rows".into()));
        }
        Ok(Self {
            n: rows.len(),
            c: dim,
            l: 1,
            data: rows.concat(),
        })
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.l
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.sample(i).to_vec()).collect()
    }

    /// Concatenates along the batch axis.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        if a.c != b.c || a.l != b.l {
            return Err(NetError::ShapeMismatch(format!(
                "cannot concat [{}, {}] with [{}, {}]",
                a.c, a.l, b.c, b.l
            )));
        }
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Ok(Self {
            n: a.n + b.n,
            c: a.c,
            l: a.l,
            data,
        })
    }

    /// Splits the batch at `at` into two tensors.
    pub fn split(&self, at: usize) -> (Self, Self) {
        let cut = at * self.sample_len();
        (
            Self {
                n: at,
                c: self.c,
                l: self.l,
                data: self.data[..cut].to_vec(),
            },
            Self {
                n: self.n - at,
                c: self.c,
                l: self.l,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            c: self.c,
            l: self.l,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            n: self.n,
            c: self.c,
            l: self.l,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
