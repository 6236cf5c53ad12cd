//! Named dense parameter tensors and matching gradient buffers.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Zero-mean uniform with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Uniform(f64, f64),
    Constant(f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter {name}"
        );
        let mut t = Tensor::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::FanIn(fan_in) => {
                let bound = (3.0 / fan_in.max(1) as f64).sqrt();
                t.data.iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
            }
            Init::Uniform(lo, hi) => t.data.iter_mut().for_each(|x| *x = rng.gen_range(lo..=hi)),
            Init::Constant(c) => t.data.iter_mut().for_each(|x| *x = c),
        }
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Order-sensitive FNV-1a digest over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            for x in &t.data {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            data: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn zero(&mut self) {
        self.data.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }

    pub fn global_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// First non-finite entry as `(param index, element index)`.
    pub fn first_non_finite(&self) -> Option<(ParamId, usize)> {
        self.data.iter().enumerate().find_map(|(p, g)| {
            g.iter().position(|x| !x.is_finite()).map(|i| (ParamId(p), i))
        })
    }
}
