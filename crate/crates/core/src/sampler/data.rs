use std::ops::Range;

use nalgebra::DMatrix;

use crate::types::{Connectome, Dataset};

/// Read-only views of a dataset in the layouts the updates need.
#[derive(Debug, Clone)]
pub struct ModelData<'a> {
    pub dataset: &'a Dataset,
    /// Every scan, subject-major.
    pub layers: Vec<&'a Connectome>,
    pub layer_subject: Vec<usize>,
    pub subject_layers: Vec<Range<usize>>,
    /// Covariates with intercept, `N x (P + 1)`.
    pub design: DMatrix<f64>,
    pub xtx: DMatrix<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub zz: f64,
}

impl<'a> ModelData<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        let n = dataset.n_subjects();
        let p1 = dataset.n_covariates + 1;
        let design = DMatrix::from_fn(n, p1, |i, c| dataset.subjects[i].covariates[c]);
        let xtx = design.tr_mul(&design);
        let mut layers = Vec::new();
        let mut layer_subject = Vec::new();
        let mut subject_layers = Vec::with_capacity(n);
        for (i, s) in dataset.subjects.iter().enumerate() {
            let start = layers.len();
            for a in &s.connectomes {
                layers.push(a);
                layer_subject.push(i);
            }
            subject_layers.push(start..layers.len());
        }
        let z = dataset.exposures();
        let zz = z.iter().map(|x| x * x).sum();
        Self {
            dataset,
            layers,
            layer_subject,
            subject_layers,
            design,
            xtx,
            y: dataset.outcomes(),
            z,
            zz,
        }
    }

    #[inline]
    pub fn n_subjects(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.dataset.n_nodes
    }

    /// Covariate dimension including the intercept.
    #[inline]
    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// `x_i^T b`.
    #[inline]
    pub fn x_dot(&self, i: usize, b: &[f64]) -> f64 {
        b.iter()
            .enumerate()
            .map(|(c, bc)| self.design[(i, c)] * bc)
            .sum()
    }
}
