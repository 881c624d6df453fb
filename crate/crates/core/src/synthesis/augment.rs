use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PolytopicModel;

/// How a parameter-varying input matrix is turned into a constant one.
///
/// Inputs with a filter pole `p` are replaced by a filter state `x_f+ = p x_f + (1 - p) u`
/// that drives the plant through the original (varying) column. Inputs without a pole
/// keep a direct column, which must be constant across vertices or supplied in
/// `nominal_columns`. Integral states `z+ = z + T x_c` are appended for each listed
/// state channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub filter_poles: Vec<Option<f64>>,
    pub nominal_columns: Vec<Option<Vec<f64>>>,
    pub integral_channels: Vec<usize>,
}

impl AugmentSpec {
    pub fn filtered_inputs(&self) -> Vec<usize> {
        self.filter_poles.iter().enumerate().filter_map(|(j, p)| p.map(|_| j)).collect()
    }

    pub fn augmented_states(&self, n: usize) -> usize {
        n + self.filtered_inputs().len() + self.integral_channels.len()
    }
}

pub fn augment_dynamic_model(model: &PolytopicModel, spec: &AugmentSpec) -> Result<PolytopicModel> {
    let n = model.n_states();
    let m = model.n_inputs();
    if spec.filter_poles.len() != m || spec.nominal_columns.len() != m {
        return Err(Error::Config(format!("augmentation spec must describe all {m} inputs")));
    }
    for p in spec.filter_poles.iter().flatten() {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(Error::Config(format!("filter pole {p} must lie in (0, 1)")));
        }
    }
    if let Some(&c) = spec.integral_channels.iter().find(|&&c| c >= n) {
        return Err(Error::Config(format!("integral channel {c} is not a state")));
    }
    let filtered = spec.filtered_inputs();
    let nf = filtered.len();
    let na = spec.augmented_states(n);
    let t = model.sample_time;

    let mut direct = DMatrix::zeros(n, m);
    for j in 0..m {
        if spec.filter_poles[j].is_some() {
            continue;
        }
        match &spec.nominal_columns[j] {
            Some(col) if col.len() == n => direct.set_column(j, &DVector::from_column_slice(col)),
            Some(_) => return Err(Error::Config(format!("nominal column {j} has wrong length"))),
            None => {
                let c0 = model.vertex_b[0].column(j);
                if model.vertex_b.iter().any(|b| b.column(j) != c0) {
                    return Err(Error::Config(format!(
                        "input {j} varies across vertices; give it a filter pole or a nominal column"
                    )));
                }
                direct.set_column(j, &c0);
            }
        }
    }

    let mut b_aug = DMatrix::zeros(na, m);
    b_aug.view_mut((0, 0), (n, m)).copy_from(&direct);
    for (k, &j) in filtered.iter().enumerate() {
        b_aug[(n + k, j)] = 1.0 - spec.filter_poles[j].unwrap();
    }

    let vertex_a = model
        .vertex_a
        .iter()
        .zip(&model.vertex_b)
        .map(|(a, b)| {
            let mut aa = DMatrix::zeros(na, na);
            aa.view_mut((0, 0), (n, n)).copy_from(a);
            for (k, &j) in filtered.iter().enumerate() {
                aa.view_mut((0, n + k), (n, 1)).copy_from(&b.column(j));
                aa[(n + k, n + k)] = spec.filter_poles[j].unwrap();
            }
            for (k, &c) in spec.integral_channels.iter().enumerate() {
                let row = n + nf + k;
                aa[(row, row)] = 1.0;
                aa[(row, c)] = t;
            }
            aa
        })
        .collect();
    let e = model.e.as_ref().map(|e| {
        let mut ea = DVector::zeros(na);
        ea.rows_mut(0, n).copy_from(e);
        ea
    });
    PolytopicModel::new(vertex_a, vec![b_aug; model.vertex_count()], e, t, model.bounds.clone())
}
