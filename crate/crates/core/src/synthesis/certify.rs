use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gains::GainTable;
use super::terminal::TerminalSet;
use crate::models::{MembershipWeights, PolytopicModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { samples: 1000, tol: 1e-9, seed: 0x7d5e_11a0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub check: String,
    pub sample: usize,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    pub samples: usize,
    /// Largest `x+' S x+` over boundary samples.
    pub max_level: f64,
    /// Largest `|K x|_c / u_c` over boundary samples.
    pub max_input_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub vertex_spectral_radii: Vec<f64>,
    pub blend_samples: usize,
    pub blend_max_spectral_radius: f64,
    /// Largest eigenvalue of `Acl_i Y Acl_i' - Y` over vertices; negative certifies decrease.
    pub lyapunov_max_eig: f64,
    pub terminal: Option<TerminalReport>,
    pub witnesses: Vec<Witness>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.witnesses.is_empty()
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Uniform sample from the probability simplex.
fn random_blend(rng: &mut ChaCha8Rng, k: usize) -> MembershipWeights {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    MembershipWeights { weights: e.into_iter().map(|v| v / s).collect() }
}

/// Independent closed-loop checks of a synthesized gain table and optional terminal set.
pub fn certify(
    model: &PolytopicModel,
    gains: &GainTable,
    terminal: Option<&TerminalSet>,
    opts: &CertifyOptions,
) -> CertificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut witnesses = Vec::new();
    let acl = gains.closed_loop(model);

    let vertex_spectral_radii: Vec<f64> = acl.iter().map(spectral_radius).collect();
    for (i, r) in vertex_spectral_radii.iter().enumerate() {
        if !(*r < 1.0) {
            witnesses.push(Witness {
                check: "vertex spectral radius".into(),
                sample: i,
                value: *r,
                limit: 1.0,
            });
        }
    }

    let mut blend_max = 0.0f64;
    for k in 0..opts.samples {
        let w = random_blend(&mut rng, model.vertex_count());
        let a = model.blend_a(&w) + model.blend_b(&w) * gains.blend(&w);
        let r = spectral_radius(&a);
        blend_max = blend_max.max(r);
        if !(r < 1.0) {
            witnesses.push(Witness {
                check: "blended spectral radius".into(),
                sample: k,
                value: r,
                limit: 1.0,
            });
        }
    }

    let mut lyapunov_max_eig = f64::NEG_INFINITY;
    for (i, a) in acl.iter().enumerate() {
        let d = a * &gains.y * a.transpose() - &gains.y;
        let e = SymmetricEigen::new((&d + d.transpose()) * 0.5).eigenvalues.max();
        lyapunov_max_eig = lyapunov_max_eig.max(e);
        if !(e < 0.0) {
            witnesses.push(Witness {
                check: "common Lyapunov decrease".into(),
                sample: i,
                value: e,
                limit: 0.0,
            });
        }
    }

    let terminal = terminal.map(|t| {
        let n = model.n_states();
        let l_inv_t =
            t.s.clone()
                .cholesky()
                .and_then(|c| c.l().transpose().try_inverse())
                .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
        let mut max_level = 0.0f64;
        let mut max_ratio = 0.0f64;
        for k in 0..opts.samples {
            let dir = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &l_inv_t * (&dir / dir.norm());
            let w = random_blend(&mut rng, model.vertex_count());
            let kx = gains.blend(&w) * &x;
            let xn = (model.blend_a(&w) + model.blend_b(&w) * gains.blend(&w)) * &x;
            let level = t.level(&xn);
            max_level = max_level.max(level);
            if !(level <= 1.0 + opts.tol) {
                witnesses.push(Witness {
                    check: "terminal invariance".into(),
                    sample: k,
                    value: level,
                    limit: 1.0,
                });
            }
            for c in 0..kx.len() {
                let ratio = kx[c].abs() / t.u_bound[c];
                max_ratio = max_ratio.max(ratio);
                if !(kx[c].abs() <= t.u_bound[c] * (1.0 + opts.tol)) {
                    witnesses.push(Witness {
                        check: format!("terminal input channel {c}"),
                        sample: k,
                        value: kx[c].abs(),
                        limit: t.u_bound[c],
                    });
                }
            }
        }
        TerminalReport { samples: opts.samples, max_level, max_input_ratio: max_ratio }
    });

    CertificationReport {
        vertex_spectral_radii,
        blend_samples: opts.samples,
        blend_max_spectral_radius: blend_max,
        lyapunov_max_eig,
        terminal,
        witnesses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_kinematic_bounds, kinematic_polytope};
    use crate::opt::LmiSettings;
    use crate::synthesis::gains::{diag, synthesize_vertex_gains};
    use crate::synthesis::terminal::synthesize_terminal_set;

    #[test]
    fn identity_gain_on_unstable_model_fails() {
        let model = kinematic_polytope(&default_kinematic_bounds(), 0.1);
        // B = -0.1 I-ish; K = -I pushes eigenvalues above one
        let k = DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
        let table = GainTable {
            gains: vec![k; 8],
            y: DMatrix::identity(3, 3),
            w: vec![],
            q: diag(&[1.0, 1.0, 1.0]),
            r: diag(&[1.0, 1.0]),
            margin: 0.0,
        };
        let rep = certify(&model, &table, None, &CertifyOptions { samples: 50, ..Default::default() });
        assert!(!rep.passed());
        assert!(rep.witnesses.iter().any(|w| w.check == "vertex spectral radius"));
    }

    #[test]
    fn certified_synthesis_and_inflation() {
        let model = kinematic_polytope(&default_kinematic_bounds(), 0.1);
        let s = LmiSettings::default();
        let g = synthesize_vertex_gains(
            &model,
            &diag(&[1.0, 1.5, 3.0]),
            &diag(&[1.0, 3.0]),
            crate::synthesis::GainObjective::default(),
            &s,
        )
        .unwrap();
        let t = synthesize_terminal_set(&model, &g, &DVector::from_vec(vec![18.0, 1.4]), &s).unwrap();
        let opts = CertifyOptions::default();
        let rep = certify(&model, &g, Some(&t), &opts);
        assert!(rep.passed(), "{:?}", rep.witnesses.first());
        let inflated = t.inflated(1.5);
        let bad = certify(&model, &g, Some(&inflated), &opts);
        assert!(!bad.passed());
    }
}
