//! Two-node Euler-Bernoulli frame elements on a simply supported span.
//!
//! Every node carries axial displacement `u`, vertical displacement `v`
//! (positive downward) and rotation `theta = dv/dx`. DOF `3 * node + k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DOF_PER_NODE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamModel {
    /// Span (m).
    pub length: f64,
    pub elements: usize,
    /// Young's modulus (Pa).
    pub youngs: f64,
    /// Second moment of area (m^4).
    pub inertia: f64,
    /// Cross-section area (m^2).
    pub area: f64,
    /// Density (kg/m^3).
    pub density: f64,
    /// Thermal expansion coefficient (1/K).
    pub alpha_thermal: f64,
    /// Rayleigh mass coefficient (1/s).
    pub alpha_damp: f64,
    /// Rayleigh stiffness coefficient (s).
    pub beta_damp: f64,
    /// Scale on the smoothed through-depth temperature gradient.
    pub beta_thermal: f64,
    /// Stress-free temperature (deg C).
    pub t_ref: f64,
}

impl Default for BeamModel {
    fn default() -> Self {
        Self {
            length: 10.0,
            elements: 20,
            youngs: 4.0e9,
            inertia: 5e-4,
            area: 0.06,
            density: 550.0,
            alpha_thermal: 5e-6,
            alpha_damp: 0.1,
            beta_damp: 0.015,
            beta_thermal: 1.0,
            t_ref: 20.0,
        }
    }
}

impl BeamModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("youngs", self.youngs),
            ("inertia", self.inertia),
            ("area", self.area),
            ("density", self.density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("beam {name} must be positive, got {v}")));
            }
        }
        if self.elements < 2 {
            return Err(Error::Invalid("beam needs at least 2 elements".into()));
        }
        if self.alpha_damp < 0.0 || self.beta_damp < 0.0 {
            return Err(Error::Invalid("Rayleigh coefficients must be >= 0".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.elements + 1
    }

    pub fn dofs(&self) -> usize {
        DOF_PER_NODE * self.nodes()
    }

    pub fn element_length(&self) -> f64 {
        self.length / self.elements as f64
    }

    /// Depth of the rectangular section with this `I` and `A`.
    pub fn depth(&self) -> f64 {
        (12.0 * self.inertia / self.area).sqrt()
    }

    pub fn v_dof(node: usize) -> usize {
        DOF_PER_NODE * node + 1
    }

    /// Pinned at node 0 (u, v) and a roller at the last node (v).
    pub fn constrained_dofs(&self) -> Vec<usize> {
        vec![0, 1, Self::v_dof(self.elements)]
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        let fixed = self.constrained_dofs();
        (0..self.dofs()).filter(|d| !fixed.contains(d)).collect()
    }

    /// Node nearest to position `x` along the span.
    pub fn nearest_node(&self, x: f64) -> usize {
        ((x / self.element_length()).round() as usize).min(self.elements)
    }

    /// Analytic first bending frequency (Hz) of the simply supported span.
    pub fn analytic_f1(&self) -> f64 {
        let k = std::f64::consts::PI / self.length;
        k * k * (self.youngs * self.inertia / (self.density * self.area)).sqrt()
            / (2.0 * std::f64::consts::PI)
    }

    /// Rayleigh damping ratio at frequency `f` (Hz).
    pub fn damping_ratio(&self, f: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f;
        self.alpha_damp / (2.0 * w) + self.beta_damp * w / 2.0
    }
}

fn check_damage(d: f64) -> Result<()> {
    if !(0.0..1.0).contains(&d) {
        return Err(Error::Invalid(format!("damage must be in [0, 1), got {d}")));
    }
    Ok(())
}

fn element_matrices(model: &BeamModel, d: f64) -> ([[f64; 6]; 6], [[f64; 6]; 6]) {
    let l = model.element_length();
    let ea = model.youngs * (1.0 - d) * model.area;
    let ei = model.youngs * (1.0 - d) * model.inertia;
    let mut k = [[0.0; 6]; 6];
    let mut m = [[0.0; 6]; 6];
    // Local order: u_i, v_i, th_i, u_j, v_j, th_j.
    let (ui, vi, ti, uj, vj, tj) = (0, 1, 2, 3, 4, 5);
    let ka = ea / l;
    k[ui][ui] = ka;
    k[uj][uj] = ka;
    k[ui][uj] = -ka;
    k[uj][ui] = -ka;
    let kb = [
        [12.0, 6.0 * l, -12.0, 6.0 * l],
        [6.0 * l, 4.0 * l * l, -6.0 * l, 2.0 * l * l],
        [-12.0, -6.0 * l, 12.0, -6.0 * l],
        [6.0 * l, 2.0 * l * l, -6.0 * l, 4.0 * l * l],
    ];
    let mb = [
        [156.0, 22.0 * l, 54.0, -13.0 * l],
        [22.0 * l, 4.0 * l * l, 13.0 * l, -3.0 * l * l],
        [54.0, 13.0 * l, 156.0, -22.0 * l],
        [-13.0 * l, -3.0 * l * l, -22.0 * l, 4.0 * l * l],
    ];
    let bend = [vi, ti, vj, tj];
    let kc = ei / (l * l * l);
    let rho_a = model.density * model.area;
    let mc = rho_a * l / 420.0;
    for (a, &ra) in bend.iter().enumerate() {
        for (b, &rb) in bend.iter().enumerate() {
            k[ra][rb] = kc * kb[a][b];
            m[ra][rb] = mc * mb[a][b];
        }
    }
    let ma = rho_a * l / 6.0;
    m[ui][ui] = 2.0 * ma;
    m[uj][uj] = 2.0 * ma;
    m[ui][uj] = ma;
    m[uj][ui] = ma;
    (k, m)
}

/// Unconstrained global mass and stiffness at damage `d`.
pub fn assemble_full(model: &BeamModel, d: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    model.validate()?;
    check_damage(d)?;
    let n = model.dofs();
    let mut k = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    let (ke, me) = element_matrices(model, d);
    for e in 0..model.elements {
        let base = DOF_PER_NODE * e;
        for a in 0..6 {
            for b in 0..6 {
                k[(base + a, base + b)] += ke[a][b];
                m[(base + a, base + b)] += me[a][b];
            }
        }
    }
    Ok((m, k))
}

/// Boundary-constrained system matrices over the free DOFs.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// Global DOF index of every row.
    pub free: Vec<usize>,
}

impl SystemMatrices {
    /// Restricts a global vector to the free DOFs.
    pub fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| full[i]))
    }

    /// Row of global DOF `dof` in the constrained system.
    pub fn row_of(&self, dof: usize) -> Option<usize> {
        self.free.iter().position(|&f| f == dof)
    }
}

fn restrict_matrix(a: &DMatrix<f64>, free: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(free.len(), free.len(), |r, c| a[(free[r], free[c])])
}

pub fn assemble_system(model: &BeamModel, d: f64) -> Result<SystemMatrices> {
    let (m, k) = assemble_full(model, d)?;
    let free = model.free_dofs();
    let mass = restrict_matrix(&m, &free);
    let stiffness = restrict_matrix(&k, &free);
    if stiffness.clone().cholesky().is_none() {
        return Err(Error::Singular(
            "constrained stiffness is not positive definite (check boundary conditions)".into(),
        ));
    }
    let damping = &mass * model.alpha_damp + &stiffness * model.beta_damp;
    Ok(SystemMatrices {
        mass,
        damping,
        stiffness,
        free,
    })
}

/// Undamped natural frequencies (Hz), ascending.
pub fn natural_frequencies(sys: &SystemMatrices) -> Result<Vec<f64>> {
    let l = sys
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?
        .l();
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Singular("mass factor is singular".into()))?;
    let a = &l_inv * &sys.stiffness * l_inv.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let mut f: Vec<f64> = SymmetricEigen::new(a)
        .eigenvalues
        .iter()
        .map(|&w2| w2.max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
        .collect();
    f.sort_by(f64::total_cmp);
    Ok(f)
}

/// Consistent nodal loads of a uniform downward load `q` (N/m).
pub fn distributed_load(model: &BeamModel, q: f64) -> DVector<f64> {
    let l = model.element_length();
    let mut f = DVector::zeros(model.dofs());
    for e in 0..model.elements {
        let i = DOF_PER_NODE * e;
        let j = i + DOF_PER_NODE;
        f[i + 1] += q * l / 2.0;
        f[i + 2] += q * l * l / 12.0;
        f[j + 1] += q * l / 2.0;
        f[j + 2] -= q * l * l / 12.0;
    }
    f
}

/// Axial force `E_eff A alpha dT` of a uniform temperature change.
pub fn thermal_axial_force(model: &BeamModel, d: f64, delta_t: f64) -> f64 {
    model.youngs * (1.0 - d) * model.area * model.alpha_thermal * delta_t
}

/// Bending moment `E_eff I alpha g / h` of a through-depth gradient `g` (K).
pub fn thermal_moment(model: &BeamModel, d: f64, gradient: f64) -> f64 {
    model.youngs * (1.0 - d) * model.inertia * model.alpha_thermal * gradient / model.depth()
}

/// Equivalent nodal loads of uniform expansion and thermal curvature.
/// A positive gradient (surface warmer than the core) cambers the span
/// upward.
pub fn thermal_load(model: &BeamModel, d: f64, delta_t: f64, gradient: f64) -> DVector<f64> {
    let n = thermal_axial_force(model, d, delta_t);
    let mt = thermal_moment(model, d, gradient);
    let mut f = DVector::zeros(model.dofs());
    for e in 0..model.elements {
        let i = DOF_PER_NODE * e;
        let j = i + DOF_PER_NODE;
        f[i] -= n;
        f[j] += n;
        f[i + 2] -= mt;
        f[j + 2] += mt;
    }
    f
}
