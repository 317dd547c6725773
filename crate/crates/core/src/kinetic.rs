//! The degenerate (kinetic) system: simulation, the Lyapunov distance ψ and
//! the explicit invariant density of the gradient case on a 2D grid.

use std::path::Path;

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientModel, KineticConstants, KineticGradientSpec, ModelKind};
use crate::error::{Error, Result};
use crate::measures::{moment_match, EmpiricalMeasure, GaussianLaw};
use crate::numeric::{dot, fmt17, norm_sq, NeumaierSum};
use crate::simulator::{simulate_mean_field, SimConfig, TrajectoryEnsemble};

/// Position and velocity of one particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl KineticState {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Dimension(format!(
                "position has length {}, velocity {}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kinetic state must be finite".into()));
        }
        Ok(Self { x, y })
    }

    /// Splits a phase-space point `(x, y)` of length `2d`.
    pub fn from_phase(z: &[f64]) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::Dimension("phase-space point must have even length".into()));
        }
        let (x, y) = z.split_at(z.len() / 2);
        Self::new(x.to_vec(), y.to_vec())
    }

    pub fn to_phase(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.y);
        z
    }
}

/// Mean-field run of a kinetic model; noise enters the velocity only and the
/// position moves by `y dt` with the pre-step velocity.
pub fn simulate_kinetic(
    model: &CoefficientModel,
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    if model.kind() != ModelKind::Kinetic {
        return Err(Error::InvalidInput(format!(
            "model `{}` is not kinetic",
            model.name()
        )));
    }
    simulate_mean_field(model, init, cfg)
}

fn psi_form(kc: &KineticConstants) -> Result<Matrix2<f64>> {
    kc.validate()?;
    if kc.r == 0.0 && kc.r0 != 0.0 {
        return Err(Error::Parameter("r = 0 with r0 != 0 is not allowed".into()));
    }
    let off = kc.r * kc.r0 / 2.0;
    Ok(Matrix2::new(kc.r * kc.r / 2.0, off, off, 0.5))
}

/// `ψ = √(r²|Δx|²/2 + |Δy|²/2 + r r₀⟨Δx, Δy⟩)`.
pub fn lyapunov_psi(kc: &KineticConstants, z: &KineticState, zbar: &KineticState) -> Result<f64> {
    psi_form(kc)?;
    if z.x.len() != zbar.x.len() {
        return Err(Error::Dimension("states of different dimension".into()));
    }
    if z == zbar {
        return Ok(0.0);
    }
    let dx: Vec<f64> = z.x.iter().zip(&zbar.x).map(|(a, b)| a - b).collect();
    let dy: Vec<f64> = z.y.iter().zip(&zbar.y).map(|(a, b)| a - b).collect();
    let sq = kc.r * kc.r * norm_sq(&dx) / 2.0 + norm_sq(&dy) / 2.0 + kc.r * kc.r0 * dot(&dx, &dy);
    if sq < -1e-12 {
        return Err(Error::Parameter(format!("ψ² = {sq} is negative")));
    }
    Ok(sq.max(0.0).sqrt())
}

/// Smallest `C` with `C⁻¹ q ≤ ψ² ≤ C q`, `q = |Δx|² + |Δy|²`.
pub fn c_psi(kc: &KineticConstants) -> Result<f64> {
    let eig = SymmetricEigen::new(psi_form(kc)?).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return Err(Error::Parameter(format!("ψ form is degenerate (min eigenvalue {lo})")));
    }
    Ok(hi.max(1.0 / lo))
}

/// Tensor grid on `[x_min, x_max] × [y_min, y_max]` with `nx × ny` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Square grid `[−half, half]²` with `n` nodes per axis.
    pub fn square(half: f64, n: usize) -> Self {
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            nx: n,
            ny: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = [self.x_min, self.x_max, self.y_min, self.y_max];
        if b.iter().any(|v| !v.is_finite()) || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Parameter("grid bounds must be finite and increasing".into()));
        }
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::GridTooSmall("need at least 3 nodes per axis".into()));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.hy()
    }

    /// Trapezoid weight of node `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let edge = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        self.hx() * self.hy() * edge(i, self.nx) * edge(j, self.ny)
    }

    fn on_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }
}

/// Normalized density tabulated on a [`GridSpec`], stored row-major in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub grid: GridSpec,
    values: Vec<f64>,
    log_values: Vec<f64>,
    pub log_partition: f64,
}

/// Largest admissible density flux through the grid boundary.
const BOUNDARY_FLUX_LIMIT: f64 = 1e-4;

/// Largest Gaussian mass allowed outside the grid in [`grid_entropy`].
const OUTSIDE_MASS_LIMIT: f64 = 1e-6;

impl GridDensity {
    /// Normalizes `exp(log_unnormalized)` by its trapezoid integral.
    pub fn from_log_values(grid: GridSpec, log_unnormalized: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if log_unnormalized.len() != grid.nx * grid.ny {
            return Err(Error::Dimension("value count differs from the grid size".into()));
        }
        if let Some(k) = log_unnormalized.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample: k,
                detail: "density exponent".into(),
            });
        }
        let peak = log_unnormalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = NeumaierSum::default();
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                z.add(grid.weight(i, j) * (log_unnormalized[i * grid.ny + j] - peak).exp());
            }
        }
        let log_partition = peak + z.value().ln();
        let log_values: Vec<f64> = log_unnormalized.iter().map(|v| v - log_partition).collect();
        let values: Vec<f64> = log_values.iter().map(|v| v.exp()).collect();
        let density = Self {
            grid,
            values,
            log_values,
            log_partition,
        };
        let flux = density.boundary_flux();
        if flux > BOUNDARY_FLUX_LIMIT {
            return Err(Error::GridTooSmall(format!(
                "density flux {flux:e} through the grid boundary; enlarge the grid"
            )));
        }
        Ok(density)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.ny + j]
    }

    pub fn log_value(&self, i: usize, j: usize) -> f64 {
        self.log_values[i * self.grid.ny + j]
    }

    /// Line integral of the density along the grid boundary.
    pub fn boundary_flux(&self) -> f64 {
        let g = &self.grid;
        let mut s = NeumaierSum::default();
        for i in 0..g.nx {
            for j in 0..g.ny {
                if g.on_boundary(i, j) {
                    let len = if i == 0 || i == g.nx - 1 { g.hy() } else { g.hx() };
                    s.add(self.value(i, j) * len);
                }
            }
        }
        s.value()
    }

    fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let g = &self.grid;
        let mut s = NeumaierSum::default();
        for i in 0..g.nx {
            for j in 0..g.ny {
                s.add(g.weight(i, j) * self.value(i, j) * f(g.x(i), g.y(j)));
            }
        }
        s.value()
    }

    /// Trapezoid mass (1 up to round-off).
    pub fn mass(&self) -> f64 {
        self.integrate(|_, _| 1.0)
    }

    /// Riemann sum `Σ values × cell area`.
    pub fn riemann_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.hx() * self.grid.hy()
    }

    /// Mean and covariance of the tabulated law.
    pub fn gaussian_moments(&self) -> Result<GaussianLaw> {
        let mx = self.integrate(|x, _| x);
        let my = self.integrate(|_, y| y);
        let cxx = self.integrate(|x, _| (x - mx) * (x - mx));
        let cyy = self.integrate(|_, y| (y - my) * (y - my));
        let cxy = self.integrate(|x, y| (x - mx) * (y - my));
        GaussianLaw::from_slices(&[mx, my], &[cxx, cxy, cxy, cyy])
    }

    /// CSV with columns `x,y,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        let g = &self.grid;
        for i in 0..g.nx {
            for j in 0..g.ny {
                w.write_record([fmt17(g.x(i)), fmt17(g.y(j)), fmt17(self.value(i, j))])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Bounds, resolution and `log Z₀`.
    pub fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "bounds": {
                "x": [self.grid.x_min, self.grid.x_max],
                "y": [self.grid.y_min, self.grid.y_max],
            },
            "resolution": [self.grid.nx, self.grid.ny],
            "log_partition": self.log_partition,
        })
    }

    /// Writes `density.csv` and `density.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join("density.csv"))?;
        let path = dir.join("density.json");
        let text = serde_json::to_string_pretty(&self.header())?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

/// Tabulates `exp(−y²/2 − V(x) − mean_{z∈μ}[W(x,z) − W(0,z)])` for `d = 1`.
///
/// `w` receives the position `x` and a full phase-space point `z = (z_x, z_y)` of `mu`.
pub fn explicit_invariant_density(
    v: impl Fn(f64) -> f64 + Sync,
    w: impl Fn(f64, &[f64]) -> f64 + Sync,
    mu: &EmpiricalMeasure,
    grid: &GridSpec,
) -> Result<GridDensity> {
    grid.validate()?;
    if mu.dim() != 2 {
        return Err(Error::Dimension(format!(
            "the grid density needs a cloud in R^2, got R^{}",
            mu.dim()
        )));
    }
    let n = mu.size() as f64;
    let row = |i: usize| -> Vec<f64> {
        let x = grid.x(i);
        let mut inter = NeumaierSum::default();
        for z in mu.iter() {
            inter.add(w(x, z) - w(0.0, z));
        }
        let base = v(x) + inter.value() / n;
        (0..grid.ny)
            .map(|j| {
                let y = grid.y(j);
                -0.5 * y * y - base
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..grid.nx).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..grid.nx).map(row).collect();
    GridDensity::from_log_values(*grid, rows.concat())
}

/// Explicit density of a one-dimensional kinetic gradient model frozen at `mu`.
pub fn gradient_case_density(
    spec: &KineticGradientSpec,
    mu: &EmpiricalMeasure,
    grid: &GridSpec,
) -> Result<GridDensity> {
    if spec.d != 1 {
        return Err(Error::Parameter("the grid density is implemented for d = 1 only".into()));
    }
    if (spec.sigma - std::f64::consts::SQRT_2).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "the explicit density needs sigma = sqrt(2), got {}",
            spec.sigma
        )));
    }
    let potential = spec.potential;
    let interaction = spec.interaction;
    explicit_invariant_density(
        |x| potential.value(&[x]),
        |x, z| interaction.value(&[x], z),
        mu,
        grid,
    )
}

/// `Ent(g_law | density)` by trapezoid quadrature of `φ log(φ/ρ)`.
pub fn grid_entropy(g_law: &GaussianLaw, density: &GridDensity) -> Result<f64> {
    if g_law.dim() != 2 {
        return Err(Error::Dimension("grid entropy needs a Gaussian on R^2".into()));
    }
    let g = &density.grid;
    let mut mass = NeumaierSum::default();
    let mut ent = NeumaierSum::default();
    for i in 0..g.nx {
        for j in 0..g.ny {
            let log_phi = g_law
                .log_density(&[g.x(i), g.y(j)])
                .ok_or(Error::SingularCovariance)?;
            let phi = log_phi.exp();
            let wgt = g.weight(i, j);
            mass.add(wgt * phi);
            if phi > 0.0 {
                ent.add(wgt * phi * (log_phi - density.log_value(i, j)));
            }
        }
    }
    let outside = 1.0 - mass.value();
    if outside > OUTSIDE_MASS_LIMIT {
        return Err(Error::GridTooSmall(format!(
            "Gaussian mass {outside:e} lies outside the grid"
        )));
    }
    let e = ent.value();
    if e < -1e-8 {
        return Err(Error::InvalidInput(format!(
            "quadrature gave a negative entropy {e:e}; refine the grid"
        )));
    }
    Ok(e.max(0.0))
}

/// `(t, grid_entropy(moment_match(cloud_t), density))` along a trajectory.
pub fn entropy_trace(run: &TrajectoryEnsemble, density: &GridDensity) -> Result<Vec<(f64, f64)>> {
    run.times
        .iter()
        .zip(&run.clouds)
        .map(|(t, c)| Ok((*t, grid_entropy(&moment_match(c)?, density)?)))
        .collect()
}
