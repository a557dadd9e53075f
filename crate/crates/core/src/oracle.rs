//! Reference stepper on one global array, with no patches, halos or tasks.
//!
//! It shares no code with [`crate::fv`] beyond the config type; every formula
//! is written out again here in the same floating-point evaluation order so
//! the two can be compared bit for bit.

use crate::fv::{ConservedState, MeshConfig};

type Cell = [f64; 4];

fn pressure(u: &Cell, gamma: f64) -> f64 {
    (gamma - 1.0) * (u[3] - (u[1] * u[1] + u[2] * u[2]) / (2.0 * u[0]))
}

/// `axis` 0 is x, 1 is y.
fn flux(u: &Cell, axis: usize, gamma: f64) -> Cell {
    let p = pressure(u, gamma);
    let (rho, mx, my, e) = (u[0], u[1], u[2], u[3]);
    if axis == 0 {
        [mx, mx * mx / rho + p, mx * my / rho, (e + p) * mx / rho]
    } else {
        [my, mx * my / rho, my * my / rho + p, (e + p) * my / rho]
    }
}

fn speed(u: &Cell, axis: usize, gamma: f64) -> f64 {
    let c = (gamma * pressure(u, gamma) / u[0]).sqrt();
    (u[1 + axis] / u[0]).abs() + c
}

fn face_flux(l: &Cell, r: &Cell, axis: usize, gamma: f64) -> Cell {
    let fl = flux(l, axis, gamma);
    let fr = flux(r, axis, gamma);
    let s = speed(l, axis, gamma).max(speed(r, axis, gamma));
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * s * (r[k] - l[k]);
    }
    out
}

/// Whole-domain solution on a `g x g` periodic array, row-major.
#[derive(Debug, Clone)]
pub struct Reference {
    pub g: usize,
    pub h: f64,
    pub gamma: f64,
    pub cfl: f64,
    pub cells: Vec<Cell>,
    pub dt: f64,
}

impl Reference {
    pub fn new(cfg: &MeshConfig) -> Self {
        let m = 3usize.pow(cfg.grid_exp);
        let g = m * cfg.patch_size;
        let h = 1.0 / m as f64 / cfg.patch_size as f64;
        let ic = cfg.initial;
        let cells = (0..g * g)
            .map(|c| {
                let x = ((c % g) as f64 + 0.5) * h;
                let y = ((c / g) as f64 + 0.5) * h;
                let r2 = (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5);
                let rho = 1.0 + ic.amplitude * (-r2 / ic.width).exp();
                [rho, 0.0, 0.0, ic.pressure / (cfg.gamma - 1.0)]
            })
            .collect();
        let mut r = Self {
            g,
            h,
            gamma: cfg.gamma,
            cfl: cfg.cfl,
            cells,
            dt: 0.0,
        };
        r.dt = r.cfl * r.h / r.max_speed();
        r
    }

    fn max_speed(&self) -> f64 {
        self.cells
            .iter()
            .map(|u| speed(u, 0, self.gamma).max(speed(u, 1, self.gamma)))
            .fold(0.0, f64::max)
    }

    /// Advances one step with the current `dt`, then sets the next `dt`.
    pub fn step(&mut self) {
        let g = self.g;
        let ratio = self.dt / self.h;
        let at = |i: usize, j: usize| &self.cells[(j % g) * g + (i % g)];
        let mut next = Vec::with_capacity(g * g);
        for j in 0..g {
            for i in 0..g {
                let u = at(i, j);
                let west = at(i + g - 1, j);
                let east = at(i + 1, j);
                let south = at(i, j + g - 1);
                let north = at(i, j + 1);
                let fxl = face_flux(west, u, 0, self.gamma);
                let fxr = face_flux(u, east, 0, self.gamma);
                let fyb = face_flux(south, u, 1, self.gamma);
                let fyt = face_flux(u, north, 1, self.gamma);
                let mut v = [0.0; 4];
                for k in 0..4 {
                    v[k] = u[k] - ratio * (fxr[k] - fxl[k] + fyt[k] - fyb[k]);
                }
                next.push(v);
            }
        }
        self.cells = next;
        self.dt = self.cfl * self.h / self.max_speed();
    }

    pub fn field(&self) -> Vec<ConservedState> {
        self.cells.iter().map(|&c| ConservedState::from_array(c)).collect()
    }
}

/// Runs the reference for `steps` steps from the configured initial state.
pub fn reference_field(cfg: &MeshConfig, steps: u64) -> Vec<ConservedState> {
    let mut r = Reference::new(cfg);
    for _ in 0..steps {
        r.step();
    }
    r.field()
}

/// First volume (row-major global index) where two fields differ bitwise.
pub fn first_difference(a: &[ConservedState], b: &[ConservedState]) -> Option<usize> {
    if a.len() != b.len() {
        return Some(a.len().min(b.len()));
    }
    a.iter().zip(b).position(|(x, y)| {
        x.to_array()
            .iter()
            .zip(y.to_array())
            .any(|(p, q)| p.to_bits() != q.to_bits())
    })
}
