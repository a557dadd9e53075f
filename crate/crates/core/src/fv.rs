//! Compressible Euler equations on a periodic grid of square patches.
//!
//! Each patch holds `n x n` finite volumes plus a one-cell halo ring. Patches
//! publish their boundary rows into a [`FaceBuffer`] after every update
//! ("project onto faces") and read their neighbours' strips before the next
//! update ("write halo"), so any two patches can be advanced independently
//! within a time step.
//!
//! Face strips are double buffered by generation parity: during a step every
//! reader consumes generation `s + 1` while writers publish `s + 2`, so no
//! ordering between neighbouring patch updates is required inside a step.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Spatial dimension. Only two-dimensional meshes are supported.
pub const DIMENSIONS: usize = 2;

/// Number of conserved variables per volume.
pub const NUM_VARS: usize = 4;

/// A numerical or physical flux in conserved-variable ordering.
pub type Flux = [f64; NUM_VARS];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FvError {
    #[error("inadmissible state: rho={rho}, pressure={pressure}")]
    Inadmissible { rho: f64, pressure: f64 },
    #[error("inadmissible post-state in patch {patch} at volume ({i}, {j}): rho={rho}, pressure={pressure}")]
    InadmissibleVolume {
        patch: usize,
        i: usize,
        j: usize,
        rho: f64,
        pressure: f64,
    },
    #[error("stale halo for patch {patch} on {side:?} side: expected generation {expected}, found {found}")]
    StaleHalo {
        patch: usize,
        side: Side,
        expected: u64,
        found: u64,
    },
    #[error("patch {patch} has no halo assembled for step {step}")]
    MissingHalo { patch: usize, step: u64 },
    #[error("global eigenvalue must be positive, got {0}")]
    NonPositiveEigenvalue(f64),
    #[error("invalid mesh configuration: {0}")]
    InvalidConfig(String),
}

/// Conserved variables of one finite volume.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConservedState {
    pub rho: f64,
    pub mx: f64,
    pub my: f64,
    pub energy: f64,
}

impl ConservedState {
    pub const fn new(rho: f64, mx: f64, my: f64, energy: f64) -> Self {
        Self { rho, mx, my, energy }
    }

    /// State at rest with the given density and pressure.
    pub fn at_rest(rho: f64, pressure: f64, gamma: f64) -> Self {
        Self::new(rho, 0.0, 0.0, pressure / (gamma - 1.0))
    }

    pub fn to_array(self) -> [f64; NUM_VARS] {
        [self.rho, self.mx, self.my, self.energy]
    }

    pub fn from_array(v: [f64; NUM_VARS]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    fn momentum(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.mx,
            Axis::Y => self.my,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// One of the four edges of a patch, also used as a neighbour direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::Bottom => Side::Top,
            Side::Top => Side::Bottom,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Position of a patch on the `M x M` patch grid. `ix` is the column, `iy` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub ix: usize,
    pub iy: usize,
}

impl GridPos {
    pub const fn new(ix: usize, iy: usize) -> Self {
        Self { ix, iy }
    }

    /// Row-major index on an `m x m` grid.
    pub fn index(self, m: usize) -> usize {
        self.iy * m + self.ix
    }

    pub fn from_index(index: usize, m: usize) -> Self {
        Self::new(index % m, index / m)
    }
}

/// Ideal-gas pressure `(gamma - 1) (E - |m|^2 / (2 rho))`.
pub fn pressure(u: &ConservedState, gamma: f64) -> Result<f64, FvError> {
    let p = (gamma - 1.0) * (u.energy - (u.mx * u.mx + u.my * u.my) / (2.0 * u.rho));
    if u.rho > 0.0 && p > 0.0 {
        Ok(p)
    } else {
        Err(FvError::Inadmissible {
            rho: u.rho,
            pressure: p,
        })
    }
}

pub fn physical_flux(u: &ConservedState, axis: Axis, gamma: f64) -> Result<Flux, FvError> {
    let p = pressure(u, gamma)?;
    Ok(match axis {
        Axis::X => [
            u.mx,
            u.mx * u.mx / u.rho + p,
            u.mx * u.my / u.rho,
            (u.energy + p) * u.mx / u.rho,
        ],
        Axis::Y => [
            u.my,
            u.mx * u.my / u.rho,
            u.my * u.my / u.rho + p,
            (u.energy + p) * u.my / u.rho,
        ],
    })
}

/// Largest characteristic speed `|u_axis| + c` along `axis`.
pub fn max_eigenvalue(u: &ConservedState, axis: Axis, gamma: f64) -> Result<f64, FvError> {
    let p = pressure(u, gamma)?;
    let c = (gamma * p / u.rho).sqrt();
    Ok((u.momentum(axis) / u.rho).abs() + c)
}

/// Rusanov (local Lax-Friedrichs) flux across a face with `ul` on the low side.
pub fn rusanov_flux(
    ul: &ConservedState,
    ur: &ConservedState,
    axis: Axis,
    gamma: f64,
) -> Result<Flux, FvError> {
    let fl = physical_flux(ul, axis, gamma)?;
    let fr = physical_flux(ur, axis, gamma)?;
    let lambda = max_eigenvalue(ul, axis, gamma)?.max(max_eigenvalue(ur, axis, gamma)?);
    let l = ul.to_array();
    let r = ur.to_array();
    let mut out = [0.0; NUM_VARS];
    for k in 0..NUM_VARS {
        out[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * lambda * (r[k] - l[k]);
    }
    Ok(out)
}

/// Largest admissible time step for the next step under the CFL condition.
pub fn admissible_dt(lambda_global: f64, h: f64, cfl: f64) -> Result<f64, FvError> {
    if lambda_global > 0.0 && lambda_global.is_finite() {
        Ok(cfl * h / lambda_global)
    } else {
        Err(FvError::NonPositiveEigenvalue(lambda_global))
    }
}

/// Torus neighbour of `pos` on an `m x m` periodic grid.
pub fn neighbor(pos: GridPos, side: Side, m: usize) -> GridPos {
    let GridPos { ix, iy } = pos;
    match side {
        Side::Left => GridPos::new((ix + m - 1) % m, iy),
        Side::Right => GridPos::new((ix + 1) % m, iy),
        Side::Bottom => GridPos::new(ix, (iy + m - 1) % m),
        Side::Top => GridPos::new(ix, (iy + 1) % m),
    }
}

/// Gaussian density bump at the domain centre, at rest, uniform pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub amplitude: f64,
    /// Denominator of the exponent, `exp(-r^2 / width)`.
    pub width: f64,
    pub pressure: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            width: 0.01,
            pressure: 1.0,
        }
    }
}

impl InitialCondition {
    pub fn state_at(&self, x: f64, y: f64, gamma: f64) -> ConservedState {
        let r2 = (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5);
        let rho = 1.0 + self.amplitude * (-r2 / self.width).exp();
        ConservedState::at_rest(rho, self.pressure, gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// `M = 3^grid_exp` patches per axis.
    pub grid_exp: u32,
    /// Volumes per patch axis.
    pub patch_size: usize,
    pub gamma: f64,
    pub cfl: f64,
    #[serde(default)]
    pub initial: InitialCondition,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            grid_exp: 2,
            patch_size: 15,
            gamma: 1.4,
            cfl: 0.4,
            initial: InitialCondition::default(),
        }
    }
}

impl MeshConfig {
    pub fn new(grid_exp: u32, patch_size: usize) -> Self {
        Self {
            grid_exp,
            patch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FvError> {
        if self.grid_exp > 8 {
            return Err(FvError::InvalidConfig(format!(
                "grid exponent {} is too large (max 8)",
                self.grid_exp
            )));
        }
        if self.patch_size == 0 {
            return Err(FvError::InvalidConfig("patch size must be at least 1".into()));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(FvError::InvalidConfig(format!(
                "cfl must lie in (0, 1), got {}",
                self.cfl
            )));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(FvError::InvalidConfig(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Patches per axis.
    pub fn patches_per_axis(&self) -> usize {
        3usize.pow(self.grid_exp)
    }

    pub fn patch_count(&self) -> usize {
        self.patches_per_axis() * self.patches_per_axis()
    }

    /// Patch width `H = 1 / M`.
    pub fn patch_width(&self) -> f64 {
        1.0 / self.patches_per_axis() as f64
    }

    /// Volume width `h = H / n`.
    pub fn volume_width(&self) -> f64 {
        self.patch_width() / self.patch_size as f64
    }
}

/// The four one-cell halo strips around a patch, ordered along increasing
/// coordinate. Corner cells are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Halo {
    strips: [Vec<ConservedState>; 4],
}

impl Halo {
    fn new(n: usize) -> Self {
        Self {
            strips: std::array::from_fn(|_| vec![ConservedState::default(); n]),
        }
    }

    pub fn strip(&self, side: Side) -> &[ConservedState] {
        &self.strips[side.index()]
    }

    pub fn strip_mut(&mut self, side: Side) -> &mut [ConservedState] {
        &mut self.strips[side.index()]
    }
}

/// One mesh cell: an `n x n` block of volumes with its halo ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    n: usize,
    index: usize,
    grid_pos: GridPos,
    owner: usize,
    /// Row-major, `interior[j * n + i]`, `i` along x.
    interior: Vec<ConservedState>,
    halo: Halo,
    step: u64,
    halo_step: Option<u64>,
}

impl Patch {
    pub fn new(n: usize, grid_pos: GridPos, m: usize, interior: Vec<ConservedState>) -> Self {
        assert_eq!(interior.len(), n * n, "interior must hold n*n volumes");
        Self {
            n,
            index: grid_pos.index(m),
            grid_pos,
            owner: 0,
            interior,
            halo: Halo::new(n),
            step: 0,
            halo_step: None,
        }
    }

    pub fn uniform(n: usize, grid_pos: GridPos, m: usize, state: ConservedState) -> Self {
        Self::new(n, grid_pos, m, vec![state; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn grid_pos(&self) -> GridPos {
        self.grid_pos
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn set_owner(&mut self, owner: usize) {
        self.owner = owner;
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn interior(&self) -> &[ConservedState] {
        &self.interior
    }

    pub fn at(&self, i: usize, j: usize) -> &ConservedState {
        &self.interior[j * self.n + i]
    }

    pub fn halo(&self) -> &Halo {
        &self.halo
    }

    /// Fills all four halo strips with the given values, marking the halo as
    /// fresh for the current step. Used by tests and single-patch experiments.
    pub fn set_halo(&mut self, halo: [Vec<ConservedState>; 4]) {
        for s in &halo {
            assert_eq!(s.len(), self.n, "halo strip length must equal n");
        }
        self.halo = Halo { strips: halo };
        self.halo_step = Some(self.step);
    }

    /// Outgoing boundary strip for `side`.
    pub fn boundary_strip(&self, side: Side) -> Vec<ConservedState> {
        let n = self.n;
        match side {
            Side::Left => (0..n).map(|j| *self.at(0, j)).collect(),
            Side::Right => (0..n).map(|j| *self.at(n - 1, j)).collect(),
            Side::Bottom => self.interior[..n].to_vec(),
            Side::Top => self.interior[(n - 1) * n..].to_vec(),
        }
    }

    /// Replaces the interior with the result of an update and advances the step.
    pub fn apply_update(&mut self, interior: Vec<ConservedState>) {
        assert_eq!(interior.len(), self.n * self.n);
        self.interior = interior;
        self.step += 1;
        self.halo_step = None;
    }
}

/// Result of one patch update.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchUpdate {
    pub patch: usize,
    pub interior: Vec<ConservedState>,
    pub lambda_max: f64,
}

/// Reusable face-flux storage so fused batches of updates avoid reallocating.
#[derive(Debug, Default)]
pub struct FluxScratch {
    x_faces: Vec<Flux>,
    y_faces: Vec<Flux>,
}

/// Advances one patch by `dt`. Pure: reads only `patch` and returns a new interior.
pub fn update_patch(patch: &Patch, dt: f64, h: f64, gamma: f64) -> Result<PatchUpdate, FvError> {
    update_patch_with(patch, dt, h, gamma, &mut FluxScratch::default())
}

pub fn update_patch_with(
    patch: &Patch,
    dt: f64,
    h: f64,
    gamma: f64,
    scratch: &mut FluxScratch,
) -> Result<PatchUpdate, FvError> {
    if patch.halo_step != Some(patch.step) {
        return Err(FvError::MissingHalo {
            patch: patch.index,
            step: patch.step,
        });
    }
    let n = patch.n;
    let u = &patch.interior;
    let halo = &patch.halo;

    // x_faces[j * (n + 1) + f] is the face between volumes f-1 and f in row j.
    scratch.x_faces.clear();
    for j in 0..n {
        for f in 0..=n {
            let ul = if f == 0 { &halo.strip(Side::Left)[j] } else { &u[j * n + f - 1] };
            let ur = if f == n { &halo.strip(Side::Right)[j] } else { &u[j * n + f] };
            scratch.x_faces.push(rusanov_flux(ul, ur, Axis::X, gamma)?);
        }
    }
    // y_faces[f * n + i] is the face between rows f-1 and f in column i.
    scratch.y_faces.clear();
    for f in 0..=n {
        for i in 0..n {
            let ub = if f == 0 { &halo.strip(Side::Bottom)[i] } else { &u[(f - 1) * n + i] };
            let ut = if f == n { &halo.strip(Side::Top)[i] } else { &u[f * n + i] };
            scratch.y_faces.push(rusanov_flux(ub, ut, Axis::Y, gamma)?);
        }
    }

    let ratio = dt / h;
    let mut interior = Vec::with_capacity(n * n);
    let mut lambda_max = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let fxl = &scratch.x_faces[j * (n + 1) + i];
            let fxr = &scratch.x_faces[j * (n + 1) + i + 1];
            let fyb = &scratch.y_faces[j * n + i];
            let fyt = &scratch.y_faces[(j + 1) * n + i];
            let old = u[j * n + i].to_array();
            let mut new = [0.0; NUM_VARS];
            for k in 0..NUM_VARS {
                new[k] = old[k] - ratio * (fxr[k] - fxl[k] + fyt[k] - fyb[k]);
            }
            let state = ConservedState::from_array(new);
            let check = |res: Result<f64, FvError>| {
                res.map_err(|_| FvError::InadmissibleVolume {
                    patch: patch.index,
                    i,
                    j,
                    rho: state.rho,
                    pressure: (gamma - 1.0)
                        * (state.energy - (state.mx * state.mx + state.my * state.my) / (2.0 * state.rho)),
                })
            };
            let lx = check(max_eigenvalue(&state, Axis::X, gamma))?;
            let ly = check(max_eigenvalue(&state, Axis::Y, gamma))?;
            lambda_max = lambda_max.max(lx).max(ly);
            interior.push(state);
        }
    }
    Ok(PatchUpdate {
        patch: patch.index,
        interior,
        lambda_max,
    })
}

/// Largest eigenvalue over both axes of every interior volume.
pub fn patch_lambda(patch: &Patch, gamma: f64) -> Result<f64, FvError> {
    patch.interior.iter().try_fold(0.0f64, |acc, u| {
        Ok(acc
            .max(max_eigenvalue(u, Axis::X, gamma)?)
            .max(max_eigenvalue(u, Axis::Y, gamma)?))
    })
}

#[derive(Debug)]
struct StripSlot {
    generation: u64,
    data: Vec<ConservedState>,
}

/// Outgoing boundary strips of one patch.
///
/// Each side keeps two slots selected by generation parity plus a projection
/// counter. Generation `g` holds the patch state after `g - 1` updates.
#[derive(Debug)]
pub struct FaceBuffer {
    n: usize,
    slots: [[RwLock<StripSlot>; 2]; 4],
    generation: [AtomicU64; 4],
}

impl FaceBuffer {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            slots: std::array::from_fn(|_| {
                std::array::from_fn(|_| {
                    RwLock::new(StripSlot {
                        generation: 0,
                        data: vec![ConservedState::default(); n],
                    })
                })
            }),
            generation: std::array::from_fn(|_| AtomicU64::new(0)),
        }
    }

    /// Number of projections published on `side`.
    pub fn generation(&self, side: Side) -> u64 {
        self.generation[side.index()].load(Ordering::Acquire)
    }

    /// Total number of outgoing volumes per projection (`4n`).
    pub fn outgoing_volumes(&self) -> usize {
        4 * self.n
    }

    /// Copy of the strip at exactly `generation`.
    pub fn read(&self, side: Side, generation: u64) -> Result<Vec<ConservedState>, u64> {
        let slot = self.slots[side.index()][(generation % 2) as usize]
            .read()
            .expect("face slot poisoned");
        if slot.generation == generation {
            Ok(slot.data.clone())
        } else {
            Err(slot.generation)
        }
    }

    fn write(&self, side: Side, data: Vec<ConservedState>) {
        let next = self.generation(side) + 1;
        {
            let mut slot = self.slots[side.index()][(next % 2) as usize]
                .write()
                .expect("face slot poisoned");
            slot.generation = next;
            slot.data = data;
        }
        self.generation[side.index()].fetch_add(1, Ordering::AcqRel);
    }

    /// Test hook: rewrites the tag of the slot holding `generation` so readers
    /// see a stale strip.
    #[doc(hidden)]
    pub fn corrupt_generation(&self, side: Side, generation: u64) {
        let mut slot = self.slots[side.index()][(generation % 2) as usize]
            .write()
            .expect("face slot poisoned");
        slot.generation = generation.saturating_sub(2);
    }
}

/// "Project onto faces": publishes the patch's boundary rows.
pub fn project_to_faces(patch: &Patch, faces: &FaceBuffer) {
    debug_assert_eq!(faces.generation(Side::Left), patch.step, "double projection");
    for side in Side::ALL {
        faces.write(side, patch.boundary_strip(side));
    }
}

/// "Write halo": fills the patch halo from the neighbours' facing strips.
///
/// `faces` is indexed by row-major patch index on the `m x m` torus.
pub fn assemble_halo(patch: &mut Patch, faces: &[FaceBuffer], m: usize) -> Result<(), FvError> {
    let expected = patch.step + 1;
    for side in Side::ALL {
        let nb = neighbor(patch.grid_pos, side, m).index(m);
        let strip = faces[nb]
            .read(side.opposite(), expected)
            .map_err(|found| FvError::StaleHalo {
                patch: patch.index,
                side,
                expected,
                found,
            })?;
        patch.halo.strip_mut(side).copy_from_slice(&strip);
    }
    patch.halo_step = Some(patch.step);
    Ok(())
}

/// The whole periodic patch grid with its face buffers.
#[derive(Debug)]
pub struct Mesh {
    config: MeshConfig,
    patches: Vec<Mutex<Patch>>,
    faces: Vec<FaceBuffer>,
}

impl Mesh {
    /// Samples the initial condition at volume centres and projects the
    /// initial faces.
    pub fn new(config: MeshConfig) -> Result<Self, FvError> {
        config.validate()?;
        let m = config.patches_per_axis();
        let n = config.patch_size;
        let h = config.volume_width();
        let patches = (0..m * m)
            .map(|idx| {
                let pos = GridPos::from_index(idx, m);
                let interior = (0..n * n)
                    .map(|c| {
                        let (i, j) = (c % n, c / n);
                        let x = ((pos.ix * n + i) as f64 + 0.5) * h;
                        let y = ((pos.iy * n + j) as f64 + 0.5) * h;
                        config.initial.state_at(x, y, config.gamma)
                    })
                    .collect();
                Patch::new(n, pos, m, interior)
            })
            .collect();
        Self::from_patches(config, patches)
    }

    /// Builds a mesh from explicit patches (row-major order) and projects their faces.
    pub fn from_patches(config: MeshConfig, patches: Vec<Patch>) -> Result<Self, FvError> {
        config.validate()?;
        let m = config.patches_per_axis();
        if patches.len() != m * m {
            return Err(FvError::InvalidConfig(format!(
                "expected {} patches, got {}",
                m * m,
                patches.len()
            )));
        }
        let faces: Vec<FaceBuffer> = (0..m * m).map(|_| FaceBuffer::new(config.patch_size)).collect();
        for (p, f) in patches.iter().zip(&faces) {
            for u in p.interior() {
                pressure(u, config.gamma)?;
            }
            project_to_faces(p, f);
        }
        Ok(Self {
            config,
            patches: patches.into_iter().map(Mutex::new).collect(),
            faces,
        })
    }

    pub fn config(&self) -> &MeshConfig {
        &self.config
    }

    pub fn patches_per_axis(&self) -> usize {
        self.config.patches_per_axis()
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn lock(&self, index: usize) -> MutexGuard<'_, Patch> {
        self.patches[index].lock().expect("patch mutex poisoned")
    }

    pub fn faces(&self) -> &[FaceBuffer] {
        &self.faces
    }

    pub fn face(&self, index: usize) -> &FaceBuffer {
        &self.faces[index]
    }

    /// Copy of a patch with its halo assembled for the current step.
    pub fn snapshot_with_halo(&self, index: usize) -> Result<Patch, FvError> {
        let mut copy = self.lock(index).clone();
        assemble_halo(&mut copy, &self.faces, self.patches_per_axis())?;
        Ok(copy)
    }

    /// Domain sums of the conserved variables, accumulated in patch order.
    pub fn totals(&self) -> [f64; NUM_VARS] {
        let mut sum = [0.0; NUM_VARS];
        for idx in 0..self.patches.len() {
            for u in self.lock(idx).interior() {
                for (s, v) in sum.iter_mut().zip(u.to_array()) {
                    *s += v;
                }
            }
        }
        sum
    }

    /// Serial maximum eigenvalue over every volume of the mesh.
    pub fn global_lambda(&self) -> Result<f64, FvError> {
        (0..self.patches.len()).try_fold(0.0f64, |acc, idx| {
            Ok(acc.max(patch_lambda(&self.lock(idx), self.config.gamma)?))
        })
    }

    /// The solution as one `(M n) x (M n)` row-major array.
    pub fn global_field(&self) -> Vec<ConservedState> {
        let m = self.patches_per_axis();
        let n = self.config.patch_size;
        let g = m * n;
        let mut out = vec![ConservedState::default(); g * g];
        for idx in 0..self.patches.len() {
            let p = self.lock(idx);
            let pos = p.grid_pos();
            for j in 0..n {
                for i in 0..n {
                    out[(pos.iy * n + j) * g + pos.ix * n + i] = *p.at(i, j);
                }
            }
        }
        out
    }

    /// Hex SHA-256 over the bit patterns of the global field.
    pub fn checksum(&self) -> String {
        checksum_field(&self.global_field())
    }
}

/// Hex SHA-256 over the bit patterns of a field.
pub fn checksum_field(field: &[ConservedState]) -> String {
    let mut hasher = Sha256::new();
    for u in field {
        for v in u.to_array() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
