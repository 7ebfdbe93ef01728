//! Quadratic pose estimation: point-to-plane (which also carries the
//! point-to-line residual), object-space PnP, Wahba, and 3D-3D registration.
//!
//! Both PtPL and PnP objectives are quadratic in `(vec(R), t)`. The
//! translation is eliminated in closed form, leaving
//!
//! ```text
//! f(R) = hᵀ Ω h,   h = [vec(R); 1]  (column-major vec, 10 entries)
//! ```
//!
//! which is quartic in the quaternion. `f` is minimized by multi-start
//! damped Newton on SO(3) from 64 deterministic seeds, checked against a
//! 10° rotation grid, and the winner is polished on the full residuals.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix4, Matrix6, SMatrix, SVector, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{skew, Pose, Rotation};

type Vector10 = SVector<f64, 10>;
type Matrix10 = SMatrix<f64, 10, 10>;
type Matrix10x3 = SMatrix<f64, 10, 3>;
type Matrix3x10 = SMatrix<f64, 3, 10>;

/// Point-to-plane term `w·[nᵀ(g − R·p − t)]²`.
///
/// `normal` and `anchor` live in the target frame, `point` in the source
/// frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtplConstraint {
    pub normal: Vector3<f64>,
    pub anchor: Vector3<f64>,
    pub point: Vector3<f64>,
    pub weight: f64,
}

impl PtplConstraint {
    pub fn new(normal: Vector3<f64>, anchor: Vector3<f64>, point: Vector3<f64>) -> Self {
        Self {
            normal,
            anchor,
            point,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Signed residual `nᵀ(g − R·p − t)` (unweighted).
    pub fn residual(&self, pose: &Pose) -> f64 {
        self.normal
            .dot(&(self.anchor - pose.transform_point(&self.point)))
    }
}

/// 3D-2D correspondence. `bearing` is the unit viewing ray of the
/// undistorted image point in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpCorrespondence {
    pub object: Vector3<f64>,
    pub image: Vector2<f64>,
    pub bearing: Vector3<f64>,
}

impl PnpCorrespondence {
    /// `normalized` is the undistorted point on the `z = 1` plane.
    pub fn from_normalized(object: Vector3<f64>, image: Vector2<f64>, normalized: Vector2<f64>) -> Self {
        Self {
            object,
            image,
            bearing: Vector3::new(normalized.x, normalized.y, 1.0).normalize(),
        }
    }

    fn projector(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.bearing * self.bearing.transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSolution {
    pub pose: Pose,
    pub objective_value: f64,
    /// Rotation covariance (rad²) in the right-perturbation frame.
    pub rotation_covariance: Matrix3<f64>,
    pub certified: bool,
}

/// Knobs for the global rotation search.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Additional starting rotations tried next to the 64 built-in seeds.
    pub extra_seeds: Vec<Rotation>,
    /// Run the 10° grid spot-check that sets [`PoseSolution::certified`].
    pub certify: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            extra_seeds: Vec::new(),
            certify: true,
        }
    }
}

const TRANSLATION_CONDITION_LIMIT: f64 = 1e8;
const CERTIFY_RESOLUTION_DEG: f64 = 10.0;
const TIE_TOLERANCE: f64 = 1e-12;
/// Tied candidates closer than this polish to the same minimum.
const SAME_BASIN_RAD: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Reduced (translation-free) objective
// ---------------------------------------------------------------------------

/// `f(R) = hᵀΩh` with `t(R) = T·h`.
#[derive(Clone, Debug)]
struct ReducedObjective {
    omega: Matrix10,
    t_map: Matrix3x10,
}

/// Accumulates `Σ w·‖Z·h + B·t‖²` blocks.
#[derive(Default)]
struct NormalBlocks {
    zz: Matrix10,
    zb: Matrix10x3,
    bb: Matrix3<f64>,
}

impl NormalBlocks {
    fn reduce(self) -> Result<ReducedObjective> {
        let eig = self.bb.symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min <= max / TRANSLATION_CONDITION_LIMIT {
            return Err(Error::DegenerateInput(format!(
                "translation normal matrix ill-conditioned (eigenvalues {min:.3e} .. {max:.3e})"
            )));
        }
        let bb_inv = self.bb.try_inverse().ok_or_else(|| {
            Error::DegenerateInput("translation normal matrix is singular".into())
        })?;
        let t_map = -(bb_inv * self.zb.transpose());
        let mut omega = self.zz + self.zb * t_map;
        omega = (omega + omega.transpose()) * 0.5;
        Ok(ReducedObjective { omega, t_map })
    }
}

fn vec_r(r: &Matrix3<f64>) -> Vector10 {
    let mut h = Vector10::zeros();
    h.fixed_rows_mut::<9>(0).copy_from_slice(r.as_slice());
    h[9] = 1.0;
    h
}

fn ptpl_blocks(constraints: &[PtplConstraint]) -> NormalBlocks {
    let mut blocks = NormalBlocks::default();
    for c in constraints {
        // residual = zᵀh − nᵀt, with nᵀR p = Σ_jk n_j p_k R_jk.
        let mut z = Vector10::zeros();
        for k in 0..3 {
            for j in 0..3 {
                z[j + 3 * k] = -c.normal[j] * c.point[k];
            }
        }
        z[9] = c.normal.dot(&c.anchor);
        let b = -c.normal;
        blocks.zz += c.weight * z * z.transpose();
        blocks.zb += c.weight * z * b.transpose();
        blocks.bb += c.weight * b * b.transpose();
    }
    blocks
}

fn pnp_blocks(corrs: &[PnpCorrespondence]) -> NormalBlocks {
    let mut blocks = NormalBlocks::default();
    for c in corrs {
        let v = c.projector();
        // R p = M vec(R), M[j, j + 3k] = p_k.
        let mut z = SMatrix::<f64, 3, 10>::zeros();
        for k in 0..3 {
            for j in 0..3 {
                for row in 0..3 {
                    z[(row, j + 3 * k)] += v[(row, j)] * c.object[k];
                }
            }
        }
        blocks.zz += z.transpose() * z;
        blocks.zb += z.transpose() * v;
        blocks.bb += v;
    }
    blocks
}

impl ReducedObjective {
    fn value(&self, r: &Matrix3<f64>) -> f64 {
        let h = vec_r(r);
        (h.transpose() * self.omega * h)[0]
    }

    fn translation(&self, r: &Matrix3<f64>) -> Vector3<f64> {
        self.t_map * vec_r(r)
    }

    /// Value, gradient and Hessian with respect to a right perturbation.
    fn derivatives(&self, r: &Matrix3<f64>) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let h = vec_r(r);
        let u = self.omega * h;
        let f = h.dot(&u);
        let gens = [skew(&Vector3::x()), skew(&Vector3::y()), skew(&Vector3::z())];
        let mut d = Matrix10x3::zeros();
        for (k, e) in gens.iter().enumerate() {
            let re = r * e;
            d.fixed_view_mut::<9, 1>(0, k).copy_from_slice(re.as_slice());
        }
        let grad = 2.0 * d.transpose() * u;
        let mut hess = 2.0 * d.transpose() * self.omega * d;
        for j in 0..3 {
            for k in j..3 {
                let sym = r * (gens[j] * gens[k] + gens[k] * gens[j]) * 0.5;
                let mut s = 0.0;
                for (idx, val) in sym.as_slice().iter().enumerate() {
                    s += u[idx] * val;
                }
                hess[(j, k)] += 2.0 * s;
                if j != k {
                    hess[(k, j)] += 2.0 * s;
                }
            }
        }
        (f, grad, hess)
    }

    /// Damped Newton descent on SO(3).
    fn descend(&self, start: &Rotation) -> (Rotation, f64) {
        let mut r = *start;
        let (mut f, mut g, mut h) = self.derivatives(r.matrix());
        let mut lambda = 1e-6 * (1.0 + h.trace().abs());
        for _ in 0..200 {
            let mut accepted = false;
            for _ in 0..30 {
                let damped = h + Matrix3::identity() * lambda;
                let step = match damped.cholesky() {
                    Some(ch) => -ch.solve(&g),
                    None => {
                        lambda = lambda.max(1e-12) * 10.0;
                        continue;
                    }
                };
                let candidate = r.perturb_right(&step);
                let f_new = self.value(candidate.matrix());
                if f_new <= f {
                    let converged = step.norm() < 1e-13 || (f - f_new) <= 1e-16 * f.abs();
                    r = candidate;
                    f = f_new;
                    (_, g, h) = self.derivatives(r.matrix());
                    lambda = (lambda * 0.2).max(1e-15);
                    accepted = true;
                    if converged {
                        return (r, f);
                    }
                    break;
                }
                lambda = lambda.max(1e-12) * 10.0;
            }
            if !accepted {
                break;
            }
        }
        (r, f)
    }
}

// ---------------------------------------------------------------------------
// Seeds and grids
// ---------------------------------------------------------------------------

/// The 24 proper rotations mapping the cube onto itself.
pub fn cube_rotations() -> Vec<Rotation> {
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(24);
    for perm in perms {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(Rotation::from_matrix_unchecked(m));
            }
        }
    }
    out
}

fn radical_inverse(mut i: u32, base: u32) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut scale = inv;
    while i > 0 {
        out += (i % base) as f64 * scale;
        i /= base;
        scale *= inv;
    }
    out
}

/// Quasi-uniform rotations from a Halton sequence mapped through
/// Shoemake's uniform-quaternion construction.
pub fn halton_rotations(count: usize) -> Vec<Rotation> {
    use std::f64::consts::TAU;
    (1..=count as u32)
        .map(|i| {
            let u1 = radical_inverse(i, 2);
            let u2 = radical_inverse(i, 3);
            let u3 = radical_inverse(i, 5);
            let a = (1.0 - u1).sqrt();
            let b = u1.sqrt();
            Rotation::from_quaternion_wxyz([
                b * (TAU * u3).cos(),
                a * (TAU * u2).sin(),
                a * (TAU * u2).cos(),
                b * (TAU * u3).sin(),
            ])
        })
        .collect()
}

fn default_seeds() -> &'static [Rotation] {
    static SEEDS: OnceLock<Vec<Rotation>> = OnceLock::new();
    SEEDS.get_or_init(|| {
        let mut seeds = cube_rotations();
        seeds.extend(halton_rotations(40));
        seeds
    })
}

/// Rotation grid covering SO(3) with neighbouring samples at most
/// `resolution_deg` apart (geodesic).
///
/// Built on the cubed 3-sphere: each of the four hemisphere-facing cells
/// `q_i = 1` is sampled on a regular grid and normalized.
pub fn rotation_grid(resolution_deg: f64) -> Vec<Rotation> {
    assert!(resolution_deg > 0.0, "grid resolution must be positive");
    let n = (4.0 / resolution_deg.to_radians()).ceil().max(1.0) as usize;
    let coords: Vec<f64> = (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    let mut out = Vec::with_capacity(4 * (n + 1).pow(3));
    for face in 0..4 {
        for &a in &coords {
            for &b in &coords {
                for &c in &coords {
                    let q = [a, b, c];
                    let mut full = [0.0; 4];
                    let mut k = 0;
                    for (slot, v) in full.iter_mut().enumerate() {
                        if slot == face {
                            *v = 1.0;
                        } else {
                            *v = q[k];
                            k += 1;
                        }
                    }
                    out.push(Rotation::from_quaternion_wxyz(full));
                }
            }
        }
    }
    out
}

fn certification_grid() -> &'static [Vector10] {
    static GRID: OnceLock<Vec<Vector10>> = OnceLock::new();
    GRID.get_or_init(|| {
        rotation_grid(CERTIFY_RESOLUTION_DEG)
            .iter()
            .map(|r| vec_r(r.matrix()))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Global search
// ---------------------------------------------------------------------------

struct Candidate {
    rotation: Rotation,
    value: f64,
}

/// Runs every seed, returns local minima sorted by value then by distance
/// to identity. Output order does not depend on thread scheduling.
fn multi_start(reduced: &ReducedObjective, extra: &[Rotation]) -> Vec<Candidate> {
    let seeds: Vec<Rotation> = default_seeds().iter().chain(extra.iter()).copied().collect();
    let mut minima: Vec<Candidate> = seeds
        .par_iter()
        .map(|s| {
            let (rotation, value) = reduced.descend(s);
            Candidate { rotation, value }
        })
        .collect();
    sort_candidates(&mut minima);
    minima
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.rotation.angle().total_cmp(&b.rotation.angle()))
    });
}

/// Among the candidates tied (within `tol`) with the global best, the one
/// closest to identity that also satisfies `accept`.
fn pick(candidates: &[Candidate], tol: f64, accept: impl Fn(&Rotation) -> bool) -> Option<&Candidate> {
    let best = candidates.first()?;
    candidates
        .iter()
        .filter(|c| c.value <= best.value + tol && accept(&c.rotation))
        .min_by(|a, b| a.rotation.angle().total_cmp(&b.rotation.angle()))
}

fn omega_tolerance(reduced: &ReducedObjective) -> f64 {
    // Rounding in hᵀΩh grows with the magnitude of Ω.
    1e-11 * (1.0 + reduced.omega.abs().max())
}

/// Returns the rotation from the grid that beats `best` by more than the
/// rounding tolerance, if any.
fn grid_improvement(reduced: &ReducedObjective, best: f64) -> Option<Rotation> {
    let tol = omega_tolerance(reduced);
    let grid = certification_grid();
    let (idx, val) = grid
        .par_iter()
        .enumerate()
        .map(|(i, h)| (i, (h.transpose() * reduced.omega * h)[0]))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
    if val < best - tol {
        let h = &grid[idx];
        let m = Matrix3::from_column_slice(&h.as_slice()[..9]);
        Some(Rotation::from_matrix_unchecked(m))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Full-residual polish
// ---------------------------------------------------------------------------

/// Gauss-Newton normal equations over `(δφ, δt)` for a least-squares model.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Normal6 {
    pub jtj: Matrix6<f64>,
    pub jtr: Vector6<f64>,
    pub cost: f64,
    pub residuals: usize,
}

impl Normal6 {
    fn zero() -> Self {
        Self {
            jtj: Matrix6::zeros(),
            jtr: Vector6::zeros(),
            cost: 0.0,
            residuals: 0,
        }
    }

    /// Gradient of the cost `Σ r²`.
    pub fn gradient(&self) -> Vector6<f64> {
        2.0 * self.jtr
    }
}

pub(crate) trait LeastSquares {
    fn cost(&self, pose: &Pose) -> f64;
    fn normal(&self, pose: &Pose) -> Normal6;
    /// Number of independent scalar residuals, for the variance estimate.
    fn dof(&self) -> usize;
}

pub(crate) struct PtplProblem<'a>(pub &'a [PtplConstraint]);

impl LeastSquares for PtplProblem<'_> {
    fn cost(&self, pose: &Pose) -> f64 {
        self.0
            .iter()
            .map(|c| {
                let r = c.residual(pose);
                c.weight * r * r
            })
            .sum()
    }

    fn normal(&self, pose: &Pose) -> Normal6 {
        let rt = pose.rotation.transpose();
        let mut n = Normal6::zero();
        for c in self.0 {
            let sw = c.weight.sqrt();
            let r = sw * c.residual(pose);
            let jr = -sw * c.point.cross(&(rt * c.normal));
            let jt = -sw * c.normal;
            let j = Vector6::new(jr.x, jr.y, jr.z, jt.x, jt.y, jt.z);
            n.jtj += j * j.transpose();
            n.jtr += j * r;
            n.cost += r * r;
        }
        n.residuals = self.0.len();
        n
    }

    fn dof(&self) -> usize {
        self.0.len()
    }
}

pub(crate) struct PnpProblem<'a>(pub &'a [PnpCorrespondence]);

impl LeastSquares for PnpProblem<'_> {
    fn cost(&self, pose: &Pose) -> f64 {
        self.0
            .iter()
            .map(|c| (c.projector() * pose.transform_point(&c.object)).norm_squared())
            .sum()
    }

    fn normal(&self, pose: &Pose) -> Normal6 {
        let mut n = Normal6::zero();
        let r = pose.rotation.matrix();
        for c in self.0 {
            let v = c.projector();
            let res = v * pose.transform_point(&c.object);
            let jr = -(v * r * skew(&c.object));
            let mut j = SMatrix::<f64, 3, 6>::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&v);
            n.jtj += j.transpose() * j;
            n.jtr += j.transpose() * res;
            n.cost += res.norm_squared();
        }
        n.residuals = 2 * self.0.len();
        n
    }

    fn dof(&self) -> usize {
        2 * self.0.len()
    }
}

/// Levenberg-Marquardt on the full residuals, starting close to the optimum.
pub(crate) fn polish<P: LeastSquares>(problem: &P, start: &Pose) -> (Pose, Normal6) {
    let mut pose = *start;
    let mut normal = problem.normal(&pose);
    let mut lambda = 1e-9 * (1.0 + normal.jtj.trace());
    for _ in 0..50 {
        let mut improved = false;
        for _ in 0..20 {
            let a = normal.jtj + Matrix6::from_diagonal_element(lambda);
            let Some(ch) = a.cholesky() else {
                lambda = lambda.max(1e-15) * 10.0;
                continue;
            };
            let step = -ch.solve(&normal.jtr);
            let candidate = pose.perturb(
                &step.fixed_rows::<3>(0).into_owned(),
                &step.fixed_rows::<3>(3).into_owned(),
            );
            let cost = problem.cost(&candidate);
            if cost <= normal.cost {
                let tiny = step.norm() < 1e-15 * (1.0 + pose.translation.norm())
                    || normal.cost - cost <= 1e-15 * normal.cost;
                pose = candidate;
                normal = problem.normal(&pose);
                lambda = (lambda * 0.1).max(1e-18);
                improved = !tiny;
                break;
            }
            lambda = lambda.max(1e-15) * 10.0;
        }
        if !improved {
            break;
        }
    }
    (pose, normal)
}

fn rotation_covariance(normal: &Normal6, dof: usize) -> Matrix3<f64> {
    let s2 = normal.cost / (dof.saturating_sub(6).max(1)) as f64;
    let Some(inv) = normal.jtj.try_inverse() else {
        return Matrix3::from_diagonal_element(f64::INFINITY);
    };
    let block: Matrix3<f64> = inv.fixed_view::<3, 3>(0, 0).into_owned() * s2;
    make_psd(&((block + block.transpose()) * 0.5))
}

fn make_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = m.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Global search, certification and polish. `accept` filters the tied
/// global minima (cheirality for PnP); `Err(best)` returns the rejected
/// global optimum when no tied minimum is acceptable.
fn solve_reduced<P: LeastSquares>(
    reduced: &ReducedObjective,
    problem: &P,
    options: &SolverOptions,
    accept: impl Fn(&Pose) -> bool,
) -> std::result::Result<PoseSolution, Pose> {
    let mut candidates = multi_start(reduced, &options.extra_seeds);
    let tol = omega_tolerance(reduced);
    let to_pose = |r: &Rotation| Pose::new(*r, reduced.translation(r.matrix()));

    let mut certified = false;
    if options.certify {
        match grid_improvement(reduced, candidates[0].value) {
            None => certified = true,
            Some(start) => {
                let (rotation, value) = reduced.descend(&start);
                candidates.push(Candidate { rotation, value });
                sort_candidates(&mut candidates);
                certified = grid_improvement(reduced, candidates[0].value).is_none();
            }
        }
    }

    // Polish every tied, acceptable candidate on the exact residuals.
    let best_value = candidates[0].value;
    let mut polished: Vec<(Pose, Normal6)> = Vec::new();
    for c in candidates.iter().filter(|c| c.value <= best_value + tol) {
        let start = to_pose(&c.rotation);
        if !accept(&start)
            || polished
                .iter()
                .any(|(p, _)| p.rotation.angle_to(&c.rotation) < SAME_BASIN_RAD)
        {
            continue;
        }
        let (pose, normal) = polish(problem, &start);
        if accept(&pose) {
            polished.push((pose, normal));
        }
    }
    debug_assert!(pick(&candidates, tol, |_| true).is_some());
    let min_cost = polished.iter().map(|(_, n)| n.cost).fold(f64::INFINITY, f64::min);
    let Some((pose, normal)) = polished
        .into_iter()
        .filter(|(_, n)| n.cost <= min_cost + TIE_TOLERANCE)
        .min_by(|a, b| a.0.rotation.angle().total_cmp(&b.0.rotation.angle()))
    else {
        let best = pick(&candidates, tol, |_| true).map(|c| c.rotation).unwrap_or_default();
        return Err(to_pose(&best));
    };
    Ok(PoseSolution {
        pose,
        objective_value: normal.cost,
        rotation_covariance: rotation_covariance(&normal, problem.dof()),
        certified,
    })
}

// ---------------------------------------------------------------------------
// Public solvers
// ---------------------------------------------------------------------------

/// Global minimizer of `Σ wᵢ[nᵢᵀ(gᵢ − R·pᵢ − t)]²`.
pub fn solve_ptpl(constraints: &[PtplConstraint]) -> Result<PoseSolution> {
    solve_ptpl_with(constraints, &SolverOptions::default())
}

pub fn solve_ptpl_with(constraints: &[PtplConstraint], options: &SolverOptions) -> Result<PoseSolution> {
    if constraints.len() < 6 {
        return Err(Error::DegenerateInput(format!(
            "point-to-plane needs at least 6 constraints, got {}",
            constraints.len()
        )));
    }
    if let Some(bad) = constraints
        .iter()
        .find(|c| !(c.weight >= 0.0) || (c.normal.norm() - 1.0).abs() > 1e-9)
    {
        return Err(Error::DegenerateInput(format!(
            "constraint with non-unit normal or negative weight: {bad:?}"
        )));
    }
    let reduced = ptpl_blocks(constraints).reduce()?;
    solve_reduced(&reduced, &PtplProblem(constraints), options, |_| true)
        .map_err(|_| Error::NonConvergence("point-to-plane search returned no candidate".into()))
}

/// Object-space PnP: minimizes `Σ‖(I − b̂b̂ᵀ)(R·p + t)‖²` subject to every
/// object point landing in front of the camera.
pub fn solve_pnp(corrs: &[PnpCorrespondence]) -> Result<PoseSolution> {
    solve_pnp_with(corrs, &SolverOptions::default())
}

pub fn solve_pnp_with(corrs: &[PnpCorrespondence], options: &SolverOptions) -> Result<PoseSolution> {
    if corrs.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "PnP needs at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    let reduced = pnp_blocks(corrs).reduce()?;
    let in_front = |pose: &Pose| {
        corrs
            .iter()
            .all(|c| pose.transform_point(&c.object).z > 0.0)
    };
    solve_reduced(&reduced, &PnpProblem(corrs), options, in_front).map_err(|best| {
        let (index, depth) = corrs
            .iter()
            .enumerate()
            .map(|(i, c)| (i, best.transform_point(&c.object).z))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        Error::BehindCamera { index, depth }
    })
}

/// Objective value and gradient with respect to `(δφ, δt)` (right
/// perturbation of the rotation) of the weighted point-to-plane cost.
pub fn ptpl_objective_gradient(constraints: &[PtplConstraint], pose: &Pose) -> (f64, Vector6<f64>) {
    let n = PtplProblem(constraints).normal(pose);
    (n.cost, n.gradient())
}

/// Objective value and gradient of the object-space PnP cost.
pub fn pnp_objective_gradient(corrs: &[PnpCorrespondence], pose: &Pose) -> (f64, Vector6<f64>) {
    let n = PnpProblem(corrs).normal(pose);
    (n.cost, n.gradient())
}

/// Rewrites a point-to-line residual as a point-to-plane one.
///
/// The plane normal is the direction from the line to the transformed
/// point, so at `current` the residual magnitude equals the point-to-line
/// distance.
pub fn make_ptl_constraint(
    edge_point_target: Vector3<f64>,
    edge_tangent: Vector3<f64>,
    p_source: Vector3<f64>,
    current: &Pose,
) -> Result<PtplConstraint> {
    let v = edge_tangent;
    let q = current.transform_point(&p_source) - edge_point_target;
    let perp = q - v * v.dot(&q);
    let dist = perp.norm();
    if dist < 1e-9 {
        return Err(Error::DegenerateInput(
            "point lies on the line; projection direction undefined".into(),
        ));
    }
    Ok(PtplConstraint::new(perp / dist, edge_point_target, p_source))
}

/// Horn's 4×4 matrix for `max Σ wᵢ bᵢᵀ R aᵢ`; its top eigenvector is the
/// optimal quaternion `(w, x, y, z)`.
fn horn_rotation(pairs: impl Iterator<Item = (Vector3<f64>, Vector3<f64>, f64)>) -> Rotation {
    let mut s = Matrix3::zeros();
    for (a, b, w) in pairs {
        s += w * a * b.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = n.symmetric_eigen();
    let imax = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(imax);
    Rotation::from_quaternion_wxyz([q[0], q[1], q[2], q[3]])
}

/// Global minimizer of `Σ wᵢ‖targetᵢ − R·sourceᵢ‖²` over unit vectors;
/// `pairs` holds `(source, target, weight)`.
pub fn solve_wahba(pairs: &[(Vector3<f64>, Vector3<f64>, f64)]) -> Result<Rotation> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateInput("Wahba needs at least 2 pairs".into()));
    }
    let first = pairs[0].0.normalize();
    let spread = pairs
        .iter()
        .map(|(s, _, _)| first.cross(&s.normalize()).norm())
        .fold(0.0, f64::max);
    if spread <= 1e-6 {
        return Err(Error::DegenerateInput(
            "all source directions are parallel".into(),
        ));
    }
    Ok(horn_rotation(pairs.iter().copied()))
}

/// `Σ wᵢ‖targetᵢ − R·sourceᵢ‖²`.
pub fn wahba_objective(pairs: &[(Vector3<f64>, Vector3<f64>, f64)], r: &Rotation) -> f64 {
    pairs
        .iter()
        .map(|(s, t, w)| w * (t - *r * *s).norm_squared())
        .sum()
}

/// Closed-form rigid registration `argmin Σ‖bᵢ − R·aᵢ − t‖²`.
pub fn solve_point_registration_3d3d(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateInput(
            "registration needs at least 3 pairs".into(),
        ));
    }
    let n = pairs.len() as f64;
    let ca = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let cb = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (a, _) in pairs {
        let d = a - ca;
        cov += d * d.transpose();
    }
    let ev = (cov / n).symmetric_eigen().eigenvalues;
    let mut sorted = [ev[0], ev[1], ev[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1].max(0.0).sqrt() <= 1e-8 * sorted[0].max(1.0).sqrt() {
        return Err(Error::DegenerateInput("source points are collinear".into()));
    }
    let r = horn_rotation(pairs.iter().map(|(a, b)| (a - ca, b - cb, 1.0)));
    Ok(Pose::new(r, cb - r * ca))
}

/// `Σ‖bᵢ − R·aᵢ − t‖²`.
pub fn registration_objective(pairs: &[(Vector3<f64>, Vector3<f64>)], pose: &Pose) -> f64 {
    pairs
        .iter()
        .map(|(a, b)| (b - pose.transform_point(a)).norm_squared())
        .sum()
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// How the oracle handles translation.
pub enum TranslationSearch<'a> {
    /// Exhaustive grid over an axis-aligned box.
    Grid {
        min: Vector3<f64>,
        max: Vector3<f64>,
        step: f64,
    },
    /// Translation supplied as a function of the rotation (for objectives
    /// with a known profile minimizer).
    Profiled(&'a (dyn Fn(&Rotation) -> Vector3<f64> + Sync)),
}

const ORACLE_POLISH_CELLS: usize = 8;
const ORACLE_WARN_EVALUATIONS: f64 = 1e8;

/// Exhaustive SO(3) × translation search followed by local polishing of
/// the best cells. The returned objective is an upper bound on the global
/// minimum.
pub fn brute_force_pose_oracle(
    objective: &(dyn Fn(&Pose) -> f64 + Sync),
    rotation_resolution_deg: f64,
    translation: TranslationSearch<'_>,
) -> PoseSolution {
    let rotations = rotation_grid(rotation_resolution_deg);
    let translations: Vec<Vector3<f64>> = match &translation {
        TranslationSearch::Grid { min, max, step } => {
            let axis = |lo: f64, hi: f64| -> Vec<f64> {
                let n = ((hi - lo) / step).floor().max(0.0) as usize;
                (0..=n).map(|i| lo + i as f64 * step).collect()
            };
            let (xs, ys, zs) = (axis(min.x, max.x), axis(min.y, max.y), axis(min.z, max.z));
            let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
            for &x in &xs {
                for &y in &ys {
                    for &z in &zs {
                        out.push(Vector3::new(x, y, z));
                    }
                }
            }
            out
        }
        TranslationSearch::Profiled(_) => Vec::new(),
    };
    let evaluations = rotations.len() as f64 * translations.len().max(1) as f64;
    if evaluations > ORACLE_WARN_EVALUATIONS {
        log::warn!("brute-force oracle will evaluate {evaluations:.3e} poses");
    }

    let pose_for = |r: &Rotation, ti: usize| -> Pose {
        match &translation {
            TranslationSearch::Profiled(f) => Pose::new(*r, f(r)),
            TranslationSearch::Grid { .. } => Pose::new(*r, translations[ti]),
        }
    };
    let per_rotation = translations.len().max(1);
    let mut scored: Vec<(usize, usize, f64)> = rotations
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ri, r)| {
            (0..per_rotation).map(move |ti| (ri, ti, objective(&pose_for(r, ti))))
        })
        .collect();
    scored.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let profiled = matches!(translation, TranslationSearch::Profiled(_));
    let best = scored
        .iter()
        .take(ORACLE_POLISH_CELLS)
        .map(|&(ri, ti, _)| {
            let start = pose_for(&rotations[ri], ti);
            if profiled {
                let TranslationSearch::Profiled(f) = &translation else { unreachable!() };
                let g = |r: &Rotation| objective(&Pose::new(*r, f(r)));
                let r = numeric_descent_rotation(&g, &start.rotation);
                let pose = Pose::new(r, f(&r));
                (pose, objective(&pose))
            } else {
                let pose = numeric_descent_pose(objective, &start);
                (pose, objective(&pose))
            }
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is never empty");

    PoseSolution {
        pose: best.0,
        objective_value: best.1,
        rotation_covariance: Matrix3::zeros(),
        certified: false,
    }
}

/// Finite-difference damped Newton over an `N`-dimensional perturbation.
fn numeric_descent<const N: usize>(
    f: &dyn Fn(&SVector<f64, N>) -> f64,
    steps: usize,
) -> SVector<f64, N> {
    let mut x = SVector::<f64, N>::zeros();
    let mut fx = f(&x);
    let mut lambda = 1e-3;
    for _ in 0..steps {
        let h = 1e-5;
        let mut g = SVector::<f64, N>::zeros();
        let mut hess = SMatrix::<f64, N, N>::zeros();
        let eval = |d: &SVector<f64, N>| f(&(x + d));
        for i in 0..N {
            let mut ei = SVector::<f64, N>::zeros();
            ei[i] = h;
            let fp = eval(&ei);
            let fm = eval(&-ei);
            g[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * fx + fm) / (h * h);
            for j in 0..i {
                let mut ej = SVector::<f64, N>::zeros();
                ej[j] = h;
                let v = (eval(&(ei + ej)) - eval(&(ei - ej)) - eval(&(ej - ei)) + eval(&(-ei - ej)))
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let mut moved = false;
        for _ in 0..20 {
            let a = hess + SMatrix::<f64, N, N>::identity() * lambda * (1.0 + hess.diagonal().abs().max());
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -ch.solve(&g);
            let f_new = f(&(x + step));
            if f_new < fx {
                x += step;
                fx = f_new;
                lambda = (lambda * 0.1).max(1e-12);
                moved = step.norm() > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !moved {
            break;
        }
    }
    x
}

fn numeric_descent_rotation(f: &dyn Fn(&Rotation) -> f64, start: &Rotation) -> Rotation {
    // Re-linearize around the current estimate a few times.
    let mut r = *start;
    for _ in 0..4 {
        let local = |d: &SVector<f64, 3>| f(&r.perturb_right(d));
        let d = numeric_descent::<3>(&local, 30);
        r = r.perturb_right(&d);
    }
    r
}

fn numeric_descent_pose(f: &dyn Fn(&Pose) -> f64, start: &Pose) -> Pose {
    let mut p = *start;
    for _ in 0..4 {
        let local = |d: &SVector<f64, 6>| {
            f(&p.perturb(
                &d.fixed_rows::<3>(0).into_owned(),
                &d.fixed_rows::<3>(3).into_owned(),
            ))
        };
        let d = numeric_descent::<6>(&local, 30);
        p = p.perturb(
            &d.fixed_rows::<3>(0).into_owned(),
            &d.fixed_rows::<3>(3).into_owned(),
        );
    }
    p
}
