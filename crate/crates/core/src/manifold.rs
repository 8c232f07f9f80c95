//! SO(d)/SE(d) primitives shared by every solver: closest-rotation
//! projection, block-symmetric extraction, the Euclidean → Riemannian
//! gradient conversion and the projection retraction.
//!
//! Variables are row-stacked `d × (d+1)m` matrices `[t_1 … t_m  R_1 … R_m]`:
//! the first `m` columns are translations, followed by `m` rotation blocks of
//! `d` columns each. `d` is a runtime value (2 or 3).

use nalgebra::{DVector, Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{PgoError, Result};
use crate::sparse::Mat;

/// Horizontally stacked rotations, `d × d·m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBlock {
    entries: Mat,
    d: usize,
}

impl RotationBlock {
    pub const TOLERANCE: f64 = 1e-9;

    /// Validates that every `d × d` block is special orthogonal.
    pub fn new(entries: Mat, d: usize) -> Result<Self> {
        if d == 0 || entries.nrows() != d || entries.ncols() % d != 0 {
            return Err(PgoError::DimensionMismatch(format!(
                "rotation block of shape {}x{} with d = {d}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..entries.ncols() / d {
            let b = entries.columns(i * d, d).into_owned();
            if !is_rotation(&b, Self::TOLERANCE) {
                return Err(PgoError::InvalidParameter(format!(
                    "block {i} is not in SO({d})"
                )));
            }
        }
        Ok(RotationBlock { entries, d })
    }

    pub fn identity(d: usize, m: usize) -> Self {
        let mut entries = Mat::zeros(d, d * m);
        for i in 0..m {
            entries.columns_mut(i * d, d).fill_with_identity();
        }
        RotationBlock { entries, d }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.entries.ncols() / self.d
    }

    pub fn block(&self, i: usize) -> Mat {
        self.entries.columns(i * self.d, self.d).into_owned()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn into_inner(self) -> Mat {
        self.entries
    }
}

/// A tangent vector at a row-stacked pose block. The rotation part of every
/// pose satisfies `Rᵢᵀ Δᵢ` skew-symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBlock {
    pub entries: Mat,
}

impl TangentBlock {
    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }
}

pub fn is_rotation(r: &Mat, tol: f64) -> bool {
    let d = r.nrows();
    if r.ncols() != d {
        return false;
    }
    let gram = r.transpose() * r - Mat::identity(d, d);
    gram.norm() <= tol && r.determinant() > 0.0
}

/// Closest rotation to `m` in Frobenius norm.
///
/// With `m = U Σ Vᵀ`, returns `U diag(1, …, 1, s) Vᵀ` with `s = sign det(UVᵀ)`,
/// flipping the singular vector of the smallest singular value (lowest index
/// on ties). Fails when the answer is not unique.
pub fn project_to_rotation(m: &Mat) -> Result<Mat> {
    let d = m.nrows();
    if m.ncols() != d || d == 0 {
        return Err(PgoError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(PgoError::numerical("non-finite entries in projection input"));
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sv = svd.singular_values;

    let sign = if u.determinant() * v_t.determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let smallest = order[0];
    // Non-unique only when at least two singular values vanish.
    let scale = sv.max().max(f64::MIN_POSITIVE);
    let second = if d >= 2 { sv[order[1]] } else { sv[smallest] };
    if second <= 1e-12 * scale || scale <= f64::MIN_POSITIVE {
        return Err(PgoError::DegenerateProjection { pose: None });
    }

    if sign < 0.0 {
        let mut col = u.column_mut(smallest);
        col.neg_mut();
    }
    Ok(u * v_t)
}

/// `½ BlockDiag_d(Z + Zᵀ)`: symmetrized diagonal `d × d` blocks, zero elsewhere.
pub fn sym_block_diag(z: &Mat, d: usize) -> Result<Mat> {
    let n = z.nrows();
    if z.ncols() != n || d == 0 || n % d != 0 {
        return Err(PgoError::DimensionMismatch(format!(
            "sym_block_diag of {}x{} with block size {d}",
            z.nrows(),
            z.ncols()
        )));
    }
    let mut out = Mat::zeros(n, n);
    for b in 0..n / d {
        let o = b * d;
        let blk = z.view((o, o), (d, d));
        let sym = (blk + blk.transpose()) * 0.5;
        out.view_mut((o, o), (d, d)).copy_from(&sym);
    }
    Ok(out)
}

fn pose_count(x: &Mat, d: usize) -> Result<usize> {
    if d == 0 || x.nrows() != d || x.ncols() % (d + 1) != 0 {
        return Err(PgoError::DimensionMismatch(format!(
            "pose block of shape {}x{} does not fit d = {d}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(x.ncols() / (d + 1))
}

/// Projects an ambient direction `v` onto the tangent space at `x`.
///
/// Translation columns pass through; each rotation block becomes
/// `Vᵢ − Rᵢ sym(Rᵢᵀ Vᵢ)`.
pub fn tangent_project(x: &Mat, v: &Mat, d: usize) -> Result<Mat> {
    let m = pose_count(x, d)?;
    if v.shape() != x.shape() {
        return Err(PgoError::DimensionMismatch(format!(
            "direction {:?} vs point {:?}",
            v.shape(),
            x.shape()
        )));
    }
    let mut out = v.clone();
    for i in 0..m {
        let c = m + d * i;
        let r = x.columns(c, d);
        let g = v.columns(c, d);
        let rtg = r.transpose() * g;
        let sym = (&rtg + rtg.transpose()) * 0.5;
        let corr = r * sym;
        let mut dst = out.columns_mut(c, d);
        dst -= corr;
    }
    Ok(out)
}

/// Riemannian gradient on `ℝ^{d×m} × SO(d)^m` from the Euclidean gradient.
pub fn riemannian_gradient(x: &Mat, euclid_grad: &Mat, d: usize) -> Result<TangentBlock> {
    tangent_project(x, euclid_grad, d).map(|entries| TangentBlock { entries })
}

/// Projection retraction: translations move linearly, each rotation block of
/// `x + v` is projected back onto SO(d).
pub fn retract(x: &Mat, v: &Mat, d: usize) -> Result<Mat> {
    let m = pose_count(x, d)?;
    let mut out = x + v;
    project_rotations_in_place(&mut out, m, d)?;
    Ok(out)
}

/// Replaces every rotation block of a row-stacked pose block by its
/// closest rotation.
pub fn project_rotations_in_place(x: &mut Mat, m: usize, d: usize) -> Result<()> {
    for i in 0..m {
        let c = m + d * i;
        let blk = x.columns(c, d).into_owned();
        let r = project_to_rotation(&blk).map_err(|e| match e {
            PgoError::DegenerateProjection { .. } => PgoError::DegenerateProjection { pose: Some(i) },
            other => other,
        })?;
        x.columns_mut(c, d).copy_from(&r);
    }
    Ok(())
}

/// Geodesic angle of a rotation, in radians.
pub fn rotation_angle(r: &Mat) -> f64 {
    let d = r.nrows();
    match d {
        2 => r[(1, 0)].atan2(r[(0, 0)]).abs(),
        _ => {
            let c = ((r.trace() - (d as f64 - 2.0)) * 0.5).clamp(-1.0, 1.0);
            c.acos()
        }
    }
}

/// Rotation by `angle` radians in the plane.
pub fn rotation_2d(angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Rotation about `axis` (need not be normalized) by `angle` radians.
pub fn rotation_3d(axis: &Vector3<f64>, angle: f64) -> Mat {
    let norm = axis.norm();
    if norm == 0.0 || angle == 0.0 {
        return Mat::identity(3, 3);
    }
    let r: Matrix3<f64> = Rotation3::new(axis / norm * angle).into_inner();
    Mat::from_column_slice(3, 3, r.as_slice())
}

/// Uniformly distributed rotation (Haar measure) in dimension `d`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    // A Gaussian matrix is almost surely full rank with distinct singular values.
    project_to_rotation(&g).unwrap_or_else(|_| Mat::identity(d, d))
}

/// Rotation by a Gaussian angle (std `sigma`) about a uniformly random axis.
pub fn random_small_rotation<R: Rng + ?Sized>(rng: &mut R, d: usize, sigma: f64) -> Mat {
    let angle: f64 = sigma * Distribution::<f64>::sample(&StandardNormal, rng);
    if d == 2 {
        rotation_2d(angle)
    } else {
        let axis = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        rotation_3d(&axis, angle)
    }
}

/// Gaussian vector with i.i.d. components of standard deviation `sigma`.
pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, sigma: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| sigma * Distribution::<f64>::sample(&StandardNormal, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_projects_to_itself() {
        for d in [2, 3] {
            let i = Mat::identity(d, d);
            assert!((project_to_rotation(&i).unwrap() - &i).norm() < 1e-15);
        }
    }

    #[test]
    fn rotations_are_fixed_points() {
        let mut rng = rng();
        for d in [2, 3] {
            for _ in 0..20 {
                let r = random_rotation(&mut rng, d);
                assert!((project_to_rotation(&r).unwrap() - &r).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn reflection_is_sign_fixed() {
        let m = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, -1.0]));
        let r = project_to_rotation(&m).unwrap();
        assert!((r - Mat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn tied_reflection_matches_random_search() {
        // σ = (2, 1, 1) with det < 0: a whole family of optima, resolved
        // deterministically; its cost must match the best random rotation.
        let mut rng = rng();
        let m = Mat::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, -1.0]));
        let r = project_to_rotation(&m).unwrap();
        assert!(is_rotation(&r, 1e-12));
        assert_eq!(r, project_to_rotation(&m).unwrap());
        let cost = (&m - &r).norm();
        let best_random = (0..10_000)
            .map(|_| (&m - random_rotation(&mut rng, 3)).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(cost <= best_random + 1e-9);
        assert!((cost - 5.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_tie_is_degenerate() {
        let m = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert!(matches!(
            project_to_rotation(&m),
            Err(PgoError::DegenerateProjection { .. })
        ));
        assert!(project_to_rotation(&Mat::zeros(2, 2)).is_err());
        // A single vanishing singular value still has a unique answer.
        let m = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((project_to_rotation(&m).unwrap() - Mat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn projection_beats_random_search() {
        let mut rng = rng();
        let m = Mat::from_row_slice(3, 3, &[0.9, -0.3, 0.2, 0.1, 1.1, -0.4, 0.3, 0.2, -0.8]);
        let best = project_to_rotation(&m).unwrap();
        let best_cost = (&m - &best).norm();
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng, 3);
            assert!(best_cost <= (&m - r).norm() + 1e-12);
        }
    }

    #[test]
    fn sym_block_diag_cases() {
        let i = Mat::identity(6, 6);
        assert_eq!(sym_block_diag(&i, 3).unwrap(), i);

        let z = Mat::from_fn(6, 6, |r, c| r as f64 - c as f64);
        assert!(sym_block_diag(&z, 3).unwrap().norm() < 1e-15);

        let z = Mat::from_fn(6, 6, |r, c| ((r * 5 + c * 7) % 11) as f64 - 4.0);
        let out = sym_block_diag(&z, 3).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let expected = if r / 3 == c / 3 {
                    0.5 * (z[(r, c)] + z[(c, r)])
                } else {
                    0.0
                };
                assert_eq!(out[(r, c)], expected);
            }
        }

        assert!(matches!(
            sym_block_diag(&Mat::zeros(5, 5), 3),
            Err(PgoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn riemannian_gradient_simple_cases() {
        let d = 3;
        let m = 2;
        let mut x = Mat::zeros(d, (d + 1) * m);
        for i in 0..m {
            x.columns_mut(m + d * i, d).fill_with_identity();
        }
        let zero = riemannian_gradient(&x, &Mat::zeros(d, (d + 1) * m), d).unwrap();
        assert_eq!(zero.norm(), 0.0);

        // Symmetric rotation gradient at R = I lies entirely in the normal space.
        let mut g = Mat::zeros(d, (d + 1) * m);
        g[(0, 1)] = 4.0;
        let s = Mat::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 3.0, 0.0, 3.0, 5.0]);
        g.columns_mut(m, d).copy_from(&s);
        let rg = riemannian_gradient(&x, &g, d).unwrap();
        assert_eq!(rg.entries[(0, 1)], 4.0);
        assert!(rg.entries.columns(m, d).norm() < 1e-15);

        assert!(riemannian_gradient(&x, &Mat::zeros(d, 5), d).is_err());
    }

    #[test]
    fn retraction_stays_on_manifold() {
        let mut rng = rng();
        let d = 3;
        let m = 4;
        let mut x = Mat::zeros(d, (d + 1) * m);
        for i in 0..m {
            x.columns_mut(m + d * i, d)
                .copy_from(&random_rotation(&mut rng, d));
        }
        let v = Mat::from_fn(d, (d + 1) * m, |r, c| ((r + 3 * c) % 7) as f64 * 0.01);
        let v = tangent_project(&x, &v, d).unwrap();
        let y = retract(&x, &v, d).unwrap();
        for i in 0..m {
            assert!(is_rotation(&y.columns(m + d * i, d).into_owned(), 1e-12));
        }
        assert_eq!(y.columns(0, m), (&x + &v).columns(0, m));
    }

    #[test]
    fn rotation_angle_round_trip() {
        let axis = Vector3::new(0.3, -1.0, 0.5);
        let r = rotation_3d(&axis, 0.7);
        assert!((rotation_angle(&r) - 0.7).abs() < 1e-12);
        assert!((rotation_angle(&rotation_2d(-0.4)) - 0.4).abs() < 1e-15);
    }
}
