//! Elements of `S_N × SO(3)` (plus a translation), their action on molecular
//! states, Haar sampling, and small finite orthogonal groups acting on `ℝ^d`.
//!
//! Conventions:
//!
//! * `perm[i]` is the *destination* of atom `i`: the action moves atom `i`
//!   to slot `perm[i]` and maps its position `x_i` to `R x_i + t`.
//! * Composition [`compose(g, h)`](compose) means "apply `h` first, then `g`",
//!   so `act(&compose(g, h), z) == act(g, &act(h, z))`.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, invalid, Result};
use crate::molecule::MoleculeState;

/// A permutation, a proper rotation and a translation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub perm: Vec<usize>,
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn from_perm(perm: Vec<usize>) -> Self {
        Self {
            perm,
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn from_rotation(n: usize, rot: Matrix3<f64>) -> Self {
        Self {
            perm: (0..n).collect(),
            rot,
            trans: Vector3::zeros(),
        }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn inverse(&self) -> Self {
        let rot_t = self.rot.transpose();
        Self {
            perm: invert_perm(&self.perm),
            trans: -(rot_t * self.trans),
            rot: rot_t,
        }
    }

    /// Checks the bijection and `SO(3)` invariants (tolerance 1e-10).
    pub fn validate(&self) -> Result<()> {
        if !is_permutation(&self.perm) {
            return Err(invalid("perm is not a bijection"));
        }
        let err = (self.rot.transpose() * self.rot - Matrix3::identity()).abs().max();
        if err > 1e-10 || (self.rot.determinant() - 1.0).abs() > 1e-10 {
            return Err(invalid("rot is not a proper rotation"));
        }
        Ok(())
    }

    /// Max deviation between two elements (0 for equal permutations).
    pub fn distance(&self, other: &Self) -> f64 {
        if self.perm != other.perm {
            return f64::INFINITY;
        }
        (self.rot - other.rot)
            .abs()
            .max()
            .max((self.trans - other.trans).abs().max())
    }
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub fn invert_perm(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &d) in p.iter().enumerate() {
        inv[d] = i;
    }
    inv
}

/// `g ∘ h`: apply `h`, then `g`.
pub fn compose(g: &GroupElement, h: &GroupElement) -> GroupElement {
    assert_eq!(g.n(), h.n(), "composing elements of different S_N");
    GroupElement {
        perm: h.perm.iter().map(|&d| g.perm[d]).collect(),
        rot: g.rot * h.rot,
        trans: g.rot * h.trans + g.trans,
    }
}

/// Applies `g` to coordinates only.
pub fn act_coords(g: &GroupElement, coords: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    if g.n() != coords.len() {
        return Err(dim_err(format!(
            "group element over {} atoms applied to {} coordinates",
            g.n(),
            coords.len()
        )));
    }
    let mut out = vec![[0.0; 3]; coords.len()];
    for (i, x) in coords.iter().enumerate() {
        let y = g.rot * Vector3::new(x[0], x[1], x[2]) + g.trans;
        out[g.perm[i]] = [y[0], y[1], y[2]];
    }
    Ok(out)
}

/// `g · Z = (π(X)Rᵀ + 1tᵀ, π(H), π(A))`.
pub fn act(g: &GroupElement, z: &MoleculeState) -> Result<MoleculeState> {
    let n = z.n_atoms();
    let coords = act_coords(g, &z.coords)?;
    let mut atom_types = vec![0; n];
    let mut charges = vec![0; n];
    let mut bonds = vec![0; n * n];
    for i in 0..n {
        let pi = g.perm[i];
        atom_types[pi] = z.atom_types[i];
        charges[pi] = z.charges[i];
        for j in 0..n {
            bonds[pi * n + g.perm[j]] = z.bonds[i * n + j];
        }
    }
    Ok(MoleculeState {
        coords,
        atom_types,
        charges,
        bonds,
    })
}

/// Uniform rotation from a normalized 4-vector of standard normals.
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

/// Uniform permutation by Fisher–Yates shuffle.
pub fn haar_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Haar-random element of `S_N × SO(3)` with zero translation.
pub fn haar_sample<R: Rng + ?Sized>(n_atoms: usize, rng: &mut R) -> GroupElement {
    let perm = haar_permutation(n_atoms, rng);
    GroupElement {
        perm,
        rot: haar_rotation(rng),
        trans: Vector3::zeros(),
    }
}

/// Subtracts the coordinate centroid; atom features and bonds are untouched.
pub fn center(z: &MoleculeState) -> MoleculeState {
    let c = z.centroid();
    let mut out = z.clone();
    for x in &mut out.coords {
        for k in 0..3 {
            x[k] -= c[k];
        }
    }
    out
}

/// `N × d` points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(dim_err(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite point coordinate"));
        }
        Ok(Self { dim, data })
    }

    pub fn n_points(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// A finite group of `d × d` orthogonal matrices.
#[derive(Debug, Clone)]
pub struct FiniteGroupSpec {
    pub elements: Vec<DMatrix<f64>>,
}

impl FiniteGroupSpec {
    /// Validates orthogonality (1e-10), closure (1e-8) and the identity.
    pub fn new(elements: Vec<DMatrix<f64>>) -> Result<Self> {
        let spec = Self { elements };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.elements.first().ok_or_else(|| invalid("group has no elements"))?;
        let d = first.nrows();
        let eye = DMatrix::<f64>::identity(d, d);
        for g in &self.elements {
            if g.nrows() != d || g.ncols() != d {
                return Err(dim_err("group elements of different shapes"));
            }
            if (g.transpose() * g - &eye).abs().max() > 1e-10 {
                return Err(invalid("group element is not orthogonal"));
            }
        }
        let has = |m: &DMatrix<f64>| self.elements.iter().any(|g| (g - m).abs().max() <= 1e-8);
        if !has(&eye) {
            return Err(invalid("group lacks the identity"));
        }
        for a in &self.elements {
            for b in &self.elements {
                if !has(&(a * b)) {
                    return Err(invalid("group is not closed under composition"));
                }
            }
        }
        Ok(())
    }

    pub fn trivial(d: usize) -> Self {
        Self {
            elements: vec![DMatrix::identity(d, d)],
        }
    }

    /// `{+1, −1}` acting on `ℝ¹`.
    pub fn sign_flip() -> Self {
        Self {
            elements: vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)],
        }
    }

    /// Rotations of the plane by multiples of `2π/m`; element `k` is `2πk/m`.
    pub fn cyclic(m: usize) -> Self {
        let elements = (0..m)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                let (s, c) = a.sin_cos();
                DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
            })
            .collect();
        Self { elements }
    }

    /// All six coordinate permutations of `ℝ³`.
    pub fn s3() -> Self {
        let perms = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [1, 0, 2], [0, 2, 1], [2, 1, 0]];
        let elements = perms
            .iter()
            .map(|p| DMatrix::from_fn(3, 3, |i, j| if p[i] == j { 1.0 } else { 0.0 }))
            .collect();
        Self { elements }
    }

    pub fn apply(&self, index: usize, v: &[f64]) -> DVector<f64> {
        &self.elements[index] * DVector::from_column_slice(v)
    }

    pub fn apply_inverse(&self, index: usize, v: &[f64]) -> DVector<f64> {
        self.elements[index].tr_mul(&DVector::from_column_slice(v))
    }
}

/// Applies group element `index` to every row of `v`.
pub fn finite_act(spec: &FiniteGroupSpec, index: usize, v: &PointCloud) -> Result<PointCloud> {
    if index >= spec.order() {
        return Err(invalid(format!(
            "element index {index} out of range for a group of order {}",
            spec.order()
        )));
    }
    if v.dim != spec.dim() {
        return Err(dim_err(format!(
            "group acts on ℝ^{}, points live in ℝ^{}",
            spec.dim(),
            v.dim
        )));
    }
    let mut data = Vec::with_capacity(v.data.len());
    for i in 0..v.n_points() {
        data.extend(spec.apply(index, v.row(i)).iter());
    }
    Ok(PointCloud { dim: v.dim, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::random_molecule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_coord_diff(a: &MoleculeState, b: &MoleculeState) -> f64 {
        a.coords
            .iter()
            .flatten()
            .zip(b.coords.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_leaves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_molecule(7, &mut rng);
        assert_eq!(act(&GroupElement::identity(7), &z).unwrap(), z);
    }

    #[test]
    fn inverse_undoes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_molecule(9, &mut rng);
        let mut g = haar_sample(9, &mut rng);
        g.trans = Vector3::new(0.3, -1.0, 2.0);
        let back = act(&g.inverse(), &act(&g, &z).unwrap()).unwrap();
        assert!(max_coord_diff(&back, &z) < 1e-10);
        assert_eq!(back.atom_types, z.atom_types);
        assert_eq!(back.bonds, z.bonds);
    }

    #[test]
    fn swap_two_atoms() {
        let mut z = MoleculeState::from_atoms(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![6, 8]).unwrap();
        z.set_bond(0, 1, 2);
        let out = act(&GroupElement::from_perm(vec![1, 0]), &z).unwrap();
        assert_eq!(out.coords, vec![[1.0, 0.0, 0.0], [0.0; 3]]);
        assert_eq!(out.atom_types, vec![8, 6]);
        assert_eq!(out.bond(0, 1), 2);
        assert_eq!(out.bond(1, 0), 2);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let z = MoleculeState::from_atoms(vec![[0.0; 3]; 3], vec![1; 3]).unwrap();
        assert!(act(&GroupElement::identity(2), &z).is_err());
    }

    #[test]
    fn composition_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let z = random_molecule(8, &mut rng);
            let mut g = haar_sample(8, &mut rng);
            let mut h = haar_sample(8, &mut rng);
            g.trans = Vector3::new(1.0, 2.0, 3.0);
            h.trans = Vector3::new(-0.5, 0.0, 0.25);
            let lhs = act(&g, &act(&h, &z).unwrap()).unwrap();
            let rhs = act(&compose(&g, &h), &z).unwrap();
            assert!(max_coord_diff(&lhs, &rhs) < 1e-9);
            assert_eq!(lhs.atom_types, rhs.atom_types);
            assert_eq!(lhs.bonds, rhs.bonds);
        }
    }

    #[test]
    fn haar_single_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = haar_sample(1, &mut rng);
        assert_eq!(g.perm, vec![0]);
        g.validate().unwrap();
    }

    #[test]
    fn center_examples() {
        let z = MoleculeState::from_atoms(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], vec![6, 6]).unwrap();
        let c = center(&z);
        assert_eq!(c.coords, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let cc = center(&c);
        assert!(max_coord_diff(&c, &cc) < 1e-12);
    }

    #[test]
    fn center_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = random_molecule(6, &mut rng);
        for x in &mut z.coords {
            x[0] += 4.0;
        }
        let g = GroupElement::from_rotation(6, haar_rotation(&mut rng));
        let a = center(&act(&g, &z).unwrap());
        let b = act(&g, &center(&z)).unwrap();
        assert!(max_coord_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn finite_act_examples() {
        let flip = FiniteGroupSpec::sign_flip();
        let v = PointCloud::new(1, vec![2.5]).unwrap();
        assert_eq!(finite_act(&flip, 1, &v).unwrap().data, vec![-2.5]);
        assert!(finite_act(&flip, 2, &v).is_err());

        let c4 = FiniteGroupSpec::cyclic(4);
        let e1 = PointCloud::new(2, vec![1.0, 0.0]).unwrap();
        let out = finite_act(&c4, 1, &e1).unwrap();
        assert!((out.data[0]).abs() < 1e-15 && (out.data[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_groups_validate() {
        FiniteGroupSpec::sign_flip().validate().unwrap();
        FiniteGroupSpec::cyclic(4).validate().unwrap();
        FiniteGroupSpec::s3().validate().unwrap();
        FiniteGroupSpec::trivial(3).validate().unwrap();
        let not_closed = FiniteGroupSpec {
            elements: vec![DMatrix::identity(2, 2), FiniteGroupSpec::cyclic(4).elements[1].clone()],
        };
        assert!(not_closed.validate().is_err());
    }

    #[test]
    fn finite_act_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in [FiniteGroupSpec::cyclic(4), FiniteGroupSpec::s3()] {
            let d = spec.dim();
            for _ in 0..10 {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for k in 0..spec.order() {
                    assert!((spec.apply(k, &v).norm() - n0).abs() < 1e-10);
                }
            }
        }
    }
}
