//! Tangent-space estimation and tangent-space-projected (tsp) explanations.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::SymmetricRowMap;
use crate::error::{Error, Result};
use crate::explain::{ExplanationMap, MapNormalization, Method};
use crate::linalg::{orthonormalize, svd, symmetric_top_eigen};
use crate::models::AutoencoderModel;
use crate::tensor::{dot, matmul_flags, Tensor};

/// Orthogonal projector `P = Σ qᵢqᵢᵀ` onto a `d`-dimensional subspace of ℝᴰ,
/// stored by its orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// `d` unit vectors of length `D`.
    basis: Vec<Vec<f64>>,
    dim: usize,
}

impl Projector {
    /// Orthonormalizes the given spanning vectors; fails if they are dependent.
    pub fn from_basis(vectors: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument("basis vectors must have the ambient dimension".into()));
        }
        let requested = vectors.len();
        let mut vectors = vectors;
        let achieved = orthonormalize(&mut vectors, 1e-8);
        if achieved < requested {
            return Err(Error::RankDeficient { requested, achieved });
        }
        Ok(Self { basis: vectors, dim })
    }

    pub fn identity(dim: usize) -> Self {
        let basis = (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e
            })
            .collect();
        Self { basis, dim }
    }

    pub fn zero(dim: usize) -> Self {
        Self { basis: Vec::new(), dim }
    }

    /// Projector onto the orthogonal complement of the given normals, i.e.
    /// the tangent space of the flat manifold `{x : ŵᵢᵀx = bᵢ}`.
    pub fn complement_of(normals: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut vectors: Vec<Vec<f64>> = normals.to_vec();
        let m = normals.len();
        let rank = orthonormalize(&mut vectors, 1e-10);
        if rank < m {
            return Err(Error::RankDeficient {
                requested: m,
                achieved: rank,
            });
        }
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            vectors.push(e);
        }
        orthonormalize(&mut vectors, 1e-8);
        let basis: Vec<Vec<f64>> = vectors
            .into_iter()
            .skip(m)
            .filter(|v| v.iter().any(|&x| x != 0.0))
            .collect();
        debug_assert_eq!(basis.len(), dim - m);
        Ok(Self { basis, dim })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// `P h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(h, &mut out);
        out
    }

    fn apply_into(&self, h: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in &self.basis {
            let c = dot(q, h);
            for (o, qi) in out.iter_mut().zip(q) {
                *o += c * qi;
            }
        }
    }

    /// Generalized projector `Gᵢⱼ = (sᵢ/sⱼ) Pᵢⱼ`, with column `j` zeroed
    /// where `sⱼ = 0`, applied to `h`. For `h = s ⊙ v` this is `s ⊙ P v`.
    pub fn apply_generalized(&self, h: &[f64], scale: &[f64]) -> Vec<f64> {
        let ratio: Vec<f64> = h
            .iter()
            .zip(scale)
            .map(|(&hj, &sj)| if sj == 0.0 { 0.0 } else { hj / sj })
            .collect();
        let p = self.apply(&ratio);
        p.iter().zip(scale).map(|(v, s)| v * s).collect()
    }

    /// Dense `D x D` matrix.
    pub fn dense(&self) -> Tensor {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for q in &self.basis {
            for i in 0..d {
                if q[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += q[i] * q[j];
                }
            }
        }
        Tensor::from_parts(vec![d, d], out)
    }

    /// Dense generalized projector for the scale vector `s`.
    pub fn dense_generalized(&self, scale: &[f64]) -> Tensor {
        let mut p = self.dense();
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let v = if scale[j] == 0.0 { 0.0 } else { p.get(i, j) * scale[i] / scale[j] };
                p.set(i, j, v);
            }
        }
        p
    }

    /// Largest deviations of the dense matrix from the projector identities.
    pub fn defects(&self) -> ProjectorDefects {
        let m = self.dense();
        let d = self.dim;
        let mut symmetry: f64 = 0.0;
        for i in 0..d {
            for j in 0..i {
                symmetry = symmetry.max((m.get(i, j) - m.get(j, i)).abs());
            }
        }
        let idempotence = m.matmul(&m).map(|mm| mm.max_abs_diff(&m)).unwrap_or(f64::INFINITY);
        let trace = ((0..d).map(|i| m.get(i, i)).sum::<f64>() - self.rank() as f64).abs();
        let (values, _) = symmetric_top_eigen(m.data(), d, d);
        let eigenvalue = values
            .iter()
            .map(|v| v.abs().min((v - 1.0).abs()))
            .fold(0.0, f64::max);
        let mut orthonormality: f64 = 0.0;
        for (a, qa) in self.basis.iter().enumerate() {
            for (b, qb) in self.basis.iter().enumerate() {
                let want = if a == b { 1.0 } else { 0.0 };
                orthonormality = orthonormality.max((dot(qa, qb) - want).abs());
            }
        }
        ProjectorDefects {
            symmetry,
            idempotence,
            trace,
            eigenvalue,
            orthonormality,
        }
    }
}

/// See [`Projector::defects`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorDefects {
    pub symmetry: f64,
    /// `max |P·P − P|`.
    pub idempotence: f64,
    /// `|tr P − d|`.
    pub trace: f64,
    /// Largest distance of an eigenvalue from {0, 1}.
    pub eigenvalue: f64,
    /// `max |QᵀQ − I|` of the stored basis.
    pub orthonormality: f64,
}

impl ProjectorDefects {
    pub const SYMMETRY_TOL: f64 = 1e-12;
    pub const IDEMPOTENCE_TOL: f64 = 1e-8;
    pub const TRACE_TOL: f64 = 1e-6;
    pub const EIGENVALUE_TOL: f64 = 1e-6;
    pub const ORTHONORMALITY_TOL: f64 = 1e-10;

    pub fn within_tolerance(&self) -> bool {
        self.symmetry <= Self::SYMMETRY_TOL
            && self.idempotence <= Self::IDEMPOTENCE_TOL
            && self.trace <= Self::TRACE_TOL
            && self.eigenvalue <= Self::EIGENVALUE_TOL
            && self.orthonormality <= Self::ORTHONORMALITY_TOL
    }
}

/// Per-row projectors as a tape operation (see [`SymmetricRowMap`]).
#[derive(Clone)]
pub struct RowProjectors {
    projectors: Arc<Vec<Projector>>,
    rows: Vec<usize>,
}

impl RowProjectors {
    /// Row `r` of the batch uses `projectors[rows[r]]`.
    pub fn new(projectors: Arc<Vec<Projector>>, rows: Vec<usize>) -> Result<Self> {
        let dim = projectors.first().map(|p| p.dim()).unwrap_or(0);
        if projectors.iter().any(|p| p.dim() != dim) || rows.iter().any(|&r| r >= projectors.len()) {
            return Err(Error::InvalidArgument("inconsistent projector set".into()));
        }
        Ok(Self { projectors, rows })
    }
}

impl SymmetricRowMap for RowProjectors {
    fn dim(&self) -> usize {
        self.projectors.first().map(|p| p.dim()).unwrap_or(0)
    }

    fn rows(&self) -> usize {
        self.rows.len()
    }

    fn apply_row(&self, row: usize, input: &[f64], out: &mut [f64]) {
        self.projectors[self.rows[row]].apply_into(input, out);
    }
}

/// Indices of the `k` nearest rows of `train` for every row of `queries`,
/// ordered by distance then index. With `exclude_self`, query `i` is train
/// row `i` and is skipped.
pub fn nearest_neighbors(queries: &Tensor, train: &Tensor, k: usize, exclude_self: bool) -> Result<Vec<Vec<usize>>> {
    let n = train.rows();
    let avail = if exclude_self { n.saturating_sub(1) } else { n };
    if k == 0 || k > avail {
        return Err(Error::InvalidArgument(format!("need {k} neighbours, only {avail} available")));
    }
    if queries.cols() != train.cols() {
        return Err(Error::ShapeMismatch {
            expected: vec![train.cols()],
            found: vec![queries.cols()],
        });
    }
    let tnorm: Vec<f64> = (0..n).map(|i| dot(train.row(i), train.row(i))).collect();
    let mut out = Vec::with_capacity(queries.rows());
    let chunk = 256;
    for start in (0..queries.rows()).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(queries.rows())).collect();
        let q = queries.gather_rows(&idx);
        let cross = matmul_flags(&q, train, false, true)?;
        for (r, &qi) in idx.iter().enumerate() {
            let qn = dot(q.row(r), q.row(r));
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| !(exclude_self && j == qi))
                .map(|j| (qn + tnorm[j] - 2.0 * cross.get(r, j), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            out.push(cand.into_iter().map(|(_, j)| j).collect());
        }
    }
    Ok(out)
}

/// Spectrum of the centered cloud `{x, neighbours}`: singular values
/// (descending) with right singular vectors, plus the centered rows.
struct CloudSpectrum {
    sigma: Vec<f64>,
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
    centered: Tensor,
}

fn cloud_spectrum(x: &[f64], train: &Tensor, neighbours: &[usize], count: usize) -> Result<CloudSpectrum> {
    let d = x.len();
    let m = neighbours.len() + 1;
    let mut rows = Vec::with_capacity(m * d);
    rows.extend_from_slice(x);
    for &j in neighbours {
        rows.extend_from_slice(train.row(j));
    }
    let mut mean = vec![0.0; d];
    for r in rows.chunks(d) {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    for r in rows.chunks_mut(d) {
        for (v, mu) in r.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let centered = Tensor::from_parts(vec![m, d], rows);
    // The Gram matrix C Cᵀ is only (k+1) x (k+1); its eigenvectors are the
    // left singular vectors of C.
    let gram = matmul_flags(&centered, &centered, false, true)?;
    let (values, left) = symmetric_top_eigen(gram.data(), m, count.min(m));
    let sigma: Vec<f64> = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let right = sigma
        .iter()
        .zip(&left)
        .map(|(&s, u)| {
            if s == 0.0 {
                return vec![0.0; d];
            }
            let mut v = vec![0.0; d];
            for (r, &ur) in u.iter().enumerate() {
                if ur == 0.0 {
                    continue;
                }
                for (vi, ci) in v.iter_mut().zip(centered.row(r)) {
                    *vi += ur * ci;
                }
            }
            v.iter_mut().for_each(|t| *t /= s);
            v
        })
        .collect();
    Ok(CloudSpectrum {
        sigma,
        left,
        right,
        centered,
    })
}

/// Rank threshold relative to the largest singular value. The Gram route
/// resolves singular values only to about √ε of the largest one.
const RANK_TOL: f64 = 1e-6;

/// Hyperplane method: top-`d` principal directions of the centered cloud of
/// `x` and its `k` nearest training points.
pub fn hyperplane_tangent_from(x: &[f64], train: &Tensor, neighbours: &[usize], d: usize) -> Result<Projector> {
    let dim = x.len();
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!("tangent dimension {d} outside 1..={dim}")));
    }
    if d == dim {
        return Ok(Projector::identity(dim));
    }
    let spec = cloud_spectrum(x, train, neighbours, d)?;
    let top = spec.sigma.first().copied().unwrap_or(0.0);
    let achieved = spec.sigma.iter().filter(|&&s| top > 0.0 && s > RANK_TOL * top).count();
    if achieved < d {
        return Err(Error::RankDeficient { requested: d, achieved });
    }
    let mut basis = spec.right;
    let rank = orthonormalize(&mut basis, 1e-6);
    if rank < d {
        return Err(Error::RankDeficient {
            requested: d,
            achieved: rank,
        });
    }
    Ok(Projector { basis, dim })
}

pub fn hyperplane_tangent(x: &[f64], train: &Tensor, k: usize, d: usize) -> Result<Projector> {
    if k < d {
        return Err(Error::InvalidArgument(format!("k = {k} must be at least d = {d}")));
    }
    let q = Tensor::row_vector(x.to_vec())?;
    let nb = nearest_neighbors(&q, train, k, false)?;
    hyperplane_tangent_from(x, train, &nb[0], d)
}

/// Hyperplane projectors for many points at once. With `exclude_self`, query
/// `i` is training row `i` and is not its own neighbour.
pub fn hyperplane_projectors(
    queries: &Tensor,
    train: &Tensor,
    k: usize,
    d: usize,
    exclude_self: bool,
) -> Result<Vec<Projector>> {
    if k < d {
        return Err(Error::InvalidArgument(format!("k = {k} must be at least d = {d}")));
    }
    let nb = nearest_neighbors(queries, train, k, exclude_self)?;
    nb.iter()
        .enumerate()
        .map(|(i, n)| hyperplane_tangent_from(queries.row(i), train, n, d))
        .collect()
}

/// Summed residual norms `Σⱼ ‖(I − P_d)(xⱼ − mean)‖` over the cloud for
/// `d = 1..=max_d`.
pub fn reconstruction_sweep(x: &[f64], train: &Tensor, k: usize, max_d: usize) -> Result<Vec<f64>> {
    let q = Tensor::row_vector(x.to_vec())?;
    let nb = nearest_neighbors(&q, train, k, false)?;
    let spec = cloud_spectrum(x, train, &nb[0], max_d)?;
    let m = spec.centered.rows();
    // residual_j² = ‖c_j‖² − Σ_{i≤d} σᵢ² u_{ij}²
    let mut resid: Vec<f64> = (0..m).map(|r| dot(spec.centered.row(r), spec.centered.row(r))).collect();
    let mut out = Vec::with_capacity(max_d);
    for d in 0..max_d {
        if let (Some(&s), Some(u)) = (spec.sigma.get(d), spec.left.get(d)) {
            for (r, v) in resid.iter_mut().enumerate() {
                *v -= s * s * u[r] * u[r];
            }
        }
        out.push(resid.iter().map(|v| v.max(0.0).sqrt()).sum());
    }
    // Later terms can only remove variance; enforce monotonicity against
    // round-off in the subtraction.
    for i in 1..out.len() {
        if out[i] > out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    Ok(out)
}

/// Autoencoder method: span of the top-`d` left singular vectors of the
/// decoder Jacobian at `E(x)`.
pub fn decoder_tangent(model: &AutoencoderModel, x: &[f64], d: usize) -> Result<Projector> {
    if d == 0 || d > model.latent_dim() {
        return Err(Error::InvalidArgument(format!(
            "tangent dimension {d} outside 1..={}",
            model.latent_dim()
        )));
    }
    let z = model.encode(&Tensor::row_vector(x.to_vec())?)?;
    let jac = model.decoder.jacobian(z.data())?;
    let dec = svd(&jac);
    let top = dec.s[0];
    let achieved = dec.s.iter().filter(|&&s| top > 0.0 && s > 1e-10 * top).count();
    if achieved < d {
        return Err(Error::RankDeficient { requested: d, achieved });
    }
    let basis = (0..d).map(|j| (0..jac.rows()).map(|i| dec.u.get(i, j)).collect()).collect();
    Projector::from_basis(basis, x.len())
}

/// Which projection a tsp explanation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TspVariant {
    /// `P h`.
    Standard,
    /// Generalized projector with the input (x⊙Grad) or the input minus the
    /// baseline (IntGrad) as scale.
    Generalized,
}

/// Default variant per method: generalized for x⊙Grad and IntGrad, standard
/// for gradient and LRP.
pub fn default_variant(method: Method) -> TspVariant {
    match method {
        Method::Xgrad | Method::Intgrad => TspVariant::Generalized,
        Method::Gradient | Method::LrpEps | Method::LrpZplus => TspVariant::Standard,
    }
}

/// Projects a raw explanation map. `x` is the explained input and `baseline`
/// the IntGrad baseline (zero when `None`); they are only read by the
/// generalized variant.
///
/// For IntGrad the data point's projector is applied to the mean path
/// gradient, `ĥ = (x − x̄) ⊙ P·mean∇g`, which is what the generalized projector
/// scaled by `x − x̄` computes from the map.
pub fn tsp_explanation(
    map: &ExplanationMap,
    projector: &Projector,
    x: &[f64],
    baseline: Option<&[f64]>,
    variant: TspVariant,
) -> Result<ExplanationMap> {
    if map.normalization() != MapNormalization::Raw {
        return Err(Error::Contract("project raw maps and normalize afterwards".into()));
    }
    if map.values().len() != projector.dim() || x.len() != projector.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![projector.dim()],
            found: vec![map.values().len(), x.len()],
        });
    }
    let values = match variant {
        TspVariant::Standard => projector.apply(map.values()),
        TspVariant::Generalized => {
            let scale: Vec<f64> = match (map.method(), baseline) {
                (Method::Intgrad, Some(b)) => x.iter().zip(b).map(|(a, c)| a - c).collect(),
                _ => x.to_vec(),
            };
            projector.apply_generalized(map.values(), &scale)
        }
    };
    let mut out = map.with_values(values).into_projected();
    if out.shape() != map.shape() {
        out = out.reshape(map.shape().to_vec())?;
    }
    Ok(out)
}

/// Row-wise tsp projection of a batch of raw maps.
pub fn project_rows(
    maps: &Tensor,
    projectors: &[Projector],
    method: Method,
    x: &Tensor,
    baseline: Option<&[f64]>,
    variant: TspVariant,
) -> Result<Tensor> {
    if projectors.len() != maps.rows() || x.rows() != maps.rows() {
        return Err(Error::LengthMismatch {
            shape: vec![maps.rows()],
            len: projectors.len(),
        });
    }
    let mut out = Vec::with_capacity(maps.len());
    for (i, p) in projectors.iter().enumerate() {
        let m = ExplanationMap::new(maps.row(i).to_vec(), vec![maps.cols()], method, 0)?;
        out.extend(tsp_explanation(&m, p, x.row(i), baseline, variant)?.values().iter().copied());
    }
    Tensor::new(vec![maps.rows(), maps.cols()], out)
}

const PROJ_MAGIC: &[u8; 8] = b"FWPROJ01";

/// Cache layout (little-endian): `FWPROJ01`, u32 D, u32 d, u32 entry count,
/// then per entry u32 sample index and the `d x D` basis (one basis vector
/// per row) as f32. Loading re-orthonormalizes in f64.
pub fn save_projectors(entries: &[(usize, Projector)], path: &Path) -> Result<()> {
    let (dim, rank) = match entries.first() {
        Some((_, p)) => (p.dim(), p.rank()),
        None => (0, 0),
    };
    if entries.iter().any(|(_, p)| p.dim() != dim || p.rank() != rank) {
        return Err(Error::InvalidArgument("projectors in one cache must share D and d".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PROJ_MAGIC)?;
    for v in [dim as u32, rank as u32, entries.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (idx, p) in entries {
        w.write_all(&(*idx as u32).to_le_bytes())?;
        for q in p.basis() {
            for &v in q {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_projectors(path: &Path) -> Result<Vec<(usize, Projector)>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != PROJ_MAGIC {
        return Err(Error::CorruptHeader("missing FWPROJ01 magic".into()));
    }
    let u = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
    let (dim, rank, count) = (u(8), u(12), u(16));
    let entry = 4 + 4 * dim * rank;
    if bytes.len() != 20 + count * entry {
        return Err(Error::CorruptHeader(format!(
            "{count} entries of D={dim}, d={rank} need {} bytes, found {}",
            20 + count * entry,
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for e in 0..count {
        let at = 20 + e * entry;
        let idx = u(at);
        let basis = (0..rank)
            .map(|r| {
                (0..dim)
                    .map(|c| {
                        let p = at + 4 + 4 * (r * dim + c);
                        f32::from_le_bytes([bytes[p], bytes[p + 1], bytes[p + 2], bytes[p + 3]]) as f64
                    })
                    .collect()
            })
            .collect();
        out.push((idx, Projector::from_basis(basis, dim)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    pub(crate) fn check_algebra(p: &Projector) {
        let defects = p.defects();
        assert!(defects.within_tolerance(), "{defects:?}");
    }

    fn plane_points(rng: &mut RngState, n: usize) -> (Tensor, Vec<f64>, Vec<f64>, Vec<f64>) {
        // plane spanned by a, b through the origin in ℝ³ with normal n
        let a = vec![1.0, 0.0, 1.0];
        let b = vec![0.0, 1.0, -1.0];
        let normal = vec![-1.0, 1.0, 1.0];
        let mut data = Vec::new();
        for _ in 0..n {
            let (s, t) = (rng.normal(0.0, 1.0), rng.normal(0.0, 1.0));
            data.extend((0..3).map(|i| s * a[i] + t * b[i]));
        }
        (Tensor::matrix(n, 3, data).unwrap(), a, b, normal)
    }

    #[test]
    fn hyperplane_recovers_exact_plane() {
        let mut rng = RngState::new(1);
        let (train, a, b, normal) = plane_points(&mut rng, 50);
        let x = [0.5, 0.25, 0.25];
        let p = hyperplane_tangent(&x, &train, 10, 2).unwrap();
        check_algebra(&p);
        for v in [&a, &b] {
            let pv = p.apply(v);
            for i in 0..3 {
                assert!((pv[i] - v[i]).abs() <= 1e-10);
            }
        }
        assert!(p.apply(&normal).iter().all(|v| v.abs() <= 1e-10));
        let full = hyperplane_tangent(&x, &train, 10, 3).unwrap();
        assert_eq!(full.dense(), Tensor::identity(3));
    }

    #[test]
    fn degenerate_cloud_reports_rank() {
        let train = Tensor::matrix(5, 3, vec![1.0, 2.0, 3.0].repeat(5)).unwrap();
        match hyperplane_tangent(&[1.0, 2.0, 3.0], &train, 4, 2) {
            Err(Error::RankDeficient { requested: 2, achieved: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_is_monotone() {
        let mut rng = RngState::new(2);
        let train = Tensor::matrix(60, 8, (0..480).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
        let s = reconstruction_sweep(&x, &train, 20, 8).unwrap();
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
        assert!(s[7] < 1e-6);
    }

    #[test]
    fn neighbours_are_ordered_and_exclude_self() {
        let train = Tensor::matrix(4, 1, vec![0.0, 1.0, 3.0, 1.0]).unwrap();
        let nb = nearest_neighbors(&train, &train, 2, true).unwrap();
        assert_eq!(nb[0], vec![1, 3]);
        assert_eq!(nb[1], vec![3, 0]);
        let q = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        assert_eq!(nearest_neighbors(&q, &train, 3, false).unwrap()[0], vec![1, 2, 3]);
    }

    #[test]
    fn complement_and_generalized_projector() {
        let p = Projector::complement_of(&[vec![0.0, 0.4, -1.0]], 3).unwrap();
        check_algebra(&p);
        assert_eq!(p.rank(), 2);
        assert!(p.apply(&[0.0, 0.4, -1.0]).iter().all(|v| v.abs() < 1e-15));
        let x = [1.0, 0.0, 2.0];
        let g = p.dense_generalized(&x);
        for i in 0..3 {
            assert_eq!(g.get(i, 1), 0.0);
        }
        let h = [0.3, 0.7, -0.2];
        let via_dense: Vec<f64> = (0..3).map(|i| dot(g.row(i), &h)).collect();
        let via_apply = p.apply_generalized(&h, &x);
        for i in 0..3 {
            assert!((via_dense[i] - via_apply[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tsp_leaves_tangent_maps_unchanged_and_never_grows() {
        let mut rng = RngState::new(3);
        let (train, ..) = plane_points(&mut rng, 30);
        let x = [0.2, 0.1, 0.1];
        let p = hyperplane_tangent(&x, &train, 8, 2).unwrap();
        let tangent = p.apply(&[0.3, -1.0, 2.0]);
        let map = ExplanationMap::new(tangent.clone(), vec![3], Method::Gradient, 0).unwrap();
        let out = tsp_explanation(&map, &p, &x, None, TspVariant::Standard).unwrap();
        for i in 0..3 {
            assert!((out.values()[i] - tangent[i]).abs() < 1e-12);
        }
        assert!(out.projected());
        for _ in 0..100 {
            let h: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 1.0)).collect();
            assert!(dot(&p.apply(&h), &p.apply(&h)) <= dot(&h, &h) + 1e-12);
        }
        let norm = crate::explain::normalize_map(&map, crate::explain::Convention::Image).unwrap();
        assert!(tsp_explanation(&norm, &p, &x, None, TspVariant::Standard).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let mut rng = RngState::new(4);
        let train = Tensor::matrix(40, 6, (0..240).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let ps = hyperplane_projectors(&train.gather_rows(&[0, 1, 2]), &train, 10, 3, true).unwrap();
        let entries: Vec<(usize, Projector)> = ps.into_iter().enumerate().collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_projectors(&entries, &path).unwrap();
        let back = load_projectors(&path).unwrap();
        assert_eq!(back.len(), 3);
        for ((i, a), (j, b)) in entries.iter().zip(&back) {
            assert_eq!(i, j);
            assert!(a.dense().max_abs_diff(&b.dense()) < 1e-6);
            check_algebra(b);
        }
    }
}
