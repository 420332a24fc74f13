//! Exact sampling of stationary Gaussian sequences and fBm on dyadic grids.
//!
//! Every replicate owns a ChaCha8 stream keyed by `(master_seed, replicate_id)`,
//! so results do not depend on thread count or scheduling.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::numerics::{fft_forward, MeanStderr};
use crate::{Error, Result};

/// Eigenvalues in `[-EIGEN_CLAMP, 0)` are treated as round-off and set to zero.
pub const EIGEN_CLAMP: f64 = 1e-10;
/// Largest size for which Cholesky is attempted when embedding fails.
pub const CHOLESKY_MAX: usize = 2048;
const CHOLESKY_JITTER: f64 = 1e-12;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 32-byte ChaCha key derived from the seed tuple.
pub fn derive_seed(master_seed: u64, replicate_id: u64) -> [u8; 32] {
    let mut s = replicate_id;
    let mixed = splitmix64(&mut s);
    let mut state = master_seed ^ mixed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Uniform and standard normal draws from one replicate stream.
///
/// Normals use the Marsaglia polar method; the second value of each accepted
/// pair is cached.
pub struct NormalSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalSource {
    pub fn new(master_seed: u64, replicate_id: u64) -> Self {
        NormalSource {
            rng: ChaCha8Rng::from_seed(derive_seed(master_seed, replicate_id)),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Circulant embedding, falling back to Cholesky for small `n` on failure.
    #[default]
    Auto,
    Circulant,
    Cholesky,
}

enum Method {
    Single,
    Circulant { sqrt_eig: Vec<f64> },
    Cholesky { lower: DMatrix<f64> },
}

/// Precomputed factorization for drawing many paths of one `(model, n)`.
pub struct StationarySampler {
    model: CovarianceModel,
    n: usize,
    method: Method,
    min_eigenvalue: f64,
}

impl StationarySampler {
    pub fn new(model: &CovarianceModel, n: usize, kind: SamplerKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("path length must be ≥ 1".into()));
        }
        let build = |method, min_eigenvalue| StationarySampler {
            model: model.clone(),
            n,
            method,
            min_eigenvalue,
        };
        if n == 1 {
            return Ok(build(Method::Single, 1.0));
        }
        if kind == SamplerKind::Cholesky {
            return Ok(build(cholesky(model, n)?, f64::NAN));
        }
        let eig = circulant_eigenvalues(model, n);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= -EIGEN_CLAMP {
            let m = eig.len() as f64;
            let sqrt_eig = eig.iter().map(|&l| (l.max(0.0) / m).sqrt()).collect();
            return Ok(build(Method::Circulant { sqrt_eig }, min));
        }
        if kind == SamplerKind::Auto && n <= CHOLESKY_MAX {
            if let Ok(method) = cholesky(model, n) {
                return Ok(build(method, min));
            }
        }
        Err(Error::EmbeddingFailure { min_eigenvalue: min })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    /// Smallest circulant eigenvalue seen during setup (NaN for forced Cholesky).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    /// Fills `out` (length `n`) with one draw.
    pub fn sample_with(&self, src: &mut NormalSource, out: &mut [f64]) {
        assert_eq!(out.len(), self.n);
        match &self.method {
            Method::Single => out[0] = src.normal(),
            Method::Circulant { sqrt_eig } => {
                let mut w: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re = src.normal();
                        let im = src.normal();
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft_forward(w.len()).process(&mut w);
                for (o, z) in out.iter_mut().zip(&w) {
                    *o = z.re;
                }
            }
            Method::Cholesky { lower } => {
                let z: Vec<f64> = (0..self.n).map(|_| src.normal()).collect();
                for i in 0..self.n {
                    let row = lower.row(i);
                    out[i] = (0..=i).map(|j| row[j] * z[j]).sum();
                }
            }
        }
    }

    pub fn sample(&self, master_seed: u64, replicate_id: u64) -> GaussianPath {
        let mut src = NormalSource::new(master_seed, replicate_id);
        let mut values = vec![0.0; self.n];
        self.sample_with(&mut src, &mut values);
        GaussianPath {
            model: self.model.clone(),
            n: self.n,
            values,
            master_seed,
            replicate_id,
        }
    }
}

/// Real eigenvalues of the size `2(n-1)` circulant embedding.
pub fn circulant_eigenvalues(model: &CovarianceModel, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let m = 2 * (n - 1);
    let rho = model.rho_table(n);
    let mut c = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        c[k].re = rho[k];
    }
    for k in 1..n - 1 {
        c[m - k].re = rho[k];
    }
    fft_forward(m).process(&mut c);
    c.iter().map(|z| z.re).collect()
}

fn cholesky(model: &CovarianceModel, n: usize) -> Result<Method> {
    let rho = model.rho_table(n);
    let cov = DMatrix::from_fn(n, n, |i, j| rho[i.abs_diff(j)]);
    if let Some(c) = cov.clone().cholesky() {
        return Ok(Method::Cholesky { lower: c.l() });
    }
    let jittered = cov + DMatrix::identity(n, n) * CHOLESKY_JITTER;
    match jittered.cholesky() {
        Some(c) => Ok(Method::Cholesky { lower: c.l() }),
        None => {
            let min = nalgebra::SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| rho[i.abs_diff(j)]))
                .eigenvalues
                .min();
            Err(Error::EmbeddingFailure { min_eigenvalue: min })
        }
    }
}

/// One realization `X_1..X_n` together with its seed provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub model: CovarianceModel,
    pub n: usize,
    pub values: Vec<f64>,
    pub master_seed: u64,
    pub replicate_id: u64,
}

pub fn sample_stationary(
    model: &CovarianceModel,
    n: usize,
    master_seed: u64,
    replicate_id: u64,
) -> Result<GaussianPath> {
    Ok(StationarySampler::new(model, n, SamplerKind::Auto)?.sample(master_seed, replicate_id))
}

const DUMP_MAGIC: &[u8; 8] = b"ASCLTPTH";
const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    model: CovarianceModel,
    n: usize,
    master_seed: u64,
    replicate_id: u64,
}

impl GaussianPath {
    /// Binary dump: a 32-byte prefix (magic, version, JSON header length, n,
    /// reserved), the JSON header, then `n` little-endian `f64` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&DumpHeader {
            model: self.model.clone(),
            n: self.n,
            master_seed: self.master_seed,
            replicate_id: self.replicate_id,
        })?;
        let mut prefix = [0u8; 32];
        prefix[..8].copy_from_slice(DUMP_MAGIC);
        prefix[8..12].copy_from_slice(&DUMP_VERSION.to_le_bytes());
        prefix[12..20].copy_from_slice(&(header.len() as u64).to_le_bytes());
        prefix[20..28].copy_from_slice(&(self.n as u64).to_le_bytes());
        w.write_all(&prefix)?;
        w.write_all(&header)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut prefix = [0u8; 32];
        r.read_exact(&mut prefix)?;
        if &prefix[..8] != DUMP_MAGIC {
            return Err(Error::InvalidArgument("not a path dump (bad magic)".into()));
        }
        let version = u32::from_le_bytes(prefix[8..12].try_into().unwrap());
        if version != DUMP_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported dump version {version}")));
        }
        let hlen = u64::from_le_bytes(prefix[12..20].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(prefix[20..28].try_into().unwrap()) as usize;
        let mut header = vec![0u8; hlen];
        r.read_exact(&mut header)?;
        let header: DumpHeader = serde_json::from_slice(&header)?;
        if header.n != n {
            return Err(Error::InvalidArgument("header length mismatch".into()));
        }
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(GaussianPath {
            model: header.model,
            n,
            values,
            master_seed: header.master_seed,
            replicate_id: header.replicate_id,
        })
    }

    /// One value per line, shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for v in &self.values {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }
}

/// Estimate of `E[X_1 X_{1+r}]` across replicates. Each replicate contributes
/// the average of `X_k X_{k+r}` over its path; the standard error comes from
/// the spread of those per-replicate averages.
pub fn empirical_autocovariance(paths: &[GaussianPath], r: i64) -> Result<MeanStderr> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let n = paths[0].n;
    let d = r.unsigned_abs() as usize;
    if d >= n {
        return Err(Error::InvalidArgument(format!("lag {r} not below path length {n}")));
    }
    if paths.iter().any(|p| p.n != n || p.model != paths[0].model) {
        return Err(Error::InvalidArgument("paths must share model and length".into()));
    }
    let per: Vec<f64> = paths
        .iter()
        .map(|p| {
            let v = &p.values;
            (0..n - d).map(|k| v[k] * v[k + d]).sum::<f64>() / (n - d) as f64
        })
        .collect();
    Ok(MeanStderr::from_samples(&per))
}

/// Fractional Brownian motion on the grid `k/N`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmGrid {
    pub hurst: f64,
    pub n_fine: usize,
    /// `B^H_{k/N}` for `k = 0..=N`.
    pub values: Vec<f64>,
    pub master_seed: u64,
    pub replicate_id: u64,
}

pub const MAX_GRID_LEVEL: u32 = 24;

pub fn sample_fbm_grid(hurst: f64, n_fine: usize, master_seed: u64, replicate_id: u64) -> Result<FbmGrid> {
    let model = CovarianceModel::fgn(hurst)?;
    let sampler = fbm_sampler(&model, n_fine)?;
    Ok(fbm_grid_from(&sampler, hurst, master_seed, replicate_id))
}

/// Sampler for the finest-scale increments of an [`FbmGrid`].
pub fn fbm_sampler(model: &CovarianceModel, n_fine: usize) -> Result<StationarySampler> {
    if !n_fine.is_power_of_two() || n_fine.trailing_zeros() > MAX_GRID_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "grid size must be 2^J with J ≤ {MAX_GRID_LEVEL}, got {n_fine}"
        )));
    }
    StationarySampler::new(model, n_fine, SamplerKind::Auto)
}

pub fn fbm_grid_from(sampler: &StationarySampler, hurst: f64, master_seed: u64, replicate_id: u64) -> FbmGrid {
    let n_fine = sampler.n();
    let path = sampler.sample(master_seed, replicate_id);
    let scale = (n_fine as f64).powf(-hurst);
    let mut values = Vec::with_capacity(n_fine + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for x in &path.values {
        acc += x * scale;
        values.push(acc);
    }
    FbmGrid {
        hurst,
        n_fine,
        values,
        master_seed,
        replicate_id,
    }
}

impl FbmGrid {
    /// `B^H_{(k+1)/n} - B^H_{k/n}` for `k = 0..n`, as block sums of the finest
    /// increments.
    pub fn coarse_increments(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 || self.n_fine % n != 0 {
            return Err(Error::InvalidArgument(format!(
                "level {n} does not divide grid size {}",
                self.n_fine
            )));
        }
        let block = self.n_fine / n;
        Ok((0..n)
            .map(|k| {
                (k * block..(k + 1) * block)
                    .map(|j| self.values[j + 1] - self.values[j])
                    .sum()
            })
            .collect())
    }

    /// Coarse increments rescaled by `n^H`; an fGn(H) sample of length `n`.
    pub fn unit_increments(&self, n: usize) -> Result<Vec<f64>> {
        let s = (n as f64).powf(self.hurst);
        Ok(self.coarse_increments(n)?.into_iter().map(|x| x * s).collect())
    }
}

/// Runs `f` for each replicate id in parallel on the current rayon pool and
/// returns the results in replicate order.
pub fn ensemble_map<T, F>(replicates: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..replicates as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
        let mut a = NormalSource::new(7, 0);
        let mut b = NormalSource::new(7, 0);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn polar_normals_have_unit_variance() {
        let mut src = NormalSource::new(42, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| src.normal()).collect();
        let m = MeanStderr::from_samples(&xs);
        assert!(m.z_score(0.0).abs() < 4.0);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(MeanStderr::from_samples(&sq).z_score(1.0).abs() < 4.0);
    }

    #[test]
    fn single_point_and_small_paths() {
        let p = sample_stationary(&CovarianceModel::fgn(0.7).unwrap(), 1, 3, 0).unwrap();
        assert_eq!(p.values.len(), 1);
        let p = sample_stationary(&CovarianceModel::fgn(0.7).unwrap(), 2, 3, 0).unwrap();
        assert!(p.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_psd_table_is_rejected() {
        let m = CovarianceModel::table(&[(0, 1.0), (1, 0.9), (2, -0.9)]).unwrap();
        assert!(matches!(
            sample_stationary(&m, 64, 1, 0),
            Err(Error::EmbeddingFailure { .. })
        ));
    }

    #[test]
    fn binary_dump_round_trip() {
        let p = sample_stationary(&CovarianceModel::fgn(0.3).unwrap(), 17, 9, 4).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"ASCLTPTH");
        let back = GaussianPath::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn grid_starts_at_zero_and_aggregates() {
        let g = sample_fbm_grid(0.7, 256, 5, 1).unwrap();
        assert_eq!(g.values[0], 0.0);
        let c = g.coarse_increments(16).unwrap();
        for (k, x) in c.iter().enumerate() {
            let direct = g.values[(k + 1) * 16] - g.values[k * 16];
            assert!((x - direct).abs() < 1e-12);
        }
        assert!(g.coarse_increments(3).is_err());
        assert!(sample_fbm_grid(0.7, 100, 5, 1).is_err());
    }
}
